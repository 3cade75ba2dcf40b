//! Event queue, transport and the glue between actors.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::log::{actor_name, EventLog, LogRecord};
use super::message::{Envelope, Payload};
use crate::aggregation::{AggTimer, MisbehaviorProof};
use crate::crypto::{hash, Canonical, Digest256, Encoder, VerifyCache};
use crate::lottery::{Board, Claim, LotteryParams, WinnerAnnouncement};
use crate::overlay::{Kid, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Timer {
    Buy,
    Refresh,
    LookupTimeout { lookup: u32, peer: NodeId },
    Snapshot,
    Epoch(u16),
    Agg(AggTimer),
    ReadBoard,
    Verify,
    Deadline,
    QueryRoots,
    Identify,
}

#[derive(Clone, Debug)]
pub(crate) enum BoardItem {
    Params(LotteryParams),
    PublishedN(u64),
    Announcement(WinnerAnnouncement),
    Claim(Box<Claim>),
    Proof(MisbehaviorProof),
    Abort { best: usize, valid: usize },
}

pub(crate) enum Out {
    Send { to: NodeId, payload: Payload },
    Timer { at: u64, timer: Timer },
    Event { event: String, payload: Option<serde_json::Value>, proof: Option<MisbehaviorProof> },
    Publish(BoardItem),
}

/// Handler context: the clock, the shared signature cache, and the outbox.
pub(crate) struct Io<'a> {
    pub now: u64,
    pub cache: &'a mut VerifyCache,
    pub out: Vec<Out>,
}

impl Io<'_> {
    pub fn send(&mut self, to: NodeId, payload: Payload) {
        self.out.push(Out::Send { to, payload });
    }

    pub fn timer(&mut self, at: u64, timer: Timer) {
        self.out.push(Out::Timer { at, timer });
    }

    pub fn event(&mut self, event: impl Into<String>, payload: Option<serde_json::Value>) {
        self.out.push(Out::Event { event: event.into(), payload, proof: None });
    }
}

/// The append-only broadcast board.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoardState {
    pub params: Option<LotteryParams>,
    pub published_n: Option<u64>,
    pub announcement: Option<WinnerAnnouncement>,
    pub claims: Vec<Claim>,
    pub proofs: Vec<MisbehaviorProof>,
    pub aborted: Option<(usize, usize)>,
}

impl BoardState {
    /// Board in the form the verifier reads; `None` before an announcement.
    pub fn to_board(&self) -> Option<Board> {
        Some(Board {
            params: self.params.clone()?,
            published_n: self.published_n?,
            announcement: self.announcement.clone()?,
            claims: self.claims.clone(),
            proofs: self.proofs.clone(),
        })
    }

    pub(crate) fn apply(&mut self, item: &BoardItem) {
        match item {
            BoardItem::Params(p) => self.params = Some(p.clone()),
            BoardItem::PublishedN(n) => self.published_n = Some(*n),
            BoardItem::Announcement(a) => self.announcement = Some(a.clone()),
            BoardItem::Claim(c) => self.claims.push(c.as_ref().clone()),
            BoardItem::Proof(p) => self.proofs.push(p.clone()),
            BoardItem::Abort { best, valid } => self.aborted = Some((*best, *valid)),
        }
    }
}

impl BoardItem {
    pub(crate) fn event(&self) -> &'static str {
        match self {
            BoardItem::Params(_) => "board.params",
            BoardItem::PublishedN(_) => "board.published_n",
            BoardItem::Announcement(_) => "board.announcement",
            BoardItem::Claim(_) => "board.claim",
            BoardItem::Proof(_) => "board.proof",
            BoardItem::Abort { .. } => "board.abort",
        }
    }

    pub(crate) fn digest(&self) -> Digest256 {
        match self {
            BoardItem::Params(p) => p.canonical_digest(),
            BoardItem::PublishedN(n) => hash(&n.to_be_bytes()),
            BoardItem::Announcement(a) => a.canonical_digest(),
            BoardItem::Claim(c) => c.canonical_digest(),
            BoardItem::Proof(p) => p.canonical_digest(),
            BoardItem::Abort { best, valid } => {
                let mut enc = Encoder::tagged("abort");
                enc.u64(*best as u64).u64(*valid as u64);
                hash(&enc.finish())
            }
        }
    }

    pub(crate) fn json(&self) -> serde_json::Value {
        let v = match self {
            BoardItem::Params(p) => serde_json::to_value(p),
            BoardItem::PublishedN(n) => serde_json::to_value(n),
            BoardItem::Announcement(a) => serde_json::to_value(a),
            BoardItem::Claim(c) => serde_json::to_value(c),
            BoardItem::Proof(p) => serde_json::to_value(p),
            BoardItem::Abort { best, valid } => Ok(serde_json::json!({ "best": best, "valid": valid })),
        };
        v.expect("board items serialize")
    }
}

#[derive(Clone, Debug)]
pub(crate) enum EventKind {
    Deliver(Box<Envelope>),
    Timer { actor: NodeId, timer: Timer },
}

#[derive(Debug)]
struct Queued {
    time: u64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

/// Time-ordered queue; ties pop in insertion order.
#[derive(Debug, Default)]
pub(crate) struct EventQueue {
    heap: BinaryHeap<Reverse<Queued>>,
    seq: u64,
    last_time: u64,
}

impl EventQueue {
    pub fn push(&mut self, time: u64, kind: EventKind) {
        self.seq += 1;
        self.heap.push(Reverse(Queued { time, seq: self.seq, kind }));
    }

    pub fn pop(&mut self) -> Option<(u64, EventKind)> {
        let Reverse(q) = self.heap.pop()?;
        debug_assert!(q.time >= self.last_time);
        self.last_time = q.time;
        Some((q.time, q.kind))
    }
}

/// Simulated links: uniform latency and i.i.d. drops from one stream.
pub(crate) struct Network {
    pub rng: ChaCha8Rng,
    pub latency: (u64, u64),
    pub drop_rate: f64,
}

impl Network {
    /// Delivery delay, or `None` when the message is lost.
    pub fn transit(&mut self) -> Option<u64> {
        if self.drop_rate > 0.0 && self.rng.gen_bool(self.drop_rate) {
            return None;
        }
        Some(self.rng.gen_range(self.latency.0..=self.latency.1))
    }
}

/// Per-actor message accounting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Traffic {
    pub msgs_sent: u64,
    pub bytes_sent: u64,
    pub msgs_received: u64,
}

pub(crate) fn log_record(
    log: &mut EventLog,
    time: u64,
    actor: NodeId,
    event: String,
    payload_digest: Digest256,
    proof: Option<MisbehaviorProof>,
    payload: Option<serde_json::Value>,
) {
    log.push(LogRecord { time, actor: actor_name(actor.0), event, payload_digest, proof, payload });
}

/// Sender identity as seen by a receiver after authentication.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Sender {
    pub addr: NodeId,
    pub pk: crate::crypto::PublicKey,
    /// Kid and token when the envelope carried a valid token.
    pub kid: Option<Kid>,
    pub token: Option<crate::crypto::AuthToken>,
}
