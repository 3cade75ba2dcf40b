//! One player's side of the epoch-by-epoch aggregation.
//!
//! The node is a passive state machine. The driver calls [`AggregationNode::start`]
//! at aggregation start, [`AggregationNode::begin_epoch`] at the start of each
//! epoch whose sibling bucket is non-empty, and feeds messages and timers in.
//! Every call appends [`Action`]s to the context.
//!
//! Per merge epoch `d` the node pulls the confirmed container of `S(x, d)`,
//! combines it with its own container of `S̄(x, d)`, lifts the result through
//! every following level whose sibling subtree is empty, and asks peers in
//! `S̄(x, d - 1)` to sign that batch. Peers answer with their own batch and
//! signatures, so requests and replies double as votes. A tally part-way
//! through the epoch triggers correction pulls when the majority differs;
//! the batch is confirmed at the end of the window.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::confirm::{
    confirm, majority_select, required_signers, verify_confirmed, ConfirmContext, ConfirmedContainer, VerifyRules,
};
use super::container::{combine_containers, lift_container, make_leaf_container, AggregateContainer};
use super::signature::{sign_container, ContainerSignature, MisbehaviorProof, SignatureLedger};
use crate::crypto::{hash, AuthToken, Canonical, Digest256, Encoder, KeyPair, PublicKey, VerifyCache};
use crate::overlay::{bucket_depth, Contact, Kid, NodeId, RoutingTable, SubtreeId};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeParams {
    pub bits: u16,
    pub l: u64,
    pub root_extra_sigs: u64,
    pub timeout_ms: u64,
    pub max_pull_attempts: u32,
    pub max_correction_depth: u32,
    /// `(start, end)` of the epoch window for depth `d`, at index `d`.
    pub windows: Vec<(u64, u64)>,
}

impl NodeParams {
    fn rules<'a>(&self, authority: &'a PublicKey) -> VerifyRules<'a> {
        VerifyRules { authority, bits: self.bits, l: self.l, root_extra: self.root_extra_sigs }
    }

    fn required(&self, c: &AggregateContainer) -> usize {
        required_signers(self.l, c.c, c.depth(), self.root_extra_sigs)
    }
}

#[derive(Clone, Debug)]
pub struct Identity {
    pub keys: KeyPair,
    pub token: AuthToken,
    pub kid: Kid,
    pub addr: NodeId,
}

impl Identity {
    pub fn contact(&self) -> Contact {
        Contact { kid: self.kid, pk: self.keys.pk(), token: self.token, addr: self.addr }
    }
}

/// Sender of a message, as authenticated by the transport envelope.
#[derive(Clone, Copy, Debug)]
pub struct Peer {
    pub addr: NodeId,
    pub pk: PublicKey,
    pub kid: Kid,
}

/// Colluding group holding a local majority inside `prefix`.
#[derive(Clone, Debug)]
pub struct Bloc {
    pub members: BTreeSet<PublicKey>,
    pub prefix: SubtreeId,
    /// Member whose container the bloc leaves out.
    pub withheld: Option<PublicKey>,
}

#[derive(Clone, Debug, Default)]
pub enum Behavior {
    #[default]
    Honest,
    /// Serves one leaf version to pullers and votes with another; signs
    /// whatever it is asked to sign.
    Equivocator,
    Colluder(Arc<Bloc>),
}

/// A batch of containers from a merge head up through its lifts, with the
/// sender's signatures and the evidence on the head's children.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub batch: Vec<AggregateContainer>,
    pub sigs: Vec<ContainerSignature>,
    pub evidence: Vec<ContainerSignature>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PullReply {
    Confirmed {
        cc: ConfirmedContainer,
    },
    /// The confirmed children, when the requested container itself is not
    /// confirmed.
    Children {
        children: Vec<ConfirmedContainer>,
    },
    Unavailable,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AggMsg {
    Pull { subtree: SubtreeId, want: Option<Digest256> },
    PullReply { subtree: SubtreeId, reply: PullReply },
    SignRequest { vote: Vote },
    SignReply { vote: Vote },
}

impl Canonical for Vote {
    fn encode(&self, enc: &mut Encoder) {
        enc.list(&self.batch).list(&self.sigs).list(&self.evidence);
    }
}

impl Canonical for AggMsg {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            AggMsg::Pull { subtree, want } => {
                enc.u8(0).nested(subtree);
                match want {
                    Some(h) => enc.digest(h),
                    None => enc.bytes(&[]),
                };
            }
            AggMsg::PullReply { subtree, reply } => {
                enc.u8(1).nested(subtree);
                match reply {
                    PullReply::Confirmed { cc } => enc.u8(0).nested(cc),
                    PullReply::Children { children } => enc.u8(1).list(children),
                    PullReply::Unavailable => enc.u8(2),
                };
            }
            AggMsg::SignRequest { vote } => {
                enc.u8(2).nested(vote);
            }
            AggMsg::SignReply { vote } => {
                enc.u8(3).nested(vote);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Sibling,
    Own,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggTimer {
    PullTimeout { d: u16, seq: u32 },
    SignTimeout { d: u16 },
    Tally { d: u16 },
    Finalize { d: u16 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AggEvent {
    PullTimeout { d: u16, peer: NodeId },
    PullRejected { d: u16, peer: NodeId, reason: String },
    SiblingUnreachable { d: u16 },
    RejectedNonMember { peer: NodeId },
    Equivocation { proof: Box<MisbehaviorProof> },
    CorrectionPull { d: u16, side: Side, want: Digest256 },
    Corrected { d: u16, side: Side, h: Digest256 },
    Divergence { d: u16, own: Digest256, selected: Digest256 },
    Confirmed { depth: u16, h: Digest256, signers: usize },
    Unconfirmed { depth: u16, h: Digest256, reason: String },
}

#[derive(Clone, Debug)]
pub enum Action {
    Send { to: NodeId, msg: AggMsg },
    Timer { at: u64, timer: AggTimer },
    Event(AggEvent),
}

pub struct Ctx<'a> {
    pub now: u64,
    pub cache: &'a mut VerifyCache,
    pub out: Vec<Action>,
}

impl<'a> Ctx<'a> {
    pub fn new(now: u64, cache: &'a mut VerifyCache) -> Self {
        Self { now, cache, out: Vec::new() }
    }

    fn send(&mut self, to: NodeId, msg: AggMsg) {
        self.out.push(Action::Send { to, msg });
    }

    fn timer(&mut self, at: u64, timer: AggTimer) {
        self.out.push(Action::Timer { at, timer });
    }

    fn event(&mut self, e: AggEvent) {
        self.out.push(Action::Event(e));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PullPurpose {
    Sibling,
    Correction(Side),
}

#[derive(Debug, Clone)]
struct PendingPull {
    purpose: PullPurpose,
    subtree: SubtreeId,
    want: Option<Digest256>,
    peer: NodeId,
    seq: u32,
    attempts: u32,
    tried: BTreeSet<NodeId>,
}

#[derive(Debug, Clone)]
struct Epoch {
    d: u16,
    next: u16,
    pull: Option<PendingPull>,
    pull_seq: u32,
    sibling: Option<AggregateContainer>,
    sibling_h2_sig: Option<ContainerSignature>,
    provider: Option<NodeId>,
    computed: bool,
    asked: BTreeSet<NodeId>,
    corrections: u32,
    tally_due: bool,
}

pub struct AggregationNode {
    id: Identity,
    authority: PublicKey,
    p: NodeParams,
    behavior: Behavior,
    snapshot: RoutingTable,
    merge_depths: Vec<u16>,
    /// Own containers by depth.
    containers: Vec<Option<AggregateContainer>>,
    confirmed: Vec<Option<ConfirmedContainer>>,
    /// Alternative chain of an equivocator, by depth.
    alt: Vec<Option<ConfirmedContainer>>,
    equivocated: bool,
    store: HashMap<Digest256, ConfirmedContainer>,
    known: HashMap<Digest256, AggregateContainer>,
    own_sigs: HashMap<Digest256, ContainerSignature>,
    pool: BTreeMap<Digest256, BTreeMap<PublicKey, ContainerSignature>>,
    batches: BTreeMap<u16, Vote>,
    ledger: SignatureLedger,
    epoch: Option<Epoch>,
    deferred: Vec<(NodeId, u16)>,
    rng: ChaCha8Rng,
}

impl AggregationNode {
    pub fn new(
        id: Identity,
        authority: PublicKey,
        p: NodeParams,
        behavior: Behavior,
        snapshot: RoutingTable,
        rng: ChaCha8Rng,
    ) -> Self {
        let snapshot = match &behavior {
            Behavior::Colluder(bloc) => filter_for_bloc(&snapshot, bloc),
            _ => snapshot,
        };
        let merge_depths = (1..=p.bits).rev().filter(|&d| !snapshot.bucket(d).is_empty()).collect();
        let slots = p.bits as usize + 1;
        Self {
            id,
            authority,
            behavior,
            snapshot,
            merge_depths,
            containers: vec![None; slots],
            confirmed: vec![None; slots],
            alt: vec![None; slots],
            equivocated: false,
            store: HashMap::new(),
            known: HashMap::new(),
            own_sigs: HashMap::new(),
            pool: BTreeMap::new(),
            batches: BTreeMap::new(),
            ledger: SignatureLedger::new(),
            epoch: None,
            deferred: Vec::new(),
            rng,
            p,
        }
    }

    pub fn identity(&self) -> &Identity {
        &self.id
    }

    pub fn snapshot(&self) -> &RoutingTable {
        &self.snapshot
    }

    /// Depths whose sibling subtree is non-empty in the snapshot, deepest first.
    pub fn merge_depths(&self) -> &[u16] {
        &self.merge_depths
    }

    pub fn containers(&self) -> &[Option<AggregateContainer>] {
        &self.containers
    }

    pub fn confirmed_chain(&self) -> &[Option<ConfirmedContainer>] {
        &self.confirmed
    }

    pub fn root(&self) -> Option<&AggregateContainer> {
        self.containers[0].as_ref()
    }

    pub fn ledger(&self) -> &SignatureLedger {
        &self.ledger
    }

    /// Leaf-to-root confirmed chain, if every level is confirmed.
    pub fn claim_chain(&self) -> Option<Vec<ConfirmedContainer>> {
        (0..=self.p.bits as usize).rev().map(|d| self.confirmed[d].clone()).collect()
    }

    fn next_merge_below(&self, d: u16) -> u16 {
        self.merge_depths.iter().copied().find(|&m| m < d).unwrap_or(0)
    }

    fn own_sig(&mut self, c: &AggregateContainer) -> ContainerSignature {
        if let Some(s) = self.own_sigs.get(&c.h) {
            return *s;
        }
        let s = sign_container(&self.id.keys, &self.id.token, &self.id.kid, c).expect("own container covers own Kid");
        self.own_sigs.insert(c.h, s);
        self.pool.entry(s.h).or_default().insert(s.signer, s);
        s
    }

    /// Build and confirm the leaf and its lifts up to the first merge depth.
    pub fn start(&mut self, ctx: &mut Ctx<'_>, a: Digest256) {
        let top = self.merge_depths.first().copied().unwrap_or(0);
        let chain = self.lift_chain(make_leaf_container(a, &self.id.kid), top);
        for c in chain {
            let cc = self.self_confirm(&c);
            self.containers[c.depth() as usize] = Some(c.clone());
            ctx.event(AggEvent::Confirmed { depth: c.depth(), h: c.h, signers: 1 });
            self.store.insert(c.h, cc.clone());
            self.confirmed[c.depth() as usize] = Some(cc);
        }
        if matches!(self.behavior, Behavior::Equivocator) {
            let mut alt_a = Encoder::tagged("alternative");
            alt_a.digest(&a);
            for c in self.lift_chain(make_leaf_container(hash(&alt_a.finish()), &self.id.kid), top) {
                let cc = self.self_confirm(&c);
                self.alt[c.depth() as usize] = Some(cc);
            }
        }
    }

    fn lift_chain(&self, leaf: AggregateContainer, top: u16) -> Vec<AggregateContainer> {
        let mut out = vec![leaf];
        while out.last().expect("non-empty").depth() > top {
            let next = lift_container(out.last().expect("non-empty")).expect("depth > 0");
            out.push(next);
        }
        out
    }

    fn self_confirm(&mut self, c: &AggregateContainer) -> ConfirmedContainer {
        let s = self.own_sig(c);
        let evidence = match c.children.first() {
            Some(child) => vec![*self.own_sigs.get(&child.h).expect("child signed first")],
            None => Vec::new(),
        };
        ConfirmedContainer { container: c.clone(), sigs: vec![s], child_evidence: evidence }
    }

    fn admits(&self, pk: &PublicKey, kid: &Kid) -> bool {
        if *pk == self.id.keys.pk() {
            return true;
        }
        let Some(b) = bucket_depth(&self.id.kid, kid) else {
            return false;
        };
        self.snapshot.is_full(b) || self.snapshot.bucket(b).iter().any(|c| c.pk == *pk)
    }

    fn admits_sig(&self, s: &ContainerSignature) -> bool {
        s.signer_kid(self.p.bits).is_some_and(|k| self.admits(&s.signer, &k))
    }

    fn shuns(&self, peer: &Peer) -> bool {
        match &self.behavior {
            Behavior::Colluder(bloc) => bloc.prefix.contains(&peer.kid) && !bloc.members.contains(&peer.pk),
            _ => false,
        }
    }

    fn observe(&mut self, ctx: &mut Ctx<'_>, s: &ContainerSignature) {
        if let Some(proof) = self.ledger.observe(s, self.p.l) {
            ctx.event(AggEvent::Equivocation { proof: Box::new(proof) });
        }
        self.pool.entry(s.h).or_default().insert(s.signer, *s);
    }

    // ---- epochs ----

    pub fn begin_epoch(&mut self, ctx: &mut Ctx<'_>, d: u16) {
        if self.epoch.is_some() {
            self.finalize(ctx);
        }
        if self.containers[d as usize].is_none() {
            return;
        }
        let (start, end) = self.p.windows[d as usize];
        self.epoch = Some(Epoch {
            d,
            next: self.next_merge_below(d),
            pull: None,
            pull_seq: 0,
            sibling: None,
            sibling_h2_sig: None,
            provider: None,
            computed: false,
            asked: BTreeSet::new(),
            corrections: 0,
            tally_due: false,
        });
        let subtree = self.snapshot.sibling(d);
        self.start_pull(ctx, PullPurpose::Sibling, subtree, None, BTreeSet::new(), 0);
        ctx.timer(start + (end - start) * 3 / 5, AggTimer::Tally { d });
        ctx.timer(end - 1, AggTimer::Finalize { d });
    }

    fn pull_candidates(&self, purpose: PullPurpose, want: Option<Digest256>, tried: &BTreeSet<NodeId>) -> Vec<Contact> {
        let d = self.epoch.as_ref().expect("epoch active").d;
        let mut out: Vec<Contact> = match (purpose, want) {
            (PullPurpose::Sibling, _) => self.snapshot.bucket(d).to_vec(),
            (PullPurpose::Correction(_), Some(_)) => {
                let voters: BTreeSet<PublicKey> = self
                    .selected_for_correction()
                    .and_then(|h| self.pool.get(&h))
                    .map(|m| m.keys().copied().collect())
                    .unwrap_or_default();
                self.snapshot
                    .contacts()
                    .filter(|c| voters.contains(&c.pk) && bucket_depth(&self.id.kid, &c.kid).is_some_and(|b| b >= d))
                    .copied()
                    .collect()
            }
            (PullPurpose::Correction(_), None) => Vec::new(),
        };
        out.retain(|c| !tried.contains(&c.addr));
        out
    }

    fn selected_for_correction(&self) -> Option<Digest256> {
        let d = self.epoch.as_ref()?.d;
        majority_select(&self.tally(d - 1))
    }

    fn start_pull(
        &mut self,
        ctx: &mut Ctx<'_>,
        purpose: PullPurpose,
        subtree: SubtreeId,
        want: Option<Digest256>,
        mut tried: BTreeSet<NodeId>,
        attempts: u32,
    ) {
        let candidates = self.pull_candidates(purpose, want, &tried);
        let choice = candidates.choose(&mut self.rng).copied();
        let ep = self.epoch.as_mut().expect("epoch active");
        let d = ep.d;
        match choice {
            Some(peer) if attempts < self.p.max_pull_attempts => {
                ep.pull_seq += 1;
                let seq = ep.pull_seq;
                tried.insert(peer.addr);
                ep.pull =
                    Some(PendingPull { purpose, subtree, want, peer: peer.addr, seq, attempts: attempts + 1, tried });
                ctx.send(peer.addr, AggMsg::Pull { subtree, want });
                ctx.timer(ctx.now + self.p.timeout_ms, AggTimer::PullTimeout { d, seq });
            }
            _ => {
                ep.pull = None;
                match purpose {
                    PullPurpose::Sibling => {
                        ctx.event(AggEvent::SiblingUnreachable { d });
                        ep.sibling = None;
                        ep.provider = None;
                        self.compute_batch(ctx);
                        self.start_confirm(ctx);
                    }
                    PullPurpose::Correction(_) => {
                        let own = self.containers[d as usize - 1].as_ref().map(|c| c.h).unwrap_or_default();
                        ctx.event(AggEvent::Divergence { d, own, selected: want.unwrap_or_default() });
                    }
                }
            }
        }
    }

    fn retry_pull(&mut self, ctx: &mut Ctx<'_>) {
        let Some(pull) = self.epoch.as_mut().and_then(|e| e.pull.take()) else {
            return;
        };
        self.start_pull(ctx, pull.purpose, pull.subtree, pull.want, pull.tried, pull.attempts);
    }

    /// Validate a pull reply and return the container it yields.
    fn accept_reply(
        &mut self,
        ctx: &mut Ctx<'_>,
        subtree: &SubtreeId,
        want: Option<Digest256>,
        reply: PullReply,
    ) -> Result<(AggregateContainer, Option<ConfirmedContainer>), String> {
        let rules = self.p.rules(&self.authority);
        let check = |node: &Self, cache: &mut VerifyCache, cc: &ConfirmedContainer| {
            verify_confirmed(cc, rules, cache, |s| node.admits_sig(s)).map_err(|e| e.to_string())
        };
        let (container, cc) = match reply {
            PullReply::Confirmed { cc } => {
                check(self, ctx.cache, &cc)?;
                (cc.container.clone(), Some(cc))
            }
            PullReply::Children { children } => {
                for child in &children {
                    check(self, ctx.cache, child)?;
                }
                let parent = match children.as_slice() {
                    [only] => lift_container(&only.container),
                    [x, y] => combine_containers(&x.container, &y.container),
                    _ => return Err("bad child count".into()),
                }
                .map_err(|e| e.to_string())?;
                for child in &children {
                    for s in child.sigs.iter().chain(&child.child_evidence) {
                        self.observe(ctx, s);
                    }
                    self.store.insert(child.container.h, child.clone());
                }
                (parent, None)
            }
            PullReply::Unavailable => return Err("unavailable".into()),
        };
        if container.subtree != *subtree {
            return Err("wrong subtree".into());
        }
        if want.is_some_and(|h| h != container.h) {
            return Err("unexpected hash".into());
        }
        if let Some(cc) = &cc {
            for s in cc.sigs.iter().chain(&cc.child_evidence) {
                self.observe(ctx, s);
            }
            self.store.insert(cc.container.h, cc.clone());
        }
        Ok((container, cc))
    }

    fn on_pull_reply(&mut self, ctx: &mut Ctx<'_>, from: &Peer, subtree: SubtreeId, reply: PullReply) {
        let Some(ep) = self.epoch.as_ref() else { return };
        let Some(pull) = ep.pull.as_ref() else { return };
        if pull.peer != from.addr || pull.subtree != subtree {
            return;
        }
        let (d, purpose, want) = (ep.d, pull.purpose, pull.want);
        match self.accept_reply(ctx, &subtree, want, reply) {
            Err(reason) => {
                ctx.event(AggEvent::PullRejected { d, peer: from.addr, reason });
                self.retry_pull(ctx);
            }
            Ok((container, cc)) => {
                let h2_sig = cc
                    .as_ref()
                    .and_then(|cc| cc.sigs.iter().find(|s| s.signer == from.pk).or(cc.sigs.first()).copied());
                let ep = self.epoch.as_mut().expect("checked above");
                ep.pull = None;
                match purpose {
                    PullPurpose::Sibling => {
                        ep.sibling = Some(container);
                        ep.sibling_h2_sig = h2_sig;
                        ep.provider = Some(from.addr);
                        self.compute_batch(ctx);
                        self.start_confirm(ctx);
                    }
                    PullPurpose::Correction(Side::Sibling) => {
                        ep.sibling = Some(container.clone());
                        ep.sibling_h2_sig = h2_sig;
                        ep.provider = Some(from.addr);
                        ctx.event(AggEvent::Corrected { d, side: Side::Sibling, h: container.h });
                        self.compute_batch(ctx);
                        self.tally_and_correct(ctx);
                    }
                    PullPurpose::Correction(Side::Own) => {
                        ctx.event(AggEvent::Corrected { d, side: Side::Own, h: container.h });
                        self.containers[d as usize] = Some(container);
                        self.confirmed[d as usize] = cc;
                        self.compute_batch(ctx);
                        self.tally_and_correct(ctx);
                    }
                }
            }
        }
    }

    fn own_child_for_epoch(&self, d: u16) -> AggregateContainer {
        if matches!(self.behavior, Behavior::Equivocator) && !self.equivocated {
            if let Some(alt) = &self.alt[d as usize] {
                return alt.container.clone();
            }
        }
        self.containers[d as usize].clone().expect("own container present")
    }

    fn compute_batch(&mut self, ctx: &mut Ctx<'_>) {
        let ep = self.epoch.as_ref().expect("epoch active");
        let (d, next) = (ep.d, ep.next);
        let own = self.own_child_for_epoch(d);
        let head = match &ep.sibling {
            Some(s) => combine_containers(&own, s).expect("sibling subtrees"),
            None => lift_container(&own).expect("d >= 1"),
        };
        let batch = self.lift_chain(head, next);
        let sigs: Vec<ContainerSignature> = batch.iter().map(|c| self.own_sig(c)).collect();
        let mut evidence = vec![self.own_sig(&own)];
        let ep = self.epoch.as_ref().expect("epoch active");
        if let Some(s) = ep.sibling_h2_sig {
            evidence.push(s);
        }
        for c in &batch {
            self.containers[c.depth() as usize] = Some(c.clone());
            self.confirmed[c.depth() as usize] = None;
            self.known.insert(c.h, c.clone());
        }
        let vote = Vote { batch, sigs, evidence };
        self.batches.insert(d - 1, vote.clone());
        let ep = self.epoch.as_mut().expect("epoch active");
        ep.computed = true;
        let deferred: Vec<NodeId> = {
            let mut out = Vec::new();
            self.deferred.retain(|&(peer, depth)| {
                if depth == d - 1 {
                    out.push(peer);
                    false
                } else {
                    true
                }
            });
            out
        };
        for peer in deferred {
            ctx.send(peer, AggMsg::SignReply { vote: vote.clone() });
        }
        if self.epoch.as_ref().is_some_and(|e| e.tally_due) {
            self.epoch.as_mut().expect("epoch active").tally_due = false;
            self.tally_and_correct(ctx);
        }
    }

    fn needed_signers(&self) -> usize {
        let d = self.epoch.as_ref().expect("epoch active").d;
        self.batches.get(&(d - 1)).map_or(1, |v| v.batch.iter().map(|c| self.p.required(c)).max().unwrap_or(1))
    }

    fn head_signers(&self, d: u16) -> usize {
        self.containers[d as usize - 1]
            .as_ref()
            .and_then(|c| self.pool.get(&c.h))
            .map_or(0, |m| m.values().filter(|s| s.d == d - 1 && self.admits_sig(s)).count())
    }

    fn start_confirm(&mut self, ctx: &mut Ctx<'_>) {
        let want = self.needed_signers();
        let d = self.epoch.as_ref().expect("epoch active").d;
        let have = self.head_signers(d);
        let sibling_nonempty = self.epoch.as_ref().is_some_and(|e| e.sibling.is_some());
        let count = if matches!(self.behavior, Behavior::Equivocator) && !self.equivocated {
            usize::MAX
        } else {
            want.saturating_sub(have) + 1 + sibling_nonempty as usize
        };
        self.ask_signers(ctx, count);
        ctx.timer(ctx.now + self.p.timeout_ms, AggTimer::SignTimeout { d });
    }

    fn ask_signers(&mut self, ctx: &mut Ctx<'_>, count: usize) {
        let ep = self.epoch.as_ref().expect("epoch active");
        let d = ep.d;
        let Some(vote) = self.batches.get(&(d - 1)).cloned() else { return };
        let mut order: Vec<NodeId> = Vec::new();
        if let Some(p) = ep.provider {
            order.push(p);
        }
        let mut sibling_side: Vec<NodeId> = self.snapshot.bucket(d).iter().map(|c| c.addr).collect();
        let mut own_side: Vec<NodeId> = self.snapshot.within_own_subtree(d).map(|c| c.addr).collect();
        sibling_side.shuffle(&mut self.rng);
        own_side.shuffle(&mut self.rng);
        if let Some(first) = sibling_side.first() {
            order.push(*first);
        }
        let mut rest: Vec<NodeId> = sibling_side.into_iter().skip(1).chain(own_side).collect();
        rest.shuffle(&mut self.rng);
        order.extend(rest);
        let ep = self.epoch.as_mut().expect("epoch active");
        let mut sent = 0;
        for peer in order {
            if sent >= count {
                break;
            }
            if ep.asked.insert(peer) {
                ctx.send(peer, AggMsg::SignRequest { vote: vote.clone() });
                sent += 1;
            }
        }
    }

    fn tally(&self, depth: u16) -> BTreeMap<Digest256, usize> {
        let mut counts = BTreeMap::new();
        for (h, signers) in &self.pool {
            let n = signers
                .values()
                .filter(|s| s.d == depth && self.admits_sig(s) && !self.ledger.is_convicted(&s.signer))
                .count();
            if n > 0 {
                counts.insert(*h, n);
            }
        }
        counts
    }

    fn tally_and_correct(&mut self, ctx: &mut Ctx<'_>) {
        let Some(ep) = self.epoch.as_ref() else { return };
        if ep.pull.is_some() {
            return;
        }
        if !ep.computed {
            self.epoch.as_mut().expect("epoch active").tally_due = true;
            return;
        }
        let d = ep.d;
        let mine = self.containers[d as usize - 1].as_ref().expect("batch computed").h;
        let Some(selected) = majority_select(&self.tally(d - 1)) else { return };
        if selected == mine {
            return;
        }
        if ep.corrections >= self.p.max_correction_depth {
            ctx.event(AggEvent::Divergence { d, own: mine, selected });
            return;
        }
        let Some(sel) = self.known.get(&selected).cloned() else {
            ctx.event(AggEvent::Divergence { d, own: mine, selected });
            return;
        };
        let own_child = self.own_child_for_epoch(d).h;
        let sibling_h = ep.sibling.as_ref().map(|s| s.h);
        self.epoch.as_mut().expect("epoch active").corrections += 1;
        if sel.children.iter().any(|c| c.h == own_child) {
            match sel.other_child(&own_child) {
                Some(h2) => {
                    ctx.event(AggEvent::CorrectionPull { d, side: Side::Sibling, want: h2.h });
                    let subtree = self.snapshot.sibling(d);
                    self.start_pull(
                        ctx,
                        PullPurpose::Correction(Side::Sibling),
                        subtree,
                        Some(h2.h),
                        BTreeSet::new(),
                        0,
                    );
                }
                None => {
                    let ep = self.epoch.as_mut().expect("epoch active");
                    ep.sibling = None;
                    ep.sibling_h2_sig = None;
                    ep.provider = None;
                    ctx.event(AggEvent::Corrected { d, side: Side::Sibling, h: selected });
                    self.compute_batch(ctx);
                }
            }
        } else if let Some(want) = sel.children.iter().find(|c| Some(c.h) != sibling_h) {
            ctx.event(AggEvent::CorrectionPull { d, side: Side::Own, want: want.h });
            let subtree = SubtreeId::of(&self.id.kid, d);
            self.start_pull(ctx, PullPurpose::Correction(Side::Own), subtree, Some(want.h), BTreeSet::new(), 0);
        }
    }

    fn finalize(&mut self, ctx: &mut Ctx<'_>) {
        let Some(ep) = self.epoch.take() else { return };
        if !ep.computed {
            return;
        }
        let d = ep.d;
        let Some(vote) = self.batches.get(&(d - 1)).cloned() else { return };
        let mine = vote.batch[0].h;
        if let Some(selected) = majority_select(&self.tally(d - 1)) {
            if selected != mine {
                ctx.event(AggEvent::Divergence { d, own: mine, selected });
            }
        }
        let me = self.id.keys.pk();
        for c in &vote.batch {
            let depth = c.depth();
            let own_child = if depth == d - 1 {
                self.own_child_for_epoch(d)
            } else {
                self.containers[depth as usize + 1].clone().expect("batch below")
            };
            let sibling_nonempty = depth == d - 1 && ep.sibling.is_some();
            let mut gathered: Vec<ContainerSignature> = Vec::new();
            for h in [c.h, own_child.h] {
                if let Some(m) = self.pool.get(&h) {
                    gathered.extend(m.values().filter(|s| self.admits_sig(s) && !self.ledger.is_convicted(&s.signer)));
                }
            }
            if sibling_nonempty {
                gathered.extend(ep.sibling_h2_sig);
                if let Some(m) = ep.sibling.as_ref().and_then(|s| self.pool.get(&s.h)) {
                    gathered.extend(m.values().filter(|s| self.admits_sig(s)));
                }
            }
            let ctx_c = ConfirmContext {
                me: &me,
                my_kid: &self.id.kid,
                own_child: Some(own_child.h),
                sibling_nonempty,
                required: self.p.required(c),
                bits: self.p.bits,
            };
            match confirm(c, &gathered, ctx_c) {
                Ok(cc) => {
                    ctx.event(AggEvent::Confirmed { depth, h: c.h, signers: cc.sigs.len() });
                    self.store.insert(c.h, cc.clone());
                    self.confirmed[depth as usize] = Some(cc);
                }
                Err(e) => {
                    ctx.event(AggEvent::Unconfirmed { depth, h: c.h, reason: e.to_string() });
                }
            }
        }
        if matches!(self.behavior, Behavior::Equivocator) && self.alt[d as usize].is_some() {
            self.equivocated = true;
        }
    }

    // ---- message and timer entry points ----

    pub fn on_message(&mut self, ctx: &mut Ctx<'_>, from: &Peer, msg: AggMsg) {
        let member = self.admits(&from.pk, &from.kid);
        match msg {
            AggMsg::Pull { subtree, want } => {
                if !member {
                    ctx.event(AggEvent::RejectedNonMember { peer: from.addr });
                } else if !self.shuns(from) && !self.withholds() {
                    let reply = self.answer_pull(&subtree, want);
                    ctx.send(from.addr, AggMsg::PullReply { subtree, reply });
                }
            }
            AggMsg::PullReply { subtree, reply } => {
                if member {
                    self.on_pull_reply(ctx, from, subtree, reply);
                }
            }
            AggMsg::SignRequest { vote } => {
                if !member {
                    ctx.event(AggEvent::RejectedNonMember { peer: from.addr });
                    return;
                }
                if self.shuns(from) || self.withholds() {
                    return;
                }
                let Some(depth) = self.absorb_vote(ctx, from, &vote) else { return };
                if matches!(self.behavior, Behavior::Equivocator) {
                    let kid = self.id.kid;
                    let sigs: Vec<ContainerSignature> =
                        vote.batch.iter().filter(|c| c.subtree.contains(&kid)).map(|c| self.own_sig(c)).collect();
                    ctx.send(from.addr, AggMsg::SignReply { vote: Vote { batch: vote.batch, sigs, evidence: vec![] } });
                } else if let Some(mine) = self.batches.get(&depth) {
                    ctx.send(from.addr, AggMsg::SignReply { vote: mine.clone() });
                } else {
                    self.deferred.push((from.addr, depth));
                }
            }
            AggMsg::SignReply { vote } => {
                if member {
                    self.absorb_vote(ctx, from, &vote);
                }
            }
        }
    }

    fn withholds(&self) -> bool {
        match &self.behavior {
            Behavior::Colluder(bloc) => bloc.withheld == Some(self.id.keys.pk()),
            _ => false,
        }
    }

    fn answer_pull(&self, subtree: &SubtreeId, want: Option<Digest256>) -> PullReply {
        if let Some(h) = want {
            return match self.store.get(&h) {
                Some(cc) if cc.container.subtree == *subtree => PullReply::Confirmed { cc: cc.clone() },
                _ => PullReply::Unavailable,
            };
        }
        if !subtree.contains(&self.id.kid) || subtree.depth() > self.p.bits {
            return PullReply::Unavailable;
        }
        let d = subtree.depth() as usize;
        if let Some(cc) = &self.confirmed[d] {
            return PullReply::Confirmed { cc: cc.clone() };
        }
        let Some(c) = &self.containers[d] else {
            return PullReply::Unavailable;
        };
        let children: Option<Vec<ConfirmedContainer>> =
            c.children.iter().map(|ch| self.store.get(&ch.h).cloned()).collect();
        match children {
            Some(children) if !children.is_empty() => PullReply::Children { children },
            _ => PullReply::Unavailable,
        }
    }

    /// Verify and record a vote. Returns its head depth.
    fn absorb_vote(&mut self, ctx: &mut Ctx<'_>, from: &Peer, vote: &Vote) -> Option<u16> {
        let head = vote.batch.first()?;
        if vote.batch.len() > self.p.bits as usize + 1 || !vote.batch.iter().all(|c| c.is_well_formed()) {
            return None;
        }
        if !vote.batch.windows(2).all(|w| w[1].has_child(&w[0])) {
            return None;
        }
        if !head.subtree.contains(&self.id.kid) {
            return None;
        }
        for c in &vote.batch {
            self.known.entry(c.h).or_insert_with(|| c.clone());
        }
        for s in &vote.sigs {
            let Some(c) = vote.batch.iter().find(|c| s.covers(c)) else { continue };
            if s.signer == from.pk && s.verify(&self.authority, &c.subtree, self.p.bits, ctx.cache) {
                self.observe(ctx, s);
            }
        }
        for s in &vote.evidence {
            let Some(kid) = s.signer_kid(self.p.bits) else { continue };
            let child = SubtreeId::of(&kid, head.depth() + 1);
            if head.subtree.contains(&kid) && s.verify(&self.authority, &child, self.p.bits, ctx.cache) {
                self.observe(ctx, s);
            }
        }
        Some(head.depth())
    }

    pub fn on_timer(&mut self, ctx: &mut Ctx<'_>, timer: AggTimer) {
        let active = self.epoch.as_ref().map(|e| e.d);
        match timer {
            AggTimer::PullTimeout { d, seq } => {
                let Some(ep) = self.epoch.as_ref() else { return };
                let Some(pull) = ep.pull.as_ref() else { return };
                if ep.d == d && pull.seq == seq {
                    ctx.event(AggEvent::PullTimeout { d, peer: pull.peer });
                    self.retry_pull(ctx);
                }
            }
            AggTimer::SignTimeout { d } if active == Some(d) => {
                let (_, end) = self.p.windows[d as usize];
                let missing = self.needed_signers().saturating_sub(self.head_signers(d));
                if missing > 0 && ctx.now + self.p.timeout_ms < end {
                    self.ask_signers(ctx, missing + 1);
                    ctx.timer(ctx.now + self.p.timeout_ms, AggTimer::SignTimeout { d });
                }
            }
            AggTimer::Tally { d } if active == Some(d) => self.tally_and_correct(ctx),
            AggTimer::Finalize { d } if active == Some(d) => self.finalize(ctx),
            _ => {}
        }
    }
}

fn filter_for_bloc(table: &RoutingTable, bloc: &Bloc) -> RoutingTable {
    let mut out = RoutingTable::new(*table.self_kid(), table.k());
    for c in table.contacts() {
        let inside = bloc.prefix.contains(&c.kid);
        let keep = !inside || (bloc.members.contains(&c.pk) && bloc.withheld != Some(c.pk));
        if keep {
            out.insert_verified(*c);
        }
    }
    out
}
