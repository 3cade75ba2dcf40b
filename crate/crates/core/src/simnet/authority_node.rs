//! The authority as a simulated actor: ticket sales, tracker, proof
//! collection, winner identification and claim processing.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IteratorRandom, SliceRandom};
use rand_chacha::ChaCha8Rng;

use super::config::ScenarioConfig;
use super::engine::{BoardItem, Io, Out, Sender, Timer};
use super::message::Payload;
use super::player::KID_TAKEN;
use crate::aggregation::AggregateContainer;
use crate::crypto::{hash, Encoder, Nonce};
use crate::lottery::{Authority, LotteryError, SampledRoot, WinnerAnnouncement};
use crate::overlay::{Contact, NodeId};

pub(crate) struct AuthorityNode {
    pub auth: Authority,
    cfg: ScenarioConfig,
    rng: ChaCha8Rng,
    /// Registered players, in sale order; the tracker hands these out.
    contacts: Vec<Contact>,
    addr_of: BTreeMap<crate::crypto::PublicKey, NodeId>,
    sampled: Vec<NodeId>,
    /// Proofs already published, by signer and certainty.
    published: BTreeSet<(crate::crypto::PublicKey, bool)>,
    replies: BTreeMap<NodeId, Option<AggregateContainer>>,
    pub announcement: Option<WinnerAnnouncement>,
    pub no_consensus: Option<(usize, usize)>,
    claims_open: bool,
}

impl AuthorityNode {
    pub fn new(auth: Authority, cfg: &ScenarioConfig, rng: ChaCha8Rng) -> Self {
        Self {
            auth,
            cfg: cfg.clone(),
            rng,
            contacts: Vec::new(),
            addr_of: BTreeMap::new(),
            sampled: Vec::new(),
            published: BTreeSet::new(),
            replies: BTreeMap::new(),
            announcement: None,
            no_consensus: None,
            claims_open: false,
        }
    }

    pub fn on_timer(&mut self, io: &mut Io<'_>, timer: Timer) {
        match timer {
            Timer::Deadline => io.event("phase.purchase_closed", None),
            Timer::QueryRoots => self.query_roots(io),
            Timer::Identify => self.identify(io),
            _ => {}
        }
    }

    pub fn on_message(&mut self, io: &mut Io<'_>, from: Sender, payload: Payload) {
        match payload {
            Payload::Buy => self.sell(io, from),
            Payload::RootReply { root } => {
                if self.sampled.contains(&from.addr) && self.announcement.is_none() {
                    self.replies.insert(from.addr, root);
                }
            }
            Payload::Proof { proof } => {
                let params = self.auth.params();
                let signer = proof.signer();
                if proof.verify(&params.authority_pk, params.bits, params.l, io.cache)
                    && self.auth.record(&signer).is_some()
                    && self.published.insert((signer, proof.certain))
                {
                    self.auth.revoke(&proof);
                    io.out.push(Out::Publish(BoardItem::Proof(proof)));
                }
            }
            Payload::Claim { claim } => {
                let reply = match (&self.announcement, self.claims_open) {
                    (Some(ann), true) => self.auth.process_claim(&claim, ann, io.cache),
                    _ => Err(crate::lottery::RejectReason::NotAWinner),
                };
                match reply {
                    Ok(()) => {
                        io.out.push(Out::Publish(BoardItem::Claim(claim)));
                        io.send(from.addr, Payload::ClaimResult { accepted: true, reason: None });
                    }
                    Err(reason) => {
                        io.event("claim.rejected", Some(serde_json::json!({ "player": from.addr, "reason": reason })));
                        io.send(from.addr, Payload::ClaimResult { accepted: false, reason: Some(reason) });
                    }
                }
            }
            _ => {}
        }
    }

    fn sell(&mut self, io: &mut Io<'_>, from: Sender) {
        if io.now >= self.auth.params().purchase_deadline_ms && !self.auth.sells_late {
            io.send(from.addr, Payload::Refused { reason: LotteryError::AfterDeadline.to_string() });
            return;
        }
        let kid = self.auth.preview_kid(&from.pk);
        if self.auth.kid_taken(&kid) {
            io.send(from.addr, Payload::Refused { reason: KID_TAKEN.into() });
            return;
        }
        let sale = match self.auth.sell_ticket(from.pk, io.now) {
            Ok(sale) => sale,
            Err(e) => {
                io.send(from.addr, Payload::Refused { reason: e.to_string() });
                return;
            }
        };
        if sale.duplicate_pk {
            io.event("authority.duplicate_pk", Some(serde_json::json!({ "s": sale.s })));
        }
        if io.now >= self.auth.params().purchase_deadline_ms {
            io.event("authority.late_sale", Some(serde_json::json!({ "s": sale.s, "player": from.addr })));
        }
        let bootstrap = self.contacts.choose(&mut self.rng).copied();
        self.contacts.push(Contact { kid, pk: from.pk, token: sale.token, addr: from.addr });
        self.addr_of.insert(from.pk, from.addr);
        io.send(from.addr, Payload::Sold { s: sale.s, token: sale.token, bootstrap });
    }

    fn query_roots(&mut self, io: &mut Io<'_>) {
        let deadline = self.auth.params().purchase_deadline_ms;
        let eligible: Vec<NodeId> = self
            .auth
            .records()
            .iter()
            .filter(|r| r.sold_at_ms < deadline)
            .filter_map(|r| self.addr_of.get(&r.pk).copied())
            .collect();
        let mut sample = eligible.into_iter().choose_multiple(&mut self.rng, self.cfg.sample_size);
        sample.sort();
        for &addr in &sample {
            io.send(addr, Payload::RootQuery);
        }
        io.event("phase.identification", Some(serde_json::json!({ "sample": sample })));
        self.sampled = sample;
    }

    fn identify(&mut self, io: &mut Io<'_>) {
        let sample: Vec<SampledRoot> = self
            .sampled
            .iter()
            .filter_map(|addr| {
                let c = self.contacts.iter().find(|c| c.addr == *addr)?;
                Some(SampledRoot { player: c.pk, root: self.replies.get(addr).cloned().flatten() })
            })
            .collect();
        let root = match self.auth.consensus_root(&sample, self.cfg.sample_majority) {
            Ok(root) => root,
            Err(LotteryError::NoConsensus { best, valid }) => {
                self.no_consensus = Some((best, valid));
                io.out.push(Out::Publish(BoardItem::Abort { best, valid }));
                return;
            }
            Err(e) => {
                io.event("authority.error", Some(serde_json::json!({ "error": e.to_string() })));
                self.no_consensus = Some((0, 0));
                io.out.push(Out::Publish(BoardItem::Abort { best: 0, valid: 0 }));
                return;
            }
        };
        let published_r_a = self.cfg.authority.wrong_r_a.then(|| {
            let mut enc = Encoder::tagged("substitute-r");
            enc.bytes(&self.auth.r_a().0);
            Nonce(hash(&enc.finish()).0)
        });
        let ann = self.auth.announce(root, published_r_a).expect("params validated at setup");
        let published_n = self.auth.sold_before_deadline() + self.cfg.authority.inflate_n;
        io.out.push(Out::Publish(BoardItem::PublishedN(published_n)));
        io.out.push(Out::Publish(BoardItem::Announcement(ann.clone())));
        self.announcement = Some(ann);
        self.claims_open = true;
    }
}
