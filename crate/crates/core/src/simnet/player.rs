//! One player: purchase, overlay warm-up, aggregation, claiming and
//! verification.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ScenarioConfig, Strategy};
use super::engine::{BoardState, Io, Out, Sender, Timer};
use super::message::{Payload, AUTHORITY};
use super::placement::{labelled_rng, PlannedPlayer};
use crate::aggregation::{Action, AggEvent, AggregationNode, Behavior, Bloc, Ctx, Identity, NodeParams, Peer};
use crate::crypto::{keygen, AuthToken, Digest256, KeyPair};
use crate::lottery::{
    build_ticket, initial_aggregate, make_claim, verify_outcome, LotteryParams, LottoOpening, PlayerView, RejectReason,
    Ticket, VerificationReport, WinningNumber,
};
use crate::overlay::{bucket_depth, derive_kid, Contact, Kid, Lookup, NodeId, RoutingTable};

pub(crate) const KID_TAKEN: &str = "kid taken";

/// Read-only state every handler may consult.
pub(crate) struct Env<'a> {
    pub cfg: &'a ScenarioConfig,
    pub params: &'a LotteryParams,
    pub board: &'a BoardState,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Purpose {
    Join,
    SelfRefresh,
    Refresh,
}

struct ActiveLookup {
    lookup: Lookup,
    purpose: Purpose,
    outstanding: BTreeSet<NodeId>,
}

pub(crate) struct Player {
    pub plan: PlannedPlayer,
    pub keys: KeyPair,
    key_rng: ChaCha8Rng,
    net_rng: ChaCha8Rng,
    pub token: Option<AuthToken>,
    pub kid: Option<Kid>,
    pub s: Option<u64>,
    pub ticket: Option<Ticket>,
    pub table: Option<RoutingTable>,
    lookups: BTreeMap<u32, ActiveLookup>,
    next_lookup: u32,
    refresh_queue: VecDeque<Kid>,
    pub node: Option<AggregationNode>,
    pub bloc: Option<Arc<Bloc>>,
    /// Stopped answering (silent players from aggregation start on).
    pub mute: bool,
    pub claim: Option<Result<(), RejectReason>>,
    pub claim_sent: bool,
    pub report: Option<VerificationReport>,
    pub refused: Option<String>,
    pub key_rolls: u32,
}

impl Player {
    pub fn new(plan: PlannedPlayer, cfg: &ScenarioConfig) -> Self {
        let net_seed = cfg.network_seed.expect("resolved config");
        Self {
            keys: keygen(plan.key_seed),
            key_rng: labelled_rng(cfg.seed, "player-keys", plan.addr as u64),
            net_rng: labelled_rng(net_seed, "player-net", plan.addr as u64),
            plan,
            token: None,
            kid: None,
            s: None,
            ticket: None,
            table: None,
            lookups: BTreeMap::new(),
            next_lookup: 0,
            refresh_queue: VecDeque::new(),
            node: None,
            bloc: None,
            mute: false,
            claim: None,
            claim_sent: false,
            report: None,
            refused: None,
            key_rolls: 0,
        }
    }

    pub fn addr(&self) -> NodeId {
        NodeId(self.plan.addr)
    }

    pub fn strategy(&self) -> Strategy {
        self.plan.strategy
    }

    fn is_late(&self) -> bool {
        self.plan.strategy == Strategy::LateJoiner
    }

    pub fn a(&self) -> Option<Digest256> {
        self.ticket.as_ref().map(initial_aggregate)
    }

    pub fn on_timer(&mut self, env: &Env<'_>, io: &mut Io<'_>, timer: Timer) {
        match timer {
            Timer::Buy => io.send(AUTHORITY, Payload::Buy),
            Timer::Refresh => {
                if let Some(kid) = self.kid {
                    if !self.mute {
                        self.start_lookup(env, io, kid, Purpose::SelfRefresh);
                    }
                }
            }
            Timer::LookupTimeout { lookup, peer } => {
                if let Some(active) = self.lookups.get_mut(&lookup) {
                    if active.outstanding.remove(&peer) {
                        active.lookup.on_failure(peer);
                        self.pump(env, io, lookup);
                    }
                }
            }
            Timer::Snapshot => self.begin_aggregation(env, io),
            Timer::Epoch(d) => self.with_node(env, io, |node, ctx| node.begin_epoch(ctx, d)),
            Timer::Agg(t) => self.with_node(env, io, |node, ctx| node.on_timer(ctx, t)),
            Timer::ReadBoard => self.read_board(env, io),
            Timer::Verify => self.verify(env, io),
            Timer::Deadline | Timer::QueryRoots | Timer::Identify => {}
        }
    }

    pub fn on_message(&mut self, env: &Env<'_>, io: &mut Io<'_>, from: Sender, payload: Payload) {
        if self.mute {
            return;
        }
        match payload {
            Payload::Sold { s, token, bootstrap } if from.addr == AUTHORITY => {
                self.on_sold(env, io, s, token, bootstrap)
            }
            Payload::Refused { reason } if from.addr == AUTHORITY => {
                if reason == KID_TAKEN {
                    self.key_rolls += 1;
                    let mut seed = [0u8; 32];
                    self.key_rng.fill_bytes(&mut seed);
                    self.keys = keygen(seed);
                    io.event("player.key_reroll", None);
                    io.send(AUTHORITY, Payload::Buy);
                } else {
                    self.refused = Some(reason);
                }
            }
            Payload::FindNode { lookup, target } => {
                let Some(table) = self.table.as_mut() else { return };
                if let (Some(kid), Some(token)) = (from.kid, from.token) {
                    table.insert_verified(Contact { kid, pk: from.pk, token, addr: from.addr });
                }
                let contacts = table.closest(&target, env.cfg.k);
                io.send(from.addr, Payload::Nodes { lookup, contacts });
            }
            Payload::Nodes { lookup, contacts } => self.on_nodes(env, io, from, lookup, contacts),
            Payload::Agg { msg } => {
                let Some(kid) = from.kid else { return };
                let peer = Peer { addr: from.addr, pk: from.pk, kid };
                self.with_node(env, io, |node, ctx| node.on_message(ctx, &peer, msg));
            }
            Payload::RootQuery if from.addr == AUTHORITY => {
                let root = self.node.as_ref().and_then(|n| n.root().cloned());
                io.send(AUTHORITY, Payload::RootReply { root });
            }
            Payload::ClaimResult { accepted, reason } if from.addr == AUTHORITY => {
                self.claim = Some(if accepted { Ok(()) } else { Err(reason.unwrap_or(RejectReason::NotAWinner)) });
            }
            _ => {}
        }
    }

    fn on_sold(&mut self, env: &Env<'_>, io: &mut Io<'_>, s: u64, token: AuthToken, bootstrap: Option<Contact>) {
        let Ok(kid) = derive_kid(&token, env.cfg.bits) else { return };
        self.token = Some(token);
        self.kid = Some(kid);
        self.s = Some(s);
        let ticket = build_ticket(env.cfg.mode, s, &self.plan.r, self.plan.lotto_n, env.params.lotto_domain)
            .expect("lotto number drawn inside the domain");
        self.ticket = Some(ticket);
        let mut table = RoutingTable::new(kid, env.cfg.k);
        if let Some(c) = bootstrap {
            if contact_ok(env, io, &c) {
                table.insert_verified(c);
            }
        }
        self.table = Some(table);
        self.start_lookup(env, io, kid, Purpose::Join);
        if self.is_late() {
            io.timer(io.now + env.cfg.warmup_ms / 4, Timer::Snapshot);
        }
    }

    fn start_lookup(&mut self, env: &Env<'_>, io: &mut Io<'_>, target: Kid, purpose: Purpose) {
        let (Some(table), Some(kid)) = (self.table.as_ref(), self.kid) else { return };
        let seeds = table.closest(&target, env.cfg.k);
        let id = self.next_lookup;
        self.next_lookup += 1;
        let lookup = Lookup::new(target, kid, env.cfg.k, env.cfg.alpha, seeds);
        self.lookups.insert(id, ActiveLookup { lookup, purpose, outstanding: BTreeSet::new() });
        self.pump(env, io, id);
    }

    fn pump(&mut self, env: &Env<'_>, io: &mut Io<'_>, id: u32) {
        let Some(active) = self.lookups.get_mut(&id) else { return };
        for q in active.lookup.next_queries() {
            active.outstanding.insert(q.addr);
            io.send(q.addr, Payload::FindNode { lookup: id, target: *active.lookup.target() });
            io.timer(io.now + env.cfg.timeout_ms, Timer::LookupTimeout { lookup: id, peer: q.addr });
        }
        if active.lookup.is_done() && active.outstanding.is_empty() {
            let purpose = active.purpose;
            self.lookups.remove(&id);
            self.lookup_finished(env, io, purpose);
        }
    }

    fn on_nodes(&mut self, env: &Env<'_>, io: &mut Io<'_>, from: Sender, id: u32, contacts: Vec<Contact>) {
        let Some(active) = self.lookups.get(&id) else { return };
        if !active.outstanding.contains(&from.addr) {
            return;
        }
        let valid: Vec<Contact> = contacts.into_iter().filter(|c| contact_ok(env, io, c)).collect();
        if let Some(table) = self.table.as_mut() {
            for c in &valid {
                table.insert_verified(*c);
            }
        }
        let active = self.lookups.get_mut(&id).expect("checked above");
        active.outstanding.remove(&from.addr);
        active.lookup.on_response(from.addr, valid);
        self.pump(env, io, id);
    }

    fn lookup_finished(&mut self, env: &Env<'_>, io: &mut Io<'_>, purpose: Purpose) {
        match purpose {
            Purpose::Join if self.is_late() => {
                if let Some(kid) = self.kid {
                    self.start_lookup(env, io, kid, Purpose::SelfRefresh);
                }
            }
            Purpose::Join => {}
            Purpose::SelfRefresh => {
                let table = self.table.as_ref().expect("registered");
                let radius = (1..=env.cfg.bits).rev().find(|&d| !table.bucket(d).is_empty()).unwrap_or(0);
                let mut targets = Vec::new();
                for d in 1..=radius {
                    if !table.is_full(d) {
                        targets.push(random_leaf_in(&mut self.net_rng, table, d, env.cfg.bits));
                    }
                }
                for _ in 0..env.cfg.warmup_lookups {
                    let mut bytes = [0u8; 32];
                    self.net_rng.fill_bytes(&mut bytes);
                    targets.push(Kid(crate::overlay::BitString::from_bytes(&bytes, env.cfg.bits)));
                }
                self.refresh_queue = targets.into();
                self.next_refresh(env, io);
            }
            Purpose::Refresh => self.next_refresh(env, io),
        }
    }

    fn next_refresh(&mut self, env: &Env<'_>, io: &mut Io<'_>) {
        if let Some(target) = self.refresh_queue.pop_front() {
            self.start_lookup(env, io, target, Purpose::Refresh);
        }
    }

    fn begin_aggregation(&mut self, env: &Env<'_>, io: &mut Io<'_>) {
        let (Some(kid), Some(token), Some(a), Some(table)) = (self.kid, self.token, self.a(), self.table.as_ref())
        else {
            return;
        };
        if self.plan.strategy == Strategy::Silent {
            self.mute = true;
            self.lookups.clear();
            io.event("player.mute", None);
            return;
        }
        let params = env.params;
        let mut windows = vec![(0, 0); env.cfg.bits as usize + 1];
        for d in 1..=env.cfg.bits {
            windows[d as usize] = (params.epoch_start(d), params.epoch_end(d));
        }
        let next_depth = (1..=env.cfg.bits).rev().find(|&d| params.epoch_start(d) >= io.now);
        let snapshot = if self.is_late() {
            // Levels whose epochs already passed are treated as empty.
            let limit = next_depth.unwrap_or(0);
            let mut t = RoutingTable::new(kid, env.cfg.k);
            for c in table.contacts() {
                if bucket_depth(&kid, &c.kid).is_some_and(|b| b <= limit) {
                    t.insert_verified(*c);
                }
            }
            t
        } else {
            table.clone()
        };
        let behavior = match (self.plan.strategy, &self.bloc) {
            (Strategy::Equivocator, _) => Behavior::Equivocator,
            (Strategy::ColludingRootManipulator, Some(bloc)) => Behavior::Colluder(bloc.clone()),
            _ => Behavior::Honest,
        };
        let node_params = NodeParams {
            bits: env.cfg.bits,
            l: env.cfg.l,
            root_extra_sigs: env.cfg.root_extra_sigs,
            timeout_ms: env.cfg.timeout_ms,
            max_pull_attempts: env.cfg.max_pull_attempts,
            max_correction_depth: env.cfg.max_correction_depth,
            windows,
        };
        let mut seed = [0u8; 32];
        self.net_rng.fill_bytes(&mut seed);
        let id = Identity { keys: self.keys.clone(), token, kid, addr: self.addr() };
        let node =
            AggregationNode::new(id, params.authority_pk, node_params, behavior, snapshot, ChaCha8Rng::from_seed(seed));
        let epochs: Vec<u16> =
            node.merge_depths().iter().copied().filter(|&d| params.epoch_start(d) >= io.now).collect();
        self.node = Some(node);
        self.with_node(env, io, |node, ctx| node.start(ctx, a));
        for d in epochs {
            io.timer(params.epoch_start(d), Timer::Epoch(d));
        }
    }

    fn with_node(&mut self, env: &Env<'_>, io: &mut Io<'_>, f: impl FnOnce(&mut AggregationNode, &mut Ctx<'_>)) {
        let Some(node) = self.node.as_mut() else { return };
        let mut ctx = Ctx::new(io.now, io.cache);
        f(node, &mut ctx);
        for action in ctx.out {
            match action {
                Action::Send { to, msg } => io.send(to, Payload::Agg { msg }),
                Action::Timer { at, timer } => io.timer(at, Timer::Agg(timer)),
                Action::Event(AggEvent::Equivocation { proof }) => {
                    io.out.push(Out::Event {
                        event: "agg.equivocation".into(),
                        payload: None,
                        proof: Some(proof.as_ref().clone()),
                    });
                    io.send(AUTHORITY, Payload::Proof { proof: *proof });
                }
                Action::Event(e) => {
                    let verbose = matches!(e, AggEvent::Confirmed { depth, .. } if depth > 0);
                    if !verbose || env.cfg.log_messages {
                        let value = serde_json::to_value(&e).expect("events serialize");
                        let name = value.get("event").and_then(|v| v.as_str()).unwrap_or("event").to_string();
                        io.event(format!("agg.{name}"), Some(value));
                    }
                }
            }
        }
    }

    fn read_board(&mut self, env: &Env<'_>, io: &mut Io<'_>) {
        if self.mute || self.claim_sent {
            return;
        }
        let (Some(ann), Some(node), Some(ticket), Some(token)) =
            (env.board.announcement.as_ref(), self.node.as_ref(), self.ticket, self.token)
        else {
            return;
        };
        let won = match ann.n_w {
            WinningNumber::Cl(_) => self.kid.is_some_and(|k| ann.winners.contains(&k)),
            WinningNumber::Lo(n_w) => self.plan.lotto_n == Some(n_w),
        };
        if !won {
            return;
        }
        let Some(chain) = node.claim_chain() else {
            io.event("claim.incomplete_chain", None);
            return;
        };
        let lotto = match (ann.n_w, self.plan.lotto_n) {
            (WinningNumber::Lo(_), Some(n)) => Some(LottoOpening { ticket, s: ticket.s(), r: self.plan.r, n }),
            _ => None,
        };
        let claim = make_claim(&self.keys, &token, chain, lotto);
        self.claim_sent = true;
        io.send(AUTHORITY, Payload::Claim { claim: Box::new(claim) });
    }

    fn verify(&mut self, env: &Env<'_>, io: &mut Io<'_>) {
        if !self.plan.strategy.is_honest() {
            return;
        }
        let (Some(board), Some(node), Some(kid)) = (env.board.to_board(), self.node.as_ref(), self.kid) else {
            return;
        };
        let mut known: Vec<Kid> = vec![kid];
        known.extend(node.snapshot().contacts().map(|c| c.kid));
        let view = PlayerView { kid, containers: node.containers(), known: &known };
        let report = verify_outcome(Some(&view), &board, io.cache);
        io.event("verify.report", Some(serde_json::to_value(&report).expect("reports serialize")));
        self.report = Some(report);
    }
}

fn contact_ok(env: &Env<'_>, io: &mut Io<'_>, c: &Contact) -> bool {
    c.kid.bits() == env.cfg.bits
        && io.cache.verify_token(&env.params.authority_pk, &c.pk, &c.token)
        && derive_kid(&c.token, env.cfg.bits).ok() == Some(c.kid)
}

fn random_leaf_in(rng: &mut ChaCha8Rng, table: &RoutingTable, d: u16, bits: u16) -> Kid {
    let mut bytes = [0u8; 32];
    rng.fill_bytes(&mut bytes);
    table.sibling(d).leaf_within(bits, |i| bytes[i as usize / 8] >> (7 - i % 8) & 1 == 1)
}
