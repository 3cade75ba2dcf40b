//! Scenario setup, the event loop, and the result summary.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::authority_node::AuthorityNode;
use super::config::{ScenarioConfig, Strategy};
use super::engine::{
    log_record, BoardItem, BoardState, EventKind, EventQueue, Io, Network, Out, Sender, Timer, Traffic,
};
use super::log::EventLog;
use super::message::{Envelope, Payload, AUTHORITY};
use super::placement::{labelled_rng, plan_players};
use super::player::{Env, Player};
use super::SimError;
use crate::aggregation::{Bloc, MisbehaviorProof};
use crate::crypto::{hash, Canonical, Digest256, Encoder, KeyPair, PublicKey, VerifyCache};
use crate::lottery::{authority_setup, LotteryParams, SetupConfig, VerificationReport, WinnerAnnouncement};
use crate::overlay::{Kid, NodeId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Announced,
    NoConsensus { best: usize, valid: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlayerOutcome {
    pub addr: u32,
    pub strategy: Strategy,
    pub pk: PublicKey,
    pub kid: Option<Kid>,
    pub s: Option<u64>,
    /// Secret lotto number (LO only).
    pub lotto_n: Option<u64>,
    /// Initial aggregate.
    pub leaf_a: Option<Digest256>,
    pub root: Option<Digest256>,
    pub root_a: Option<Digest256>,
    pub root_c: Option<u64>,
    /// Honest players only.
    pub report: Option<VerificationReport>,
    pub claim_accepted: Option<bool>,
    pub traffic: Traffic,
    /// Final key pair, kept out of serialized results.
    #[serde(skip)]
    pub keys: Option<KeyPair>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioResult {
    /// Resolved configuration, every default materialized.
    pub config: ScenarioConfig,
    pub outcome: Outcome,
    pub board: BoardState,
    pub players: Vec<PlayerOutcome>,
    pub authority_traffic: Traffic,
    /// Proofs found by players, whether or not the authority published them.
    pub observed_proofs: Vec<MisbehaviorProof>,
    pub end_time_ms: u64,
    #[serde(skip)]
    pub log: EventLog,
}

impl ScenarioResult {
    pub fn announcement(&self) -> Option<&WinnerAnnouncement> {
        self.board.announcement.as_ref()
    }

    pub fn honest(&self) -> impl Iterator<Item = &PlayerOutcome> {
        self.players.iter().filter(|p| p.strategy.is_honest())
    }

    /// Root every honest player is measured against: the announced root,
    /// or the most common honest root without an announcement.
    pub fn reference_root(&self) -> Option<Digest256> {
        if let Some(a) = self.announcement() {
            return Some(a.root.h);
        }
        let mut counts: BTreeMap<Digest256, usize> = BTreeMap::new();
        for p in self.honest() {
            if let Some(r) = p.root {
                *counts.entry(r).or_default() += 1;
            }
        }
        crate::aggregation::majority_select(&counts)
    }

    /// Fraction of honest players holding the reference root.
    pub fn honest_agreement(&self) -> f64 {
        let honest: Vec<&PlayerOutcome> = self.honest().collect();
        if honest.is_empty() {
            return 1.0;
        }
        let reference = self.reference_root();
        let agree = honest.iter().filter(|p| p.root.is_some() && p.root == reference).count();
        agree as f64 / honest.len() as f64
    }

    /// Every honest player produced a report and every check passed.
    pub fn all_honest_checks_pass(&self) -> bool {
        self.outcome == Outcome::Announced
            && self.honest().all(|p| p.report.as_ref().is_some_and(VerificationReport::all_passed))
    }

    /// Pass rate per check over honest players' reports.
    pub fn check_pass_rates(&self) -> BTreeMap<String, f64> {
        let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        let honest = self.honest().count();
        for p in self.honest() {
            for c in p.report.iter().flat_map(|r| &r.checks) {
                let e = tally.entry(c.name.clone()).or_default();
                e.0 += c.passed as usize;
            }
        }
        for name in crate::lottery::CHECK_NAMES {
            tally.entry(name.to_string()).or_default().1 = honest;
        }
        tally
            .into_iter()
            .map(|(k, (pass, total))| (k, if total == 0 { 0.0 } else { pass as f64 / total as f64 }))
            .collect()
    }

    /// Published proofs, then any observed ones the board lacks.
    pub fn all_proofs(&self) -> Vec<&MisbehaviorProof> {
        let mut out: Vec<&MisbehaviorProof> = self.board.proofs.iter().collect();
        for p in &self.observed_proofs {
            if !out.iter().any(|q| q.signer() == p.signer() && q.certain == p.certain) {
                out.push(p);
            }
        }
        out
    }

    /// Share of dishonest players named in at least one proof.
    pub fn detection_rate(&self) -> f64 {
        let dishonest: BTreeSet<PublicKey> =
            self.players.iter().filter(|p| p.strategy == Strategy::Equivocator).map(|p| p.pk).collect();
        if dishonest.is_empty() {
            return 0.0;
        }
        let named: BTreeSet<PublicKey> = self.all_proofs().iter().map(|p| p.signer()).collect();
        dishonest.intersection(&named).count() as f64 / dishonest.len() as f64
    }

    pub fn mean_msgs(&self) -> f64 {
        if self.players.is_empty() {
            return 0.0;
        }
        self.players.iter().map(|p| p.traffic.msgs_sent as f64).sum::<f64>() / self.players.len() as f64
    }

    pub fn max_msgs(&self) -> u64 {
        self.players.iter().map(|p| p.traffic.msgs_sent).max().unwrap_or(0)
    }

    /// Digest over the resolved config, board, per-player roots, and the log.
    pub fn digest(&self) -> Digest256 {
        let mut enc = Encoder::tagged("scenario-result");
        enc.bytes(serde_json::to_string(&self.config).expect("config serializes").as_bytes());
        enc.bytes(serde_json::to_string(&self.board).expect("board serializes").as_bytes());
        for p in &self.players {
            enc.u32(p.addr);
            enc.bytes(p.root.map(|r| r.0.to_vec()).unwrap_or_default().as_slice());
        }
        enc.digest(&self.log.digest());
        hash(&enc.finish())
    }
}

struct Sim {
    cfg: ScenarioConfig,
    params: LotteryParams,
    queue: EventQueue,
    net: Network,
    players: Vec<Player>,
    authority: AuthorityNode,
    traffic: Vec<Traffic>,
    board: BoardState,
    log: EventLog,
    cache: VerifyCache,
    observed: Vec<MisbehaviorProof>,
    now: u64,
}

/// Run one seeded scenario through purchase, aggregation, identification,
/// claiming and verification.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioResult, SimError> {
    let cfg = config.resolve()?;
    let mut seed = Encoder::tagged("authority-seed");
    seed.u64(cfg.seed);
    let mut authority = authority_setup(
        hash(&seed.finish()).0,
        &SetupConfig {
            mode: cfg.mode,
            bits: cfg.bits,
            l: cfg.l,
            root_extra_sigs: cfg.root_extra_sigs,
            reward_count: cfg.reward_count,
            lotto_domain: Some(cfg.lotto_domain),
            purchase_deadline_ms: cfg.deadline(),
            aggregation_start_ms: cfg.aggregation_start(),
            epoch_ms: cfg.epoch_ms,
        },
    )
    .map_err(|e| SimError::Config(e.to_string()))?;
    authority.sells_late = cfg.authority.sells_late;
    let params = authority.params().clone();
    let plan = plan_players(&cfg, |k| authority.preview_kid(&k.pk()))?;
    let net_seed = cfg.network_seed.expect("resolved");

    let mut players: Vec<Player> = plan.into_iter().map(|p| Player::new(p, &cfg)).collect();
    if let Some(prefix) = cfg.cluster_prefix() {
        let members: BTreeSet<PublicKey> = players
            .iter()
            .filter(|p| p.strategy() == Strategy::ColludingRootManipulator)
            .filter(|p| prefix.contains(&authority.preview_kid(&p.keys.pk())))
            .map(|p| p.keys.pk())
            .collect();
        if !members.is_empty() {
            // The bloc learns r_A out of band and derives which variant to release.
            let mut enc = Encoder::tagged("bloc-variant");
            enc.bytes(&authority.r_a().0);
            let leave_out = hash(&enc.finish()).0[0] & 1 == 1;
            let withheld = leave_out.then(|| *members.iter().next().expect("non-empty"));
            let bloc = Arc::new(Bloc { members: members.clone(), prefix, withheld });
            for p in players.iter_mut().filter(|p| members.contains(&p.keys.pk())) {
                p.bloc = Some(bloc.clone());
            }
        }
    }

    let mut sim = Sim {
        net: Network {
            rng: labelled_rng(net_seed, "network", 0),
            latency: (cfg.latency_min_ms, cfg.latency_max_ms),
            drop_rate: cfg.drop_rate,
        },
        authority: AuthorityNode::new(authority, &cfg, labelled_rng(net_seed, "authority", 0)),
        traffic: vec![Traffic::default(); players.len() + 1],
        players,
        params,
        queue: EventQueue::default(),
        board: BoardState::default(),
        log: EventLog::default(),
        cache: VerifyCache::new(),
        observed: Vec::new(),
        now: 0,
        cfg,
    };
    sim.schedule();
    sim.run();
    Ok(sim.finish())
}

impl Sim {
    fn schedule(&mut self) {
        let item = BoardItem::Params(self.params.clone());
        self.publish(AUTHORITY, item);
        let deadline = self.cfg.deadline();
        let agg_start = self.cfg.aggregation_start();
        let agg_end = self.params.aggregation_end_ms();
        let t = self.cfg.timeout_ms;
        let query_at = agg_end + 1;
        let identify_at = query_at + 2 * t;
        let read_at = identify_at + 1;
        let verify_at = read_at + 2 * t;
        self.queue.push(deadline, EventKind::Timer { actor: AUTHORITY, timer: Timer::Deadline });
        self.queue.push(query_at, EventKind::Timer { actor: AUTHORITY, timer: Timer::QueryRoots });
        self.queue.push(identify_at, EventKind::Timer { actor: AUTHORITY, timer: Timer::Identify });
        let refresh_span = (self.cfg.warmup_ms / 4).max(1);
        for i in 0..self.players.len() {
            let addr = self.players[i].addr();
            let late = self.players[i].strategy() == Strategy::LateJoiner;
            let buy_at = self.players[i].plan.buy_at_ms;
            self.queue.push(buy_at, EventKind::Timer { actor: addr, timer: Timer::Buy });
            if !late {
                let jitter = rand::Rng::gen_range(&mut self.net.rng, 0..refresh_span);
                self.queue.push(deadline + jitter, EventKind::Timer { actor: addr, timer: Timer::Refresh });
                self.queue.push(agg_start, EventKind::Timer { actor: addr, timer: Timer::Snapshot });
            }
            self.queue.push(read_at, EventKind::Timer { actor: addr, timer: Timer::ReadBoard });
            self.queue.push(verify_at, EventKind::Timer { actor: addr, timer: Timer::Verify });
        }
    }

    fn run(&mut self) {
        while let Some((time, kind)) = self.queue.pop() {
            self.now = time;
            match kind {
                EventKind::Timer { actor, timer } => {
                    if actor == AUTHORITY {
                        let mut io = Io { now: time, cache: &mut self.cache, out: Vec::new() };
                        self.authority.on_timer(&mut io, timer);
                        let out = io.out;
                        self.apply(actor, out);
                    } else {
                        let i = actor.0 as usize - 1;
                        let env = Env { cfg: &self.cfg, params: &self.params, board: &self.board };
                        let mut io = Io { now: time, cache: &mut self.cache, out: Vec::new() };
                        self.players[i].on_timer(&env, &mut io, timer);
                        let out = io.out;
                        self.apply(actor, out);
                    }
                }
                EventKind::Deliver(env) => self.deliver(*env),
            }
        }
    }

    fn deliver(&mut self, env: Envelope) {
        let to = env.to;
        if let Some(t) = self.traffic.get_mut(to.0 as usize) {
            t.msgs_received += 1;
        }
        if self.cfg.log_messages {
            log_record(
                &mut self.log,
                self.now,
                to,
                format!("recv.{}", env.payload.kind()),
                env.payload.canonical_digest(),
                None,
                None,
            );
        }
        if !env.authentic(self.cfg.sign_envelopes) {
            log_record(
                &mut self.log,
                self.now,
                to,
                "drop.unauthentic".into(),
                env.payload.canonical_digest(),
                None,
                None,
            );
            return;
        }
        let kid = env.sender_kid(&self.params.authority_pk, self.cfg.bits, &mut self.cache);
        let sender = Sender { addr: env.from, pk: env.pk, kid, token: kid.and(env.token) };
        let mut io = Io { now: self.now, cache: &mut self.cache, out: Vec::new() };
        if to == AUTHORITY {
            self.authority.on_message(&mut io, sender, env.payload);
        } else {
            let penv = Env { cfg: &self.cfg, params: &self.params, board: &self.board };
            self.players[to.0 as usize - 1].on_message(&penv, &mut io, sender, env.payload);
        }
        let out = io.out;
        self.apply(to, out);
    }

    fn apply(&mut self, actor: NodeId, out: Vec<Out>) {
        for o in out {
            match o {
                Out::Send { to, payload } => self.send(actor, to, payload),
                Out::Timer { at, timer } => self.queue.push(at.max(self.now), EventKind::Timer { actor, timer }),
                Out::Event { event, payload, proof } => {
                    if let Some(p) = &proof {
                        if !self.observed.iter().any(|q| q.signer() == p.signer()) {
                            self.observed.push(p.clone());
                        }
                    }
                    let digest = match (&proof, &payload) {
                        (Some(p), _) => p.canonical_digest(),
                        (None, Some(v)) => hash(v.to_string().as_bytes()),
                        (None, None) => hash(event.as_bytes()),
                    };
                    log_record(&mut self.log, self.now, actor, event, digest, proof, payload);
                }
                Out::Publish(item) => self.publish(actor, item),
            }
        }
    }

    fn publish(&mut self, actor: NodeId, item: BoardItem) {
        self.board.apply(&item);
        let proof = match &item {
            BoardItem::Proof(p) => Some(p.clone()),
            _ => None,
        };
        log_record(&mut self.log, self.now, actor, item.event().into(), item.digest(), proof, Some(item.json()));
    }

    fn send(&mut self, from: NodeId, to: NodeId, payload: Payload) {
        let sign = self.cfg.sign_envelopes;
        let env = if from == AUTHORITY {
            Envelope::seal(self.authority.auth.keys(), from, to, None, payload, sign)
        } else {
            let p = &self.players[from.0 as usize - 1];
            Envelope::seal(&p.keys, from, to, p.token, payload, sign)
        };
        let t = &mut self.traffic[from.0 as usize];
        t.msgs_sent += 1;
        t.bytes_sent += env.wire_len() as u64;
        if self.cfg.log_messages {
            log_record(
                &mut self.log,
                self.now,
                from,
                format!("send.{}", env.payload.kind()),
                env.payload.canonical_digest(),
                None,
                None,
            );
        }
        if to.0 as usize >= self.traffic.len() {
            return;
        }
        if let Some(delay) = self.net.transit() {
            self.queue.push(self.now + delay, EventKind::Deliver(Box::new(env)));
        }
    }

    fn finish(self) -> ScenarioResult {
        let players = self
            .players
            .iter()
            .map(|p| {
                let root = p.node.as_ref().and_then(|n| n.root());
                PlayerOutcome {
                    addr: p.plan.addr,
                    strategy: p.strategy(),
                    pk: p.keys.pk(),
                    kid: p.kid,
                    s: p.s,
                    lotto_n: p.plan.lotto_n,
                    leaf_a: p.a(),
                    root: root.map(|r| r.h),
                    root_a: root.map(|r| r.a),
                    root_c: root.map(|r| r.c),
                    report: p.report.clone(),
                    claim_accepted: p.claim.as_ref().map(Result::is_ok),
                    traffic: self.traffic[p.plan.addr as usize],
                    keys: Some(p.keys.clone()),
                }
            })
            .collect();
        let outcome = match self.authority.no_consensus {
            Some((best, valid)) => Outcome::NoConsensus { best, valid },
            None => Outcome::Announced,
        };
        ScenarioResult {
            config: self.cfg,
            outcome,
            board: self.board,
            players,
            authority_traffic: self.traffic[0],
            observed_proofs: self.observed,
            end_time_ms: self.now,
            log: self.log,
        }
    }
}
