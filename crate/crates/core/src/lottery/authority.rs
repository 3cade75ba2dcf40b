use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::claim::{verify_claim, Claim, RejectReason, WinnerAnnouncement};
use super::params::{cl_order, commitment_of, winning_number, LotteryParams, Mode, WinningNumber};
use super::ticket::check_lotto_domain;
use super::LotteryError;
use crate::aggregation::{AggregateContainer, MisbehaviorProof};
use crate::crypto::{hash, issue_token, keygen, AuthToken, Digest256, Encoder, KeyPair, Nonce, PublicKey, VerifyCache};
use crate::overlay::{derive_kid, Kid};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlayerRecord {
    pub s: u64,
    pub pk: PublicKey,
    pub token: AuthToken,
    pub kid: Kid,
    pub sold_at_ms: u64,
    pub revoked: bool,
    pub claimed: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sale {
    pub s: u64,
    pub token: AuthToken,
    /// The same public key bought a ticket before.
    pub duplicate_pk: bool,
}

#[derive(Clone, Debug)]
pub struct SetupConfig {
    pub mode: Mode,
    pub bits: u16,
    pub l: u64,
    pub root_extra_sigs: u64,
    pub reward_count: usize,
    pub lotto_domain: Option<u64>,
    pub purchase_deadline_ms: u64,
    pub aggregation_start_ms: u64,
    pub epoch_ms: u64,
}

/// Root reported by a sampled player during winner identification.
#[derive(Clone, Debug)]
pub struct SampledRoot {
    pub player: PublicKey,
    pub root: Option<AggregateContainer>,
}

#[derive(Debug, Clone)]
pub struct Authority {
    keys: KeyPair,
    r_a: Nonce,
    params: LotteryParams,
    records: Vec<PlayerRecord>,
    by_pk: BTreeMap<PublicKey, Vec<usize>>,
    /// Sales allowed after the deadline (dishonest authority).
    pub sells_late: bool,
    revoked: BTreeSet<PublicKey>,
}

/// Key pair, `r_A`, and public parameters derived from `seed`.
pub fn authority_setup(seed: [u8; 32], cfg: &SetupConfig) -> Result<Authority, LotteryError> {
    if cfg.mode == Mode::Lo {
        check_lotto_domain(cfg.lotto_domain.unwrap_or(0))?;
    }
    if cfg.reward_count == 0 {
        return Err(LotteryError::Config("reward_count must be positive".into()));
    }
    let mut key_seed = Encoder::tagged("authority-key");
    key_seed.bytes(&seed);
    let keys = keygen(hash(&key_seed.finish()).0);
    let mut r_seed = Encoder::tagged("authority-r");
    r_seed.bytes(&seed);
    let r_a = Nonce(hash(&r_seed.finish()).0);
    let params = LotteryParams {
        mode: cfg.mode,
        authority_pk: keys.pk(),
        hash: "sha3-256".into(),
        domain_hash: "sha3-256 mod |L|".into(),
        commitment: commitment_of(&r_a),
        purchase_deadline_ms: cfg.purchase_deadline_ms,
        aggregation_start_ms: cfg.aggregation_start_ms,
        epoch_ms: vec![cfg.epoch_ms; cfg.bits as usize],
        bits: cfg.bits,
        l: cfg.l,
        root_extra_sigs: cfg.root_extra_sigs,
        reward_count: cfg.reward_count,
        lotto_domain: (cfg.mode == Mode::Lo).then_some(cfg.lotto_domain.unwrap_or(0)),
    };
    Ok(Authority {
        keys,
        r_a,
        params,
        records: Vec::new(),
        by_pk: BTreeMap::new(),
        sells_late: false,
        revoked: BTreeSet::new(),
    })
}

impl Authority {
    pub fn params(&self) -> &LotteryParams {
        &self.params
    }

    pub fn pk(&self) -> PublicKey {
        self.keys.pk()
    }

    pub(crate) fn keys(&self) -> &KeyPair {
        &self.keys
    }

    /// The secret `r_A`; only published with the announcement or leaked to a
    /// colluding adversary.
    pub fn r_a(&self) -> Nonce {
        self.r_a
    }

    pub fn records(&self) -> &[PlayerRecord] {
        &self.records
    }

    pub fn record(&self, pk: &PublicKey) -> Option<&PlayerRecord> {
        self.by_pk.get(pk).and_then(|v| v.first()).map(|&i| &self.records[i])
    }

    /// Kid a sale to `pk` would assign. Used by the simulator to bias
    /// issuance for clustered placement.
    pub fn preview_kid(&self, pk: &PublicKey) -> Kid {
        derive_kid(&issue_token(&self.keys, pk), self.params.bits).expect("bits validated at setup")
    }

    pub fn kid_taken(&self, kid: &Kid) -> bool {
        self.records.iter().any(|r| &r.kid == kid)
    }

    pub fn sell_ticket(&mut self, pk: PublicKey, now_ms: u64) -> Result<Sale, LotteryError> {
        if now_ms >= self.params.purchase_deadline_ms && !self.sells_late {
            return Err(LotteryError::AfterDeadline);
        }
        let token = issue_token(&self.keys, &pk);
        let kid = derive_kid(&token, self.params.bits).map_err(|e| LotteryError::Config(e.to_string()))?;
        let s = self.records.len() as u64 + 1;
        let duplicate_pk = self.by_pk.contains_key(&pk);
        self.by_pk.entry(pk).or_default().push(self.records.len());
        self.records.push(PlayerRecord { s, pk, token, kid, sold_at_ms: now_ms, revoked: false, claimed: false });
        Ok(Sale { s, token, duplicate_pk })
    }

    /// Tickets sold before the purchase deadline.
    pub fn sold_before_deadline(&self) -> u64 {
        self.records.iter().filter(|r| r.sold_at_ms < self.params.purchase_deadline_ms).count() as u64
    }

    /// Revoke claim rights of a certainly deviating signer. Proofs with
    /// `c > l` may name a tricked honest player and revoke nothing.
    pub fn revoke(&mut self, proof: &MisbehaviorProof) -> bool {
        let pk = proof.signer();
        if !proof.certain || !proof.is_consistent(self.params.l) || !self.by_pk.contains_key(&pk) {
            return false;
        }
        for &i in &self.by_pk[&pk] {
            self.records[i].revoked = true;
        }
        self.revoked.insert(pk)
    }

    pub fn is_revoked(&self, pk: &PublicKey) -> bool {
        self.revoked.contains(pk)
    }

    /// Root hash confirmed by at least `majority` of the valid sampled
    /// responses.
    pub fn consensus_root(&self, sample: &[SampledRoot], majority: f64) -> Result<AggregateContainer, LotteryError> {
        let valid: Vec<&AggregateContainer> =
            sample.iter().filter_map(|s| s.root.as_ref()).filter(|r| r.depth() == 0 && r.is_well_formed()).collect();
        let mut tally: BTreeMap<Digest256, (usize, &AggregateContainer)> = BTreeMap::new();
        for r in &valid {
            tally.entry(r.h).or_insert((0, r)).0 += 1;
        }
        let best = tally
            .values()
            .max_by(|(n1, r1), (n2, r2)| n1.cmp(n2).then(r2.h.cmp(&r1.h)))
            .ok_or(LotteryError::NoConsensus { best: 0, valid: 0 })?;
        if (best.0 as f64) < majority * valid.len() as f64 {
            return Err(LotteryError::NoConsensus { best: best.0, valid: valid.len() });
        }
        Ok(best.1.clone())
    }

    /// Announcement for an agreed root. `published_r_a` lets a dishonest
    /// authority publish something other than its committed `r_A`.
    pub fn announce(
        &self,
        root: AggregateContainer,
        published_r_a: Option<Nonce>,
    ) -> Result<WinnerAnnouncement, LotteryError> {
        let n_w = winning_number(&self.params, &root.a, &self.r_a)?;
        let winners = match n_w {
            WinningNumber::Cl(n) => {
                let players: Vec<(Kid, u64)> = self
                    .records
                    .iter()
                    .filter(|r| r.sold_at_ms < self.params.purchase_deadline_ms || self.sells_late)
                    .map(|r| (r.kid, r.s))
                    .collect();
                cl_order(&n, &players).into_iter().take(self.params.reward_count).map(|i| players[i].0).collect()
            }
            WinningNumber::Lo(_) => Vec::new(),
        };
        Ok(WinnerAnnouncement { root, r_a: published_r_a.unwrap_or(self.r_a), n_w, winners })
    }

    pub fn identify_winners(&self, sample: &[SampledRoot], majority: f64) -> Result<WinnerAnnouncement, LotteryError> {
        let root = self.consensus_root(sample, majority)?;
        self.announce(root, None)
    }

    /// Verify a claim and mark the claimant as paid.
    pub fn process_claim(
        &mut self,
        claim: &Claim,
        announcement: &WinnerAnnouncement,
        cache: &mut VerifyCache,
    ) -> Result<(), RejectReason> {
        let record = self.record(&claim.pk).ok_or(RejectReason::NotRegistered)?.clone();
        if record.sold_at_ms >= self.params.purchase_deadline_ms && !self.sells_late {
            return Err(RejectReason::NotRegistered);
        }
        if record.revoked {
            return Err(RejectReason::Revoked);
        }
        if record.claimed {
            return Err(RejectReason::Duplicate);
        }
        verify_claim(claim, &self.params, announcement, Some(record.s), cache)?;
        for &i in &self.by_pk[&claim.pk] {
            self.records[i].claimed = true;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::verify_token;

    fn cfg(mode: Mode) -> SetupConfig {
        SetupConfig {
            mode,
            bits: 16,
            l: 3,
            root_extra_sigs: 3,
            reward_count: 1,
            lotto_domain: Some(16),
            purchase_deadline_ms: 1000,
            aggregation_start_ms: 2000,
            epoch_ms: 100,
        }
    }

    #[test]
    fn setup_commits_to_r_a() {
        let a = authority_setup([1; 32], &cfg(Mode::Cl)).unwrap();
        assert_eq!(commitment_of(&a.r_a()), a.params().commitment);
        assert_eq!(a.params().epoch_ms.len(), 16);
        let b = authority_setup([2; 32], &cfg(Mode::Cl)).unwrap();
        assert_ne!(a.params().commitment, b.params().commitment);
        assert_eq!(a.params().epoch_start(16), 2000);
        assert_eq!(a.params().epoch_start(15), 2100);
        assert_eq!(a.params().aggregation_end_ms(), 3600);
    }

    #[test]
    fn sales_are_numbered_and_tokens_verify() {
        let mut a = authority_setup([1; 32], &cfg(Mode::Cl)).unwrap();
        let pk = keygen([3; 32]).pk();
        let first = a.sell_ticket(pk, 0).unwrap();
        assert_eq!(first.s, 1);
        assert!(verify_token(&a.pk(), &pk, &first.token));
        let again = a.sell_ticket(pk, 1).unwrap();
        assert_eq!(again.s, 2);
        assert!(again.duplicate_pk);
        assert!(matches!(a.sell_ticket(keygen([4; 32]).pk(), 1000), Err(LotteryError::AfterDeadline)));
        a.sells_late = true;
        assert_eq!(a.sell_ticket(keygen([4; 32]).pk(), 1000).unwrap().s, 3);
        assert_eq!(a.sold_before_deadline(), 2);
    }

    #[test]
    fn consensus_threshold() {
        let a = authority_setup([1; 32], &cfg(Mode::Cl)).unwrap();
        let kid = Kid::from_bin("0").unwrap();
        let mut r1 = crate::aggregation::make_leaf_container(hash(b"1"), &kid);
        r1 = crate::aggregation::lift_container(&r1).unwrap();
        let mut r2 = crate::aggregation::make_leaf_container(hash(b"2"), &kid);
        r2 = crate::aggregation::lift_container(&r2).unwrap();
        let pk = keygen([0; 32]).pk();
        let sample = |k1: usize, k2: usize| -> Vec<SampledRoot> {
            std::iter::repeat_n(Some(r1.clone()), k1)
                .chain(std::iter::repeat_n(Some(r2.clone()), k2))
                .chain([None])
                .map(|root| SampledRoot { player: pk, root })
                .collect()
        };
        assert_eq!(a.consensus_root(&sample(12, 4), 0.75).unwrap(), r1);
        assert!(matches!(
            a.consensus_root(&sample(11, 5), 0.75),
            Err(LotteryError::NoConsensus { best: 11, valid: 16 })
        ));
    }
}
