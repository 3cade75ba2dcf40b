use serde::{Deserialize, Serialize};

use super::params::{winning_number, LotteryParams, WinningNumber};
use super::ticket::{initial_aggregate, open_lotto, Ticket};
use crate::aggregation::{verify_confirmed, AggregateContainer, ConfirmedContainer, VerifyRules};
use crate::crypto::{AuthToken, Canonical, Encoder, KeyPair, Nonce, PublicKey, SignatureBytes, VerifyCache};
use crate::overlay::{derive_kid, Kid, SubtreeId};

/// Published outcome of winner identification.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct WinnerAnnouncement {
    pub root: AggregateContainer,
    pub r_a: Nonce,
    pub n_w: WinningNumber,
    /// CL: winning Kids in order. Empty in LO mode.
    pub winners: Vec<Kid>,
}

impl Canonical for WinnerAnnouncement {
    fn encode(&self, enc: &mut Encoder) {
        enc.nested(&self.root).bytes(&self.r_a.0).nested(&self.n_w).list(&self.winners);
    }
}

/// LO winner's opening of its commitment.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct LottoOpening {
    pub ticket: Ticket,
    pub s: u64,
    pub r: Nonce,
    pub n: u64,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Claim {
    pub pk: PublicKey,
    pub token: AuthToken,
    /// Confirmed containers from the leaf (index 0) up to the root.
    pub chain: Vec<ConfirmedContainer>,
    pub lotto: Option<LottoOpening>,
    pub sig: SignatureBytes,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum RejectReason {
    #[error("claim signature does not verify")]
    BadSignature,
    #[error("authorization token does not verify")]
    BadToken,
    #[error("claimant is not a registered player")]
    NotRegistered,
    #[error("claimant's claim rights were revoked")]
    Revoked,
    #[error("claimant is not among the winners")]
    NotAWinner,
    #[error("claim already accepted for this player")]
    Duplicate,
    #[error("container chain has wrong length {0}")]
    ChainLength(usize),
    #[error("leaf container does not belong to the claimant")]
    LeafMismatch,
    #[error("container at depth {0} is not the parent of the one below")]
    BrokenChain(u16),
    #[error("chain root differs from the announced root")]
    RootMismatch,
    #[error("container at depth {0} is not properly confirmed")]
    Unconfirmed(u16),
    #[error("lotto opening missing")]
    MissingOpening,
    #[error("sequence number does not match the registration")]
    SequenceMismatch,
    #[error("lotto proof hash mismatch")]
    ProofMismatch,
    #[error("ticket hash differs from the leaf aggregate")]
    TicketMismatch,
}

fn claim_message(
    pk: &PublicKey,
    token: &AuthToken,
    chain: &[ConfirmedContainer],
    lotto: &Option<LottoOpening>,
) -> Vec<u8> {
    let mut enc = Encoder::tagged("claim");
    enc.bytes(&pk.0).bytes(&token.0 .0);
    enc.u32(chain.len() as u32);
    for cc in chain {
        enc.digest(&cc.container.h);
    }
    match lotto {
        None => enc.u8(0),
        Some(o) => enc.u8(1).nested(&o.ticket).u64(o.s).bytes(&o.r.0).u64(o.n),
    };
    enc.finish()
}

pub fn make_claim(
    keys: &KeyPair,
    token: &AuthToken,
    chain: Vec<ConfirmedContainer>,
    lotto: Option<LottoOpening>,
) -> Claim {
    let sig = keys.sign(&claim_message(&keys.pk(), token, &chain, &lotto));
    Claim { pk: keys.pk(), token: *token, chain, lotto, sig }
}

impl Canonical for Claim {
    fn encode(&self, enc: &mut Encoder) {
        enc.bytes(&self.pk.0).bytes(&self.token.0 .0).list(&self.chain);
        match &self.lotto {
            None => enc.u8(0),
            Some(o) => enc.u8(1).nested(&o.ticket).u64(o.s).bytes(&o.r.0).u64(o.n),
        };
        enc.bytes(&self.sig.0);
    }
}

impl Claim {
    pub fn signature_ok(&self) -> bool {
        crate::crypto::verify(&self.pk, &claim_message(&self.pk, &self.token, &self.chain, &self.lotto), &self.sig)
    }

    pub fn kid(&self, bits: u16) -> Option<Kid> {
        derive_kid(&self.token, bits).ok()
    }
}

/// Leaf-to-root chain checks: shape, linkage, confirmation, and the root.
pub fn check_chain(
    chain: &[ConfirmedContainer],
    kid: &Kid,
    root: &AggregateContainer,
    rules: VerifyRules<'_>,
    cache: &mut VerifyCache,
) -> Result<(), RejectReason> {
    if chain.len() != rules.bits as usize + 1 {
        return Err(RejectReason::ChainLength(chain.len()));
    }
    let leaf = &chain[0].container;
    if !leaf.is_leaf() || leaf.subtree != SubtreeId::of(kid, rules.bits) {
        return Err(RejectReason::LeafMismatch);
    }
    for pair in chain.windows(2) {
        if !pair[1].container.has_child(&pair[0].container) {
            return Err(RejectReason::BrokenChain(pair[1].container.depth()));
        }
    }
    for cc in chain {
        verify_confirmed(cc, rules, cache, |_| true).map_err(|_| RejectReason::Unconfirmed(cc.container.depth()))?;
    }
    if chain[rules.bits as usize].container != *root {
        return Err(RejectReason::RootMismatch);
    }
    Ok(())
}

/// Claim checks that need no authority state beyond the claimant's
/// registered sequence number.
pub fn verify_claim(
    claim: &Claim,
    params: &LotteryParams,
    announcement: &WinnerAnnouncement,
    registered_s: Option<u64>,
    cache: &mut VerifyCache,
) -> Result<(), RejectReason> {
    if !claim.signature_ok() {
        return Err(RejectReason::BadSignature);
    }
    if !cache.verify_token(&params.authority_pk, &claim.pk, &claim.token) {
        return Err(RejectReason::BadToken);
    }
    let kid = claim.kid(params.bits).ok_or(RejectReason::BadToken)?;
    let rules = VerifyRules {
        authority: &params.authority_pk,
        bits: params.bits,
        l: params.l,
        root_extra: params.root_extra_sigs,
    };
    match announcement.n_w {
        WinningNumber::Cl(_) => {
            if !announcement.winners.contains(&kid) {
                return Err(RejectReason::NotAWinner);
            }
        }
        WinningNumber::Lo(n_w) => {
            let o = claim.lotto.as_ref().ok_or(RejectReason::MissingOpening)?;
            if registered_s.is_some_and(|s| s != o.s) || o.ticket.s() != o.s {
                return Err(RejectReason::SequenceMismatch);
            }
            let domain = params.lotto_domain.unwrap_or(0);
            let n = open_lotto(&o.ticket, &o.r, domain).map_err(|_| RejectReason::ProofMismatch)?;
            if n != o.n {
                return Err(RejectReason::ProofMismatch);
            }
            if n != n_w {
                return Err(RejectReason::NotAWinner);
            }
            if claim.chain.first().map(|cc| cc.container.a) != Some(initial_aggregate(&o.ticket)) {
                return Err(RejectReason::TicketMismatch);
            }
        }
    }
    check_chain(&claim.chain, &kid, &announcement.root, rules, cache)
}

/// Recompute `n_w` from the announcement.
pub fn announced_number_ok(params: &LotteryParams, a: &WinnerAnnouncement) -> bool {
    winning_number(params, &a.root.a, &a.r_a).is_ok_and(|n| n == a.n_w)
}
