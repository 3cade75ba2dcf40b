use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::ticket::eta0_small;
use super::LotteryError;
use crate::crypto::{hash, Canonical, Digest256, Encoder, Nonce, PublicKey};
use crate::overlay::{BitString, Kid};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Cl,
    Lo,
}

/// Public lottery parameters fixed at setup.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct LotteryParams {
    pub mode: Mode,
    pub authority_pk: PublicKey,
    pub hash: String,
    pub domain_hash: String,
    /// `eta(eta(r_A))`.
    pub commitment: Digest256,
    pub purchase_deadline_ms: u64,
    pub aggregation_start_ms: u64,
    /// Duration of the epoch for depth `d` at index `B - d`.
    pub epoch_ms: Vec<u64>,
    pub bits: u16,
    pub l: u64,
    pub root_extra_sigs: u64,
    pub reward_count: usize,
    /// Lotto domain size `|L|`; LO only.
    pub lotto_domain: Option<u64>,
}

impl LotteryParams {
    /// Start of the epoch window for depth `d`.
    pub fn epoch_start(&self, d: u16) -> u64 {
        let idx = (self.bits - d) as usize;
        self.aggregation_start_ms + self.epoch_ms[..idx].iter().sum::<u64>()
    }

    pub fn epoch_end(&self, d: u16) -> u64 {
        self.epoch_start(d) + self.epoch_ms[(self.bits - d) as usize]
    }

    pub fn aggregation_end_ms(&self) -> u64 {
        self.aggregation_start_ms + self.epoch_ms.iter().sum::<u64>()
    }
}

impl Canonical for LotteryParams {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(self.mode as u8)
            .bytes(&self.authority_pk.0)
            .bytes(self.hash.as_bytes())
            .bytes(self.domain_hash.as_bytes())
            .digest(&self.commitment)
            .u64(self.purchase_deadline_ms)
            .u64(self.aggregation_start_ms);
        enc.u32(self.epoch_ms.len() as u32);
        for e in &self.epoch_ms {
            enc.u64(*e);
        }
        enc.u16(self.bits)
            .u64(self.l)
            .u64(self.root_extra_sigs)
            .u64(self.reward_count as u64)
            .u64(self.lotto_domain.unwrap_or(0));
    }
}

pub fn commitment_of(r_a: &Nonce) -> Digest256 {
    hash(&hash(&r_a.0).0)
}

/// `n_w`: a 256-bit value in CL mode, an element of `[0, |L|)` in LO mode.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WinningNumber {
    Cl(Digest256),
    Lo(u64),
}

impl Canonical for WinningNumber {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            WinningNumber::Cl(d) => enc.u8(0).digest(d),
            WinningNumber::Lo(n) => enc.u8(1).u64(*n),
        };
    }
}

/// `n_w = eta0(a_R) xor eta0(r_A)`.
pub fn winning_number(params: &LotteryParams, a_r: &Digest256, r_a: &Nonce) -> Result<WinningNumber, LotteryError> {
    match params.mode {
        Mode::Cl => Ok(WinningNumber::Cl(hash(&a_r.0).xor(&hash(&r_a.0)))),
        Mode::Lo => {
            let domain = params.lotto_domain.ok_or(LotteryError::BadDomain(0))?;
            Ok(WinningNumber::Lo(eta0_small(&Nonce(a_r.0), domain)? ^ eta0_small(r_a, domain)?))
        }
    }
}

/// CL ranking key comparison: XOR distance between the first `B` bits of
/// `n_w` and the Kid, ties by `n_w xor s` as a 256-bit integer.
pub fn cl_compare(n_w: &Digest256, a: (&Kid, u64), b: (&Kid, u64)) -> Ordering {
    let target = Kid(BitString::from_bytes(&n_w.0, a.0.bits()));
    let da = crate::overlay::xor_unchecked(a.0, &target);
    let db = crate::overlay::xor_unchecked(b.0, &target);
    da.cmp(&db).then_with(|| tie_key(n_w, a.1).cmp(&tie_key(n_w, b.1)))
}

fn tie_key(n_w: &Digest256, s: u64) -> Digest256 {
    let mut s_wide = [0u8; 32];
    s_wide[24..].copy_from_slice(&s.to_be_bytes());
    n_w.xor(&Digest256(s_wide))
}

/// Indices of `players` in winning order.
pub fn cl_order(n_w: &Digest256, players: &[(Kid, u64)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..players.len()).collect();
    idx.sort_by(|&i, &j| cl_compare(n_w, (&players[i].0, players[i].1), (&players[j].0, players[j].1)));
    idx
}
