//! Tickets and initial aggregates.
//!
//! Layouts, each field length-prefixed:
//!
//! ```text
//! CL ticket:  s (u64 BE) | r (32)
//! LO ticket:  s (u64 BE) | n xor eta0(r) (u64 BE) | eta(n | s | r) (32)
//! LO proof:   eta( n (u64 BE) | s (u64 BE) | r (32) )
//! ```

use serde::{Deserialize, Serialize};

use super::{LotteryError, Mode};
use crate::crypto::{hash, hash_to_small_domain, Canonical, Digest256, Encoder, Nonce};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Ticket {
    Cl { s: u64, r: Nonce },
    Lo { s: u64, masked: u64, proof: Digest256 },
}

impl Ticket {
    pub fn s(&self) -> u64 {
        match self {
            Ticket::Cl { s, .. } | Ticket::Lo { s, .. } => *s,
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            Ticket::Cl { .. } => Mode::Cl,
            Ticket::Lo { .. } => Mode::Lo,
        }
    }
}

impl Canonical for Ticket {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            Ticket::Cl { s, r } => {
                enc.u64(*s).bytes(&r.0);
            }
            Ticket::Lo { s, masked, proof } => {
                enc.u64(*s).u64(*masked).digest(proof);
            }
        }
    }
}

/// `eta0(r)` over a lotto domain of `domain` numbers.
pub fn eta0_small(r: &Nonce, domain: u64) -> Result<u64, LotteryError> {
    hash_to_small_domain(&r.0, domain).map_err(|_| LotteryError::BadDomain(domain))
}

pub fn lotto_proof(n: u64, s: u64, r: &Nonce) -> Digest256 {
    let mut enc = Encoder::new();
    enc.u64(n).u64(s).bytes(&r.0);
    hash(&enc.finish())
}

pub fn check_lotto_domain(domain: u64) -> Result<(), LotteryError> {
    if domain >= 2 && domain.is_power_of_two() {
        Ok(())
    } else {
        Err(LotteryError::BadDomain(domain))
    }
}

/// Build a ticket. `n` and `domain` are required in LO mode.
pub fn build_ticket(
    mode: Mode,
    s: u64,
    r: &Nonce,
    n: Option<u64>,
    domain: Option<u64>,
) -> Result<Ticket, LotteryError> {
    match mode {
        Mode::Cl => Ok(Ticket::Cl { s, r: *r }),
        Mode::Lo => {
            let domain = domain.ok_or(LotteryError::BadDomain(0))?;
            check_lotto_domain(domain)?;
            let n = n.ok_or(LotteryError::NumberOutOfDomain(0, domain))?;
            if n >= domain {
                return Err(LotteryError::NumberOutOfDomain(n, domain));
            }
            Ok(Ticket::Lo { s, masked: n ^ eta0_small(r, domain)?, proof: lotto_proof(n, s, r) })
        }
    }
}

/// `a_i = eta(ticket_i)`.
pub fn initial_aggregate(ticket: &Ticket) -> Digest256 {
    ticket.canonical_digest()
}

/// Recover `n` from an LO ticket and check its proof against `(n, s, r)`.
pub fn open_lotto(ticket: &Ticket, r: &Nonce, domain: u64) -> Result<u64, LotteryError> {
    let Ticket::Lo { s, masked, proof } = ticket else {
        return Err(LotteryError::WrongMode);
    };
    let n = masked ^ eta0_small(r, domain)?;
    if n >= domain || lotto_proof(n, *s, r) != *proof {
        return Err(LotteryError::ProofMismatch);
    }
    Ok(n)
}
