//! Lottery roles: authority setup and sales, tickets, winner identification,
//! claims, and outcome verification in CL and LO modes.

mod authority;
mod claim;
mod params;
mod ticket;
mod verify;

pub use authority::{authority_setup, Authority, PlayerRecord, Sale, SampledRoot, SetupConfig};
pub use claim::{
    announced_number_ok, check_chain, make_claim, verify_claim, Claim, LottoOpening, RejectReason, WinnerAnnouncement,
};
pub use params::{cl_compare, cl_order, commitment_of, winning_number, LotteryParams, Mode, WinningNumber};
pub use ticket::{build_ticket, check_lotto_domain, eta0_small, initial_aggregate, lotto_proof, open_lotto, Ticket};
pub use verify::{verify_outcome, Board, CheckResult, PlayerView, VerificationReport, CHECK_NAMES};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum LotteryError {
    #[error("lotto domain {0} must be a power of two of at least 2")]
    BadDomain(u64),
    #[error("lotto number {0} outside [0, {1})")]
    NumberOutOfDomain(u64, u64),
    #[error("ticket sale after the purchase deadline")]
    AfterDeadline,
    #[error("operation needs a ticket of the other mode")]
    WrongMode,
    #[error("lotto proof does not match")]
    ProofMismatch,
    #[error("no root reached the sample majority ({best} of {valid} valid responses)")]
    NoConsensus { best: usize, valid: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}
