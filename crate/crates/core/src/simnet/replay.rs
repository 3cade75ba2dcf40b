//! Offline verification: rebuild the board from `board.*` log records and
//! re-run every check that needs only published data.

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::engine::{BoardItem, BoardState};
use super::log::{EventLog, LogRecord, BOARD_PREFIX};
use crate::crypto::VerifyCache;
use crate::lottery::{verify_outcome, CheckResult, VerificationReport};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("line {line}: malformed {event} record: {detail}")]
    Malformed { line: usize, event: String, detail: String },
    #[error("log carries no board parameters")]
    NoBoard,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OfflineVerdict {
    pub board: BoardState,
    /// `None` when the run aborted without an announcement.
    pub report: Option<VerificationReport>,
}

impl OfflineVerdict {
    pub fn aborted(&self) -> bool {
        self.report.is_none()
    }

    pub fn passed(&self) -> bool {
        self.report.as_ref().is_some_and(VerificationReport::all_passed)
    }
}

fn field<T: DeserializeOwned>(line: usize, r: &LogRecord) -> Result<T, ReplayError> {
    let malformed = |detail: String| ReplayError::Malformed { line, event: r.event.clone(), detail };
    let value = r.payload.clone().ok_or_else(|| malformed("missing payload".into()))?;
    serde_json::from_value(value).map_err(|e| malformed(e.to_string()))
}

fn item(line: usize, r: &LogRecord) -> Result<BoardItem, ReplayError> {
    Ok(match &r.event[BOARD_PREFIX.len()..] {
        "params" => BoardItem::Params(field(line, r)?),
        "published_n" => BoardItem::PublishedN(field(line, r)?),
        "announcement" => BoardItem::Announcement(field(line, r)?),
        "claim" => BoardItem::Claim(Box::new(field(line, r)?)),
        "proof" => BoardItem::Proof(field(line, r)?),
        "abort" => {
            #[derive(Deserialize)]
            struct Abort {
                best: usize,
                valid: usize,
            }
            let a: Abort = field(line, r)?;
            BoardItem::Abort { best: a.best, valid: a.valid }
        }
        other => {
            return Err(ReplayError::Malformed {
                line,
                event: r.event.clone(),
                detail: format!("unknown item {other}"),
            })
        }
    })
}

/// Replay the board and verify it. Digest mismatches and invalid proofs are
/// reported as failed checks, not errors.
pub fn verify_log(log: &EventLog) -> Result<OfflineVerdict, ReplayError> {
    let mut board = BoardState::default();
    let mut mismatches = Vec::new();
    for (i, r) in log.records().iter().enumerate() {
        if !r.event.starts_with(BOARD_PREFIX) {
            continue;
        }
        let it = item(i + 1, r)?;
        if it.digest() != r.payload_digest {
            mismatches.push(format!("line {}: {}", i + 1, r.event));
        }
        board.apply(&it);
    }
    let params = board.params.clone().ok_or(ReplayError::NoBoard)?;
    let Some(published) = board.to_board() else {
        return Ok(OfflineVerdict { board, report: None });
    };
    let mut cache = VerifyCache::new();
    let mut report = verify_outcome(None, &published, &mut cache);
    report.checks.push(CheckResult {
        name: "board_digests".into(),
        passed: mismatches.is_empty(),
        detail: mismatches.join("; "),
    });
    let bad_proofs =
        published.proofs.iter().filter(|p| !p.verify(&params.authority_pk, params.bits, params.l, &mut cache)).count();
    report.checks.push(CheckResult {
        name: "proofs".into(),
        passed: bad_proofs == 0,
        detail: if bad_proofs == 0 { String::new() } else { format!("{bad_proofs} published proofs do not verify") },
    });
    Ok(OfflineVerdict { board, report: Some(report) })
}
