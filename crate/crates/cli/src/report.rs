//! Summary of one scenario run.

use std::collections::BTreeMap;

use kadlot::crypto::Digest256;
use kadlot::lottery::WinnerAnnouncement;
use kadlot::simnet::{Outcome, ScenarioConfig, ScenarioResult};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProofCounts {
    pub certain: usize,
    pub uncertain: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageStats {
    pub mean_per_player: f64,
    pub max_per_player: u64,
    pub total: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Covers config, board, per-player roots and the event log.
    pub scenario_digest: Digest256,
    pub config: ScenarioConfig,
    pub outcome: Outcome,
    pub honest_agreement: f64,
    pub all_honest_checks_pass: bool,
    pub announcement: Option<WinnerAnnouncement>,
    pub check_pass_rates: BTreeMap<String, f64>,
    pub proofs: ProofCounts,
    pub messages: MessageStats,
    pub runtime_ms: u128,
}

impl RunReport {
    pub fn new(result: &ScenarioResult, runtime_ms: u128) -> Self {
        let proofs = result.all_proofs();
        let certain = proofs.iter().filter(|p| p.certain).count();
        Self {
            scenario_digest: result.digest(),
            config: result.config.clone(),
            outcome: result.outcome.clone(),
            honest_agreement: result.honest_agreement(),
            all_honest_checks_pass: result.all_honest_checks_pass(),
            announcement: result.announcement().cloned(),
            check_pass_rates: result.check_pass_rates(),
            proofs: ProofCounts { certain, uncertain: proofs.len() - certain },
            messages: MessageStats {
                mean_per_player: result.mean_msgs(),
                max_per_player: result.max_msgs(),
                total: result.players.iter().map(|p| p.traffic.msgs_sent).sum(),
            },
            runtime_ms,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match (&self.outcome, self.all_honest_checks_pass) {
            (Outcome::NoConsensus { .. }, _) => crate::exit::NO_CONSENSUS,
            (Outcome::Announced, true) => crate::exit::PASS,
            (Outcome::Announced, false) => crate::exit::VERIFICATION_FAILED,
        }
    }
}
