//! Deterministic discrete-event simulation of a full lottery run.

mod authority_node;
pub mod config;
mod engine;
pub mod log;
pub mod message;
pub mod placement;
mod player;
mod replay;
mod scenario;

pub use config::{AuthorityConduct, Placement, ScenarioConfig, Strategy, StrategyShare};
pub use engine::{BoardState, Traffic};
pub use log::{EventLog, LogRecord, BOARD_PREFIX};
pub use replay::{verify_log, OfflineVerdict, ReplayError};
pub use scenario::{run_scenario, Outcome, PlayerOutcome, ScenarioResult};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
}
