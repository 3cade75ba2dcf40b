use serde::{Deserialize, Serialize};

use crate::aggregation::MisbehaviorProof;
use crate::crypto::{hash, Digest256};

/// One line of the JSON-lines event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub time: u64,
    pub actor: String,
    pub event: String,
    pub payload_digest: Digest256,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proof: Option<MisbehaviorProof>,
    /// Full payload; present for board publications and protocol events.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<serde_json::Value>,
}

/// Board publications use this event prefix; offline verification replays
/// only these records.
pub const BOARD_PREFIX: &str = "board.";

/// Append-only event log.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventLog {
    records: Vec<LogRecord>,
}

impl EventLog {
    pub fn push(&mut self, record: LogRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("log records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records =
            text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { records })
    }

    /// Hash of the JSON-lines rendering.
    pub fn digest(&self) -> Digest256 {
        hash(self.to_jsonl().as_bytes())
    }
}

pub fn actor_name(addr: u32) -> String {
    if addr == 0 {
        "authority".into()
    } else {
        format!("player:{addr}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let mut log = EventLog::default();
        log.push(LogRecord {
            time: 5,
            actor: actor_name(0),
            event: "board.params".into(),
            payload_digest: hash(b"x"),
            proof: None,
            payload: Some(serde_json::json!({"a": 1})),
        });
        log.push(LogRecord {
            time: 6,
            actor: actor_name(3),
            event: "send.pull".into(),
            payload_digest: hash(b"y"),
            proof: None,
            payload: None,
        });
        let text = log.to_jsonl();
        assert_eq!(text.lines().count(), 2);
        assert!(!text.lines().nth(1).unwrap().contains("payload\""));
        assert_eq!(EventLog::from_jsonl(&text).unwrap(), log);
        assert!(EventLog::from_jsonl("{\"time\": 1").is_err());
    }
}
