//! Configuration loading, run reports and parameter sweeps behind the
//! `kadlot` command.

pub mod report;
pub mod sweep;

use std::path::Path;

use anyhow::{bail, Context};
use kadlot::simnet::ScenarioConfig;
use serde_json::Value;

/// Process exit codes.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const VERIFICATION_FAILED: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const NO_CONSENSUS: i32 = 3;
}

pub fn read_config_value(path: &Path) -> anyhow::Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if !value.is_object() {
        bail!("{}: configuration must be a JSON object", path.display());
    }
    Ok(value)
}

/// Decode a config document and resolve every default.
pub fn config_from_value(value: &Value) -> anyhow::Result<ScenarioConfig> {
    let cfg: ScenarioConfig = serde_json::from_value(value.clone()).context("invalid configuration")?;
    Ok(cfg.resolve()?)
}

/// Set `key` (dotted for nested objects) to `v`, creating objects on the way.
pub fn set_path(root: &mut Value, key: &str, v: Value) -> anyhow::Result<()> {
    let mut cur = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        if part.is_empty() {
            bail!("empty segment in key {key:?}");
        }
        let obj = match cur {
            Value::Object(map) => map,
            _ => bail!("{key:?} descends into a non-object"),
        };
        if parts.peek().is_none() {
            obj.insert(part.to_string(), v);
            return Ok(());
        }
        cur = obj.entry(part).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one segment")
}

/// Parse a command-line value: JSON when it parses, a string otherwise.
pub fn parse_value(s: &str) -> Value {
    serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_string()))
}
