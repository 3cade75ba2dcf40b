//! Seeded parameter sweeps producing one CSV row per run.

use std::panic::{catch_unwind, AssertUnwindSafe};

use anyhow::Context;
use kadlot::simnet::{run_scenario, Outcome};
use serde::Serialize;
use serde_json::Value;

use crate::{config_from_value, set_path};

/// Column order is the CSV header.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub point: usize,
    pub key: String,
    pub value: String,
    pub seed: u64,
    pub n: usize,
    pub b: f64,
    pub agreement: f64,
    pub detection: f64,
    pub mean_msgs: f64,
    pub max_msgs: u64,
    pub proofs: usize,
    /// `announced`, `no_consensus`, or `failed: <reason>`.
    pub outcome: String,
    pub all_checks_pass: bool,
}

#[derive(Clone, Debug)]
pub struct Vary {
    pub key: String,
    pub values: Vec<Value>,
}

impl Vary {
    /// Parse `key=v1,v2,...`.
    pub fn parse(spec: &str) -> anyhow::Result<Self> {
        let (key, list) = spec.split_once('=').context("--vary expects key=v1,v2,...")?;
        let values: Vec<Value> = list.split(',').filter(|s| !s.is_empty()).map(crate::parse_value).collect();
        anyhow::ensure!(!key.is_empty() && !values.is_empty(), "--vary expects key=v1,v2,...");
        Ok(Self { key: key.to_string(), values })
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Runs `seeds` scenarios per point, with seeds `base.seed + 0 .. base.seed + seeds`.
/// A run that fails or panics becomes a `failed` row.
pub fn run_sweep(base: &Value, seeds: u64, vary: Option<&Vary>, mut progress: impl FnMut(&SweepRow)) -> Vec<SweepRow> {
    let points: Vec<(String, String, Option<Value>)> = match vary {
        None => vec![(String::new(), String::new(), None)],
        Some(v) => v.values.iter().map(|x| (v.key.clone(), render(x), Some(x.clone()))).collect(),
    };
    let first_seed = base.get("seed").and_then(Value::as_u64).unwrap_or(1);
    let mut rows = Vec::new();
    for (point, (key, shown, value)) in points.into_iter().enumerate() {
        for i in 0..seeds {
            let seed = first_seed + i;
            let mut doc = base.clone();
            let row = (|| -> anyhow::Result<SweepRow> {
                if let Some(v) = &value {
                    set_path(&mut doc, &key, v.clone())?;
                }
                set_path(&mut doc, "seed", Value::from(seed))?;
                let cfg = config_from_value(&doc)?;
                let r = catch_unwind(AssertUnwindSafe(|| run_scenario(&cfg)))
                    .map_err(|p| anyhow::anyhow!("panic: {}", panic_text(&p)))??;
                Ok(SweepRow {
                    point,
                    key: key.clone(),
                    value: shown.clone(),
                    seed,
                    n: cfg.n,
                    b: cfg.b,
                    agreement: r.honest_agreement(),
                    detection: r.detection_rate(),
                    mean_msgs: r.mean_msgs(),
                    max_msgs: r.max_msgs(),
                    proofs: r.all_proofs().len(),
                    outcome: match r.outcome {
                        Outcome::Announced => "announced".into(),
                        Outcome::NoConsensus { .. } => "no_consensus".into(),
                    },
                    all_checks_pass: r.all_honest_checks_pass(),
                })
            })()
            .unwrap_or_else(|e| SweepRow {
                point,
                key: key.clone(),
                value: shown.clone(),
                seed,
                n: doc.get("n").and_then(Value::as_u64).unwrap_or(0) as usize,
                b: doc.get("b").and_then(Value::as_f64).unwrap_or(0.0),
                agreement: 0.0,
                detection: 0.0,
                mean_msgs: 0.0,
                max_msgs: 0,
                proofs: 0,
                outcome: format!("failed: {e:#}"),
                all_checks_pass: false,
            });
            progress(&row);
            rows.push(row);
        }
    }
    rows
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned()).unwrap_or_default()
}

pub fn to_csv(rows: &[SweepRow]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn vary_parses_lists() {
        let v = Vary::parse("b=0.1,0.2").unwrap();
        assert_eq!(v.key, "b");
        assert_eq!(v.values, vec![json!(0.1), json!(0.2)]);
        assert!(Vary::parse("b").is_err());
        assert!(Vary::parse("=1").is_err());
    }

    #[test]
    fn failed_runs_become_rows() {
        let rows = run_sweep(&json!({ "n": 3, "bits": 16 }), 1, Some(&Vary::parse("b=0.7,0").unwrap()), |_| {});
        assert_eq!(rows.len(), 2);
        assert!(rows[0].outcome.starts_with("failed"));
        assert_eq!(rows[1].outcome, "announced");
        let csv = to_csv(&rows).unwrap();
        assert!(csv.starts_with(
            "point,key,value,seed,n,b,agreement,detection,mean_msgs,max_msgs,proofs,outcome,all_checks_pass\n"
        ));
        assert_eq!(csv.lines().count(), 3);
    }
}
