use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn kadlot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kadlot")).args(args).output().expect("binary runs")
}

fn bundled(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name).to_string_lossy().into_owned()
}

fn write_config(dir: &Path, name: &str, v: Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, v.to_string()).unwrap();
    p.to_string_lossy().into_owned()
}

fn small(extra: Value) -> Value {
    let mut base = serde_json::json!({ "n": 8, "bits": 32 });
    base.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    base
}

fn run_to(dir: &Path, config: &str, sub: &str) -> (i32, Value, PathBuf) {
    let out_dir = dir.join(sub);
    let out = kadlot(&["run", config, "--out", out_dir.to_str().unwrap()]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    (out.status.code().unwrap(), report, out_dir.join("events.jsonl"))
}

#[test]
fn bundled_fault_free_config_passes_and_its_log_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let (code, report, log) = run_to(dir.path(), &bundled("fault_free_64.json"), "ff");
    assert_eq!(code, 0);
    assert_eq!(report["honest_agreement"], 1.0);
    assert_eq!(report["config"]["k"], 20, "defaults are materialized");
    assert!(dir.path().join("ff/report.json").exists());
    assert_eq!(kadlot(&["verify", log.to_str().unwrap()]).status.code(), Some(0));
}

#[test]
fn seed_override_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", small(serde_json::json!({})));
    let digest = |seed: &str| {
        let out = kadlot(&["run", &cfg, "--seed", seed]);
        assert_eq!(out.status.code(), Some(0));
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["config"]["seed"], seed.parse::<u64>().unwrap());
        v["scenario_digest"].as_str().unwrap().to_string()
    };
    assert_eq!(digest("11"), digest("11"));
    assert_ne!(digest("11"), digest("12"));
}

#[test]
fn bundled_worst_case_never_passes_silently() {
    let out = kadlot(&["run", &bundled("worst_case.json")]);
    let code = out.status.code().unwrap();
    assert!(code == 1 || code == 3, "exit {code}");
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["all_honest_checks_pass"], false);
}

#[test]
fn flipped_byte_in_a_published_container_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", small(serde_json::json!({})));
    let (_, _, log) = run_to(dir.path(), &cfg, "run");
    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let i = lines.iter().position(|l| l.contains("\"event\":\"board.claim\"")).expect("a claim is published");
    let at = lines[i].find("\"container\":{\"a\":\"").unwrap() + "\"container\":{\"a\":\"".len();
    let mut bytes = lines[i].clone().into_bytes();
    bytes[at] = if bytes[at] == b'0' { b'1' } else { b'0' };
    lines[i] = String::from_utf8(bytes).unwrap();
    let tampered = dir.path().join("tampered.jsonl");
    std::fs::write(&tampered, lines.join("\n")).unwrap();
    let out = kadlot(&["verify", tampered.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn inflated_ticket_count_fails_completeness_offline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", small(serde_json::json!({ "authority": { "inflate_n": 1 } })));
    let (code, _, log) = run_to(dir.path(), &cfg, "run");
    assert_eq!(code, 1);
    let out = kadlot(&["verify", log.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("check completeness failed"));
}

#[test]
fn truncated_or_boardless_logs_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", small(serde_json::json!({})));
    let (_, _, log) = run_to(dir.path(), &cfg, "run");
    let text = std::fs::read_to_string(&log).unwrap();
    let cut = dir.path().join("cut.jsonl");
    std::fs::write(&cut, &text[..text.len() / 2]).unwrap();
    assert_eq!(kadlot(&["verify", cut.to_str().unwrap()]).status.code(), Some(2));
    let no_board: String =
        text.lines().filter(|l| !l.contains("\"event\":\"board.")).map(|l| format!("{l}\n")).collect();
    let nb = dir.path().join("nb.jsonl");
    std::fs::write(&nb, no_board).unwrap();
    assert_eq!(kadlot(&["verify", nb.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn bad_configs_and_arguments_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(dir.path(), "u.json", serde_json::json!({ "players": 3 }));
    assert_eq!(kadlot(&["run", &unknown]).status.code(), Some(2));
    let invalid = write_config(dir.path(), "i.json", serde_json::json!({ "b": 0.5 }));
    assert_eq!(kadlot(&["run", &invalid]).status.code(), Some(2));
    assert_eq!(kadlot(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(kadlot(&["sweep", &invalid, "--seeds", "1", "--vary", "novalues"]).status.code(), Some(2));
}

#[test]
fn sweep_emits_one_row_per_seed_and_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", small(serde_json::json!({})));
    let out = kadlot(&["sweep", &cfg, "--seeds", "2", "--vary", "n=4,6"]);
    assert_eq!(out.status.code(), Some(0));
    let mut rd = csv::Reader::from_reader(out.stdout.as_slice());
    let headers = rd.headers().unwrap().clone();
    assert_eq!(
        headers.iter().collect::<Vec<_>>(),
        [
            "point",
            "key",
            "value",
            "seed",
            "n",
            "b",
            "agreement",
            "detection",
            "mean_msgs",
            "max_msgs",
            "proofs",
            "outcome",
            "all_checks_pass"
        ]
    );
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!(&r[6], "1.0");
        assert_eq!(&r[11], "announced");
    }
    assert_eq!(rows.iter().map(|r| r[4].to_string()).collect::<Vec<_>>(), ["4", "4", "6", "6"]);
}
