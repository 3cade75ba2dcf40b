use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use kadlot::simnet::{run_scenario, verify_log, EventLog};
use kadlot_cli::report::RunReport;
use kadlot_cli::sweep::{run_sweep, to_csv, Vary};
use kadlot_cli::{config_from_value, exit, read_config_value, set_path};

#[derive(Parser)]
#[command(name = "kadlot", version, about = "Run, verify and sweep decentralized lottery scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario; exit 0 iff every honest player's checks pass.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for report.json and events.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay the board records of an event log and re-run the checks.
    Verify { log: PathBuf },
    /// Run seeded scenarios per parameter point and emit CSV.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        seeds: u64,
        /// `key=v1,v2,...`; dotted keys reach nested fields.
        #[arg(long)]
        vary: Option<String>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE as u8 } else { exit::PASS as u8 });
        }
    };
    let code = match cli.command {
        Command::Run { config, seed, out } => cmd_run(config, seed, out),
        Command::Verify { log } => cmd_verify(log),
        Command::Sweep { config, seeds, vary, out } => cmd_sweep(config, seeds, vary, out),
    };
    ExitCode::from(code.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        exit::USAGE
    }) as u8)
}

fn cmd_run(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> anyhow::Result<i32> {
    let mut doc = read_config_value(&config)?;
    if let Some(s) = seed {
        set_path(&mut doc, "seed", s.into())?;
    }
    let cfg = config_from_value(&doc)?;
    let started = Instant::now();
    let result = run_scenario(&cfg)?;
    let report = RunReport::new(&result, started.elapsed().as_millis());
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("report.json"), &json)?;
        std::fs::write(dir.join("events.jsonl"), result.log.to_jsonl())?;
    }
    println!("{json}");
    Ok(report.exit_code())
}

fn cmd_verify(path: PathBuf) -> anyhow::Result<i32> {
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let log = EventLog::from_jsonl(&text).with_context(|| format!("{}: corrupt event log", path.display()))?;
    let verdict = verify_log(&log)?;
    println!("{}", serde_json::to_string_pretty(&verdict.report)?);
    Ok(if verdict.aborted() {
        eprintln!("run aborted without an announcement");
        exit::NO_CONSENSUS
    } else if verdict.passed() {
        exit::PASS
    } else {
        for c in verdict.report.iter().flat_map(|r| r.failed()) {
            eprintln!("check {} failed: {}", c.name, c.detail);
        }
        exit::VERIFICATION_FAILED
    })
}

fn cmd_sweep(config: PathBuf, seeds: u64, vary: Option<String>, out: Option<PathBuf>) -> anyhow::Result<i32> {
    let doc = read_config_value(&config)?;
    let vary = vary.as_deref().map(Vary::parse).transpose()?;
    anyhow::ensure!(seeds > 0, "--seeds must be positive");
    let rows = run_sweep(&doc, seeds, vary.as_ref(), |r| {
        let mut err = std::io::stderr().lock();
        let _ = writeln!(err, "point {} seed {}: {} agreement {:.3}", r.point, r.seed, r.outcome, r.agreement);
    });
    let csv = to_csv(&rows)?;
    match out {
        Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(exit::PASS)
}
