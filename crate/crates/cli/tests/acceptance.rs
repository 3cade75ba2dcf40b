//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! `ACCEPTANCE_ONLY=1,4` runs a subset.

#[path = "../../core/tests/support/oracle.rs"]
mod oracle;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use kadlot::crypto::{Nonce, VerifyCache};
use kadlot::lottery::{build_ticket, make_claim, verify_claim, LottoOpening, Mode, WinningNumber};
use kadlot::overlay::Kid;
use kadlot::simnet::{run_scenario, Outcome, ScenarioConfig, ScenarioResult, Strategy, StrategyShare};
use kadlot_cli::sweep::{run_sweep, to_csv, Vary};
use serde_json::json;

struct Verdict {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Verdict);

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn kid_bits(k: &Kid) -> Vec<bool> {
    (0..k.bits()).map(|i| k.bit(i)).collect()
}

fn run(cfg: &ScenarioConfig) -> ScenarioResult {
    run_scenario(cfg).expect("valid scenario")
}

fn quiet(cfg: ScenarioConfig) -> ScenarioConfig {
    ScenarioConfig { sign_envelopes: false, log_messages: false, ..cfg }
}

/// Every player holds the same root, with counter `n`.
fn full_agreement(r: &ScenarioResult, n: u64) -> bool {
    let first = r.players[0].root;
    first.is_some() && r.players.iter().all(|p| p.root == first && p.root_c == Some(n))
}

fn fault_free_agreement() -> Verdict {
    let mut slowest = 0f64;
    for n in [16, 64, 256] {
        for seed in 1..=10 {
            let t = Instant::now();
            let r = run(&ScenarioConfig { n, bits: 160, seed, ..Default::default() });
            let secs = t.elapsed().as_secs_f64();
            slowest = slowest.max(secs);
            if !full_agreement(&r, n as u64) {
                return verdict(false, format!("n={n} seed={seed}: players disagree or c != n"));
            }
            if secs >= 30.0 {
                return verdict(false, format!("n={n} seed={seed} took {secs:.1}s"));
            }
        }
    }
    verdict(true, format!("30/30 runs agree with c = n; slowest run {slowest:.1}s"))
}

fn oracle_equivalence() -> Verdict {
    for seed in 1..=20u64 {
        let n = [8, 24, 48, 64][seed as usize % 4];
        let bits = [8u16, 12, 16][seed as usize % 3];
        let r = run(&quiet(ScenarioConfig { n, bits, seed, ..Default::default() }));
        let leaves: Vec<_> = r.players.iter().map(|p| (kid_bits(&p.kid.unwrap()), p.leaf_a.unwrap().0)).collect();
        let expected = oracle::fold_tree(&leaves, bits as usize).unwrap();
        for p in &r.players {
            if (p.root.map(|h| h.0), p.root_a.map(|a| a.0), p.root_c)
                != (Some(expected.h), Some(expected.a), Some(expected.c))
            {
                return verdict(
                    false,
                    format!("seed={seed} n={n} B={bits}: player {} differs from the oracle", p.addr),
                );
            }
        }
    }
    verdict(true, "20/20 seeds byte-exact on (h, a, c)")
}

fn schedule_invariance() -> Verdict {
    let mut roots = BTreeSet::new();
    for network_seed in 1..=10 {
        let r = run(&quiet(ScenarioConfig { n: 64, seed: 5, network_seed: Some(network_seed), ..Default::default() }));
        if !full_agreement(&r, 64) {
            return verdict(false, format!("network seed {network_seed}: players disagree"));
        }
        roots.insert(r.players[0].root);
    }
    verdict(roots.len() == 1, format!("{} distinct root(s) over 10 network seeds", roots.len()))
}

fn cl_winner_oracle() -> Verdict {
    for seed in 1..=50 {
        let r = run(&quiet(ScenarioConfig { n: 16, bits: 160, reward_count: 8, seed, ..Default::default() }));
        let Some(ann) = r.announcement() else { return verdict(false, format!("seed={seed}: no announcement")) };
        let WinningNumber::Cl(n_w) = ann.n_w else { return verdict(false, "LO number in CL mode") };
        let expected_n_w = xor(oracle::sha3(&ann.root.a.0), oracle::sha3(&ann.r_a.0));
        if n_w.0 != expected_n_w {
            return verdict(false, format!("seed={seed}: n_w differs from the oracle"));
        }
        let players: Vec<(Vec<bool>, u64)> =
            r.players.iter().map(|p| (kid_bits(&p.kid.unwrap()), p.s.unwrap())).collect();
        let expected: Vec<Kid> =
            oracle::cl_order(&n_w.0, &players).into_iter().take(8).map(|i| r.players[i].kid.unwrap()).collect();
        if ann.winners != expected {
            return verdict(false, format!("seed={seed}: winner order differs from the oracle"));
        }
    }
    verdict(true, "50/50 seeds: n_w and the 8-winner order match the oracle")
}

fn xor(a: [u8; 32], b: [u8; 32]) -> [u8; 32] {
    std::array::from_fn(|i| a[i] ^ b[i])
}

fn lo_claim_soundness() -> Verdict {
    const DOMAIN: u64 = 8;
    let (mut honest_winners, mut forged, mut accepted_forgeries) = (0, 0, 0);
    let mut seed = 0;
    while forged < 100 {
        seed += 1;
        if seed > 200 {
            return verdict(false, format!("only {forged} forgeries built in 200 seeds"));
        }
        let cfg =
            quiet(ScenarioConfig { n: 16, bits: 16, mode: Mode::Lo, lotto_domain: DOMAIN, seed, ..Default::default() });
        let r = run(&cfg);
        let (Some(ann), Some(params)) = (r.announcement(), r.board.params.as_ref()) else {
            return verdict(false, format!("seed={seed}: no announcement"));
        };
        let WinningNumber::Lo(n_w) = ann.n_w else { return verdict(false, "CL number in LO mode") };
        for p in r.players.iter().filter(|p| p.lotto_n == Some(n_w)) {
            honest_winners += 1;
            if p.claim_accepted != Some(true) {
                return verdict(false, format!("seed={seed}: honest winner {} was not accepted", p.addr));
            }
        }
        if r.players.iter().any(|p| p.lotto_n != Some(n_w) && p.claim_accepted.is_some()) {
            return verdict(false, format!("seed={seed}: a non-winner claimed"));
        }
        let mut cache = VerifyCache::new();
        for claim in &r.board.claims {
            let owner = r.players.iter().find(|p| p.pk == claim.pk).unwrap();
            let keys = owner.keys.clone().unwrap();
            let o = claim.lotto.unwrap();
            let mut fake_r = o.r;
            fake_r.0[0] ^= 1;
            let other = Nonce(oracle::sha3(&[&o.r.0[..], &seed.to_be_bytes()].concat()));
            let openings = [
                LottoOpening { n: (o.n + 1) % DOMAIN, ..o },
                LottoOpening { r: fake_r, ..o },
                LottoOpening { s: o.s + 1, ..o },
                // A fresh ticket committing to n_w that is not in the root.
                LottoOpening {
                    ticket: build_ticket(Mode::Lo, o.s, &other, Some(n_w), Some(DOMAIN)).unwrap(),
                    r: other,
                    ..o
                },
            ];
            for opening in openings {
                let fake = make_claim(&keys, &claim.token, claim.chain.clone(), Some(opening));
                forged += 1;
                if verify_claim(&fake, params, ann, owner.s, &mut cache).is_ok() {
                    accepted_forgeries += 1;
                }
            }
        }
    }
    verdict(
        honest_winners > 0 && accepted_forgeries == 0,
        format!("{honest_winners} honest winners accepted over {seed} seeds; {accepted_forgeries}/{forged} forged claims accepted"),
    )
}

fn equivocation_certainty() -> Verdict {
    let n = 32;
    for seed in 1..=50 {
        let cfg = quiet(ScenarioConfig {
            n,
            b: 1.0 / n as f64,
            seed,
            strategies: vec![StrategyShare { strategy: Strategy::Equivocator, fraction: 1.0 }],
            ..Default::default()
        });
        let r = run(&cfg);
        let cheat = r.players.iter().find(|p| p.strategy == Strategy::Equivocator).unwrap().pk;
        if !r.all_proofs().iter().any(|p| p.certain && p.signer() == cheat) {
            return verdict(false, format!("seed={seed}: no certain proof names the equivocator"));
        }
    }
    verdict(true, "50/50 seeds produce a certain proof naming the equivocator")
}

fn late_player_exclusion() -> Verdict {
    let n = 32;
    for seed in 1..=20 {
        let mut cfg = quiet(ScenarioConfig {
            n,
            b: 1.0 / n as f64,
            seed,
            strategies: vec![StrategyShare { strategy: Strategy::LateJoiner, fraction: 1.0 }],
            ..Default::default()
        });
        cfg.authority.sells_late = true;
        let r = run(&cfg);
        let late = r.players.iter().find(|p| p.strategy == Strategy::LateJoiner).unwrap();
        if late.s.is_none() {
            return verdict(false, format!("seed={seed}: the late ticket was not sold"));
        }
        let Some(ann) = r.announcement() else { return verdict(false, format!("seed={seed}: no announcement")) };
        let honest_ok = r.honest().all(|p| p.root == Some(ann.root.h) && p.root_c == Some(n as u64 - 1));
        if ann.root.c != n as u64 - 1 || r.board.published_n != Some(n as u64 - 1) || !honest_ok {
            return verdict(false, format!("seed={seed}: root c = {}, expected {}", ann.root.c, n - 1));
        }
    }
    verdict(true, "20/20 runs: root c equals the pre-deadline count")
}

fn scalability() -> Verdict {
    let points: Vec<(f64, f64)> = [64usize, 256, 1024]
        .into_iter()
        .map(|n| {
            let r = run(&quiet(ScenarioConfig { n, seed: 1, ..Default::default() }));
            ((n as f64).log2(), r.mean_msgs())
        })
        .collect();
    // Least squares through the origin.
    let c = points.iter().map(|(x, m)| x * m).sum::<f64>() / points.iter().map(|(x, _)| x * x).sum::<f64>();
    let worst = points.iter().map(|(x, m)| (m - c * x).abs() / (c * x)).fold(0f64, f64::max);
    let shown: Vec<String> = points.iter().map(|(x, m)| format!("n=2^{x}: {m:.0}")).collect();
    verdict(worst <= 0.25, format!("C = {c:.1}, worst deviation {:.1}% ({})", worst * 100.0, shown.join(", ")))
}

fn byzantine_sweep() -> Verdict {
    let base = json!({
        "n": 128,
        "l": 3,
        "seed": 1,
        "strategies": [
            { "strategy": "silent", "fraction": 0.5 },
            { "strategy": "equivocator", "fraction": 0.5 }
        ],
        "sign_envelopes": false,
        "log_messages": false
    });
    let vary = Vary::parse("b=0.05,0.1,0.2,0.3").unwrap();
    let rows = run_sweep(&base, 50, Some(&vary), |_| {});
    let path = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("byzantine_sweep.csv");
    std::fs::write(&path, to_csv(&rows).unwrap()).unwrap();
    let mut summary = Vec::new();
    let mut at_target = 0.0;
    for value in ["0.05", "0.1", "0.2", "0.3"] {
        let point: Vec<_> = rows.iter().filter(|r| r.value == value).collect();
        let mean =
            |f: &dyn Fn(&&kadlot_cli::sweep::SweepRow) -> f64| point.iter().map(f).sum::<f64>() / point.len() as f64;
        let agreement = mean(&|r| r.agreement);
        if value == "0.1" {
            at_target = agreement;
        }
        summary.push(format!("b={value}: agreement {agreement:.3} detection {:.3}", mean(&|r| r.detection)));
    }
    verdict(at_target >= 0.9, format!("{}; csv at {}", summary.join("; "), path.display()))
}

fn worst_case() -> Verdict {
    let base: ScenarioConfig = serde_json::from_str(include_str!("../examples/worst_case.json")).unwrap();
    let (mut flagged, mut local) = (0, 0);
    for seed in 1..=20 {
        let r = run(&ScenarioConfig { seed, ..base.clone() });
        let reports: Vec<_> = r.honest().filter_map(|p| p.report.as_ref()).collect();
        let aborted = matches!(r.outcome, Outcome::NoConsensus { .. });
        let any_failed = reports.iter().any(|rep| !rep.all_passed());
        let local_violation = r.honest_agreement() < 1.0
            || reports.iter().any(|rep| rep.failed().any(|c| c.name == "participation" || c.name == "root_agreement"));
        if aborted || any_failed {
            flagged += 1;
        }
        if local_violation {
            local += 1;
        }
    }
    verdict(
        flagged == 20 && local >= 1,
        format!("{flagged}/20 runs flagged; {local}/20 show a failed participation proof or divergent root"),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("fault-free agreement", fault_free_agreement),
        ("oracle equivalence", oracle_equivalence),
        ("schedule invariance", schedule_invariance),
        ("CL winner oracle", cl_winner_oracle),
        ("LO claim soundness", lo_claim_soundness),
        ("equivocation certainty", equivocation_certainty),
        ("late-player exclusion", late_player_exclusion),
        ("scalability", scalability),
        ("byzantine sweep", byzantine_sweep),
        ("worst case", worst_case),
    ];
    let only: Option<BTreeSet<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failures = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let number = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&number)) {
            continue;
        }
        let t = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| verdict(false, "panicked"));
        failures += usize::from(!v.pass);
        println!(
            "criterion {number:>2} {name:<24} {} [{:.1}s] {}",
            if v.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            v.detail
        );
    }
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}
