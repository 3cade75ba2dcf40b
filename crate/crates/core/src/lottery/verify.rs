//! Player-side and offline verification of a published outcome.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::claim::{announced_number_ok, verify_claim, Claim, WinnerAnnouncement};
use super::params::{cl_compare, commitment_of, LotteryParams, WinningNumber};
use crate::aggregation::{AggregateContainer, MisbehaviorProof};
use crate::crypto::VerifyCache;
use crate::overlay::{Kid, SubtreeId};

/// Everything the authority published on the board.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Board {
    pub params: LotteryParams,
    /// Number of tickets sold before the deadline, as published.
    pub published_n: u64,
    pub announcement: WinnerAnnouncement,
    pub claims: Vec<Claim>,
    pub proofs: Vec<MisbehaviorProof>,
}

/// One player's own state after aggregation.
#[derive(Clone, Debug)]
pub struct PlayerView<'a> {
    pub kid: Kid,
    /// Own containers indexed by depth; `None` where none was computed.
    pub containers: &'a [Option<AggregateContainer>],
    /// Kids this player knows: its own and its routing-table snapshot.
    pub known: &'a [Kid],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "String::is_empty", default)]
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    fn push(&mut self, name: &str, result: Result<(), String>) {
        let (passed, detail) = match result {
            Ok(()) => (true, String::new()),
            Err(e) => (false, e),
        };
        self.checks.push(CheckResult { name: name.into(), passed, detail });
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

pub const CHECK_NAMES: [&str; 7] = [
    "commitment",
    "winning_number",
    "root_agreement",
    "participation",
    "winner_containers",
    "ordering",
    "completeness",
];

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Run every check. Without a `view` (offline replay) the checks that need a
/// player's own containers are evaluated on the published data alone.
pub fn verify_outcome(view: Option<&PlayerView<'_>>, board: &Board, cache: &mut VerifyCache) -> VerificationReport {
    let params = &board.params;
    let ann = &board.announcement;
    let mut report = VerificationReport::default();

    report.push(
        "commitment",
        ensure(commitment_of(&ann.r_a) == params.commitment, || "eta(eta(r_A)) differs from the commitment".into()),
    );
    report.push(
        "winning_number",
        ensure(ann.root.depth() == 0 && ann.root.is_well_formed(), || "announced root does not recompute".into())
            .and_then(|_| ensure(announced_number_ok(params, ann), || "n_w does not match a_R and r_A".into())),
    );

    let own_root = view.and_then(|v| v.containers.first().cloned().flatten());
    report.push(
        "root_agreement",
        match (view, &own_root) {
            (None, _) => Ok(()),
            (Some(_), None) => Err("no own root".into()),
            (Some(_), Some(r)) => ensure(r.h == ann.root.h, || format!("own root {} differs", r.h)),
        },
    );
    report.push("participation", view.map_or(Ok(()), |v| participation(v, &ann.root)));
    report.push("winner_containers", winner_containers(view, board, cache));
    report.push("ordering", ordering(view, params, ann, &board.claims));
    report.push(
        "completeness",
        ensure(ann.root.c == board.published_n, || {
            format!("root counter {} but {} tickets published", ann.root.c, board.published_n)
        }),
    );
    report
}

fn participation(view: &PlayerView<'_>, root: &AggregateContainer) -> Result<(), String> {
    let bits = view.kid.bits() as usize;
    if view.containers.len() != bits + 1 {
        return Err("incomplete own chain".into());
    }
    let Some(leaf) = &view.containers[bits] else {
        return Err("no own leaf".into());
    };
    if leaf.subtree != SubtreeId::of(&view.kid, view.kid.bits()) {
        return Err("own leaf misplaced".into());
    }
    for d in (1..=bits).rev() {
        match (&view.containers[d - 1], &view.containers[d]) {
            (Some(p), Some(c)) if p.has_child(c) => {}
            _ => return Err(format!("own chain broken at depth {}", d - 1)),
        }
    }
    ensure(view.containers[0].as_ref() == Some(root), || "own chain does not reach the announced root".into())
}

fn winner_containers(view: Option<&PlayerView<'_>>, board: &Board, cache: &mut VerifyCache) -> Result<(), String> {
    for claim in &board.claims {
        verify_claim(claim, &board.params, &board.announcement, None, cache)
            .map_err(|e| format!("published claim of {}: {e}", claim.pk))?;
        let Some(v) = view else { continue };
        for cc in &claim.chain {
            let d = cc.container.depth() as usize;
            if cc.container.subtree != SubtreeId::of(&v.kid, d as u16) {
                continue;
            }
            if let Some(Some(own)) = v.containers.get(d) {
                if own.h != cc.container.h {
                    return Err(format!("winner container at depth {d} differs from own"));
                }
            }
        }
    }
    Ok(())
}

fn ordering(
    view: Option<&PlayerView<'_>>,
    params: &LotteryParams,
    ann: &WinnerAnnouncement,
    claims: &[Claim],
) -> Result<(), String> {
    match ann.n_w {
        WinningNumber::Cl(n_w) => {
            if ann.winners.len() > params.reward_count {
                return Err("more winners than rewards".into());
            }
            for pair in ann.winners.windows(2) {
                if cl_compare(&n_w, (&pair[0], 0), (&pair[1], 0)) == Ordering::Greater {
                    return Err("published winners are not in distance order".into());
                }
            }
            for claim in claims {
                let kid = claim.kid(params.bits);
                if !kid.is_some_and(|k| ann.winners.contains(&k)) {
                    return Err("claim by a non-winner was published".into());
                }
            }
            let Some(v) = view else { return Ok(()) };
            let Some(last) = ann.winners.last() else {
                return ensure(v.known.is_empty(), || "no winners published".into());
            };
            let full = ann.winners.len() == params.reward_count;
            for k in v.known {
                let closer = cl_compare(&n_w, (k, 0), (last, 0)) == Ordering::Less;
                if (closer || !full) && !ann.winners.contains(k) {
                    return Err(format!("known player {k} outranks the published winners"));
                }
            }
            Ok(())
        }
        WinningNumber::Lo(n_w) => {
            for claim in claims {
                match &claim.lotto {
                    Some(o) if o.n == n_w => {}
                    _ => return Err("published lotto claim does not open to n_w".into()),
                }
            }
            Ok(())
        }
    }
}
