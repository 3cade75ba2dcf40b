use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::lottery::{check_lotto_domain, Mode};
use crate::overlay::{BitString, SubtreeId, DEFAULT_ALPHA};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Honest,
    Silent,
    Equivocator,
    LateJoiner,
    ColludingRootManipulator,
}

impl Strategy {
    pub fn is_honest(self) -> bool {
        self == Strategy::Honest
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyShare {
    pub strategy: Strategy,
    /// Share of the dishonest players running this strategy.
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Placement {
    #[default]
    Uniform,
    /// Bias token issuance until `count` dishonest Kids start with `prefix`.
    Clustered { prefix: String, count: usize },
}

/// Deviations of a dishonest authority.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AuthorityConduct {
    /// Keep selling tickets after the purchase deadline.
    pub sells_late: bool,
    /// Added to the published ticket count.
    pub inflate_n: u64,
    /// Publish a value other than the committed `r_A`.
    pub wrong_r_a: bool,
    /// Leak `r_A` to colluding players.
    pub colludes: bool,
}

impl AuthorityConduct {
    pub fn is_honest(&self) -> bool {
        *self == AuthorityConduct::default()
    }
}

/// Full scenario description. Every field has a default; [`ScenarioConfig::resolve`]
/// fills the derived timeline so reports carry no hidden values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n: usize,
    pub bits: u16,
    pub k: usize,
    pub l: u64,
    /// Extra signatures required on the root container.
    pub root_extra_sigs: u64,
    pub mode: Mode,
    /// `|L|`, LO only; must be a power of two.
    pub lotto_domain: u64,
    /// Dishonest fraction of the `n` players.
    pub b: f64,
    pub strategies: Vec<StrategyShare>,
    pub placement: Placement,
    /// Seeds keys, nonces and lotto numbers.
    pub seed: u64,
    /// Seeds latencies, drops and peer choices; defaults to `seed`.
    pub network_seed: Option<u64>,
    pub latency_min_ms: u64,
    pub latency_max_ms: u64,
    pub drop_rate: f64,
    pub timeout_ms: u64,
    /// Defaults to one spacing slot per player plus one second.
    pub purchase_deadline_ms: Option<u64>,
    /// Defaults to the deadline plus `warmup_ms`.
    pub aggregation_start_ms: Option<u64>,
    pub warmup_ms: u64,
    pub epoch_ms: u64,
    /// Random-target lookups after the bucket refresh.
    pub warmup_lookups: usize,
    pub alpha: usize,
    pub max_pull_attempts: u32,
    pub max_correction_depth: u32,
    pub sample_size: usize,
    pub sample_majority: f64,
    pub reward_count: usize,
    pub authority: AuthorityConduct,
    /// Sign every envelope and verify it on delivery.
    pub sign_envelopes: bool,
    /// Record every message delivery in the event log.
    pub log_messages: bool,
    pub max_placement_rolls: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n: 64,
            bits: 160,
            k: 20,
            l: 3,
            root_extra_sigs: 3,
            mode: Mode::Cl,
            lotto_domain: 1 << 16,
            b: 0.0,
            strategies: Vec::new(),
            placement: Placement::Uniform,
            seed: 1,
            network_seed: None,
            latency_min_ms: 10,
            latency_max_ms: 50,
            drop_rate: 0.0,
            timeout_ms: 500,
            purchase_deadline_ms: None,
            aggregation_start_ms: None,
            warmup_ms: 10_000,
            epoch_ms: 4000,
            warmup_lookups: 0,
            alpha: DEFAULT_ALPHA,
            max_pull_attempts: 3,
            max_correction_depth: 2,
            sample_size: 16,
            sample_majority: 0.75,
            reward_count: 1,
            authority: AuthorityConduct::default(),
            sign_envelopes: true,
            log_messages: true,
            max_placement_rolls: 1_000_000,
        }
    }
}

impl ScenarioConfig {
    /// Gap between consecutive purchases; wide enough that latency jitter
    /// cannot reorder them.
    pub fn purchase_spacing_ms(&self) -> u64 {
        self.latency_max_ms - self.latency_min_ms + 1
    }

    pub fn dishonest_count(&self) -> usize {
        (self.b * self.n as f64).round() as usize
    }

    /// Copy with the derived timeline fields filled in, after validation.
    pub fn resolve(&self) -> Result<ScenarioConfig, SimError> {
        self.validate()?;
        let mut out = self.clone();
        let deadline = self.purchase_deadline_ms.unwrap_or(self.n as u64 * self.purchase_spacing_ms() + 1000);
        out.purchase_deadline_ms = Some(deadline);
        out.aggregation_start_ms = Some(self.aggregation_start_ms.unwrap_or(deadline + self.warmup_ms));
        out.network_seed = Some(self.network_seed.unwrap_or(self.seed));
        if out.aggregation_start_ms.unwrap_or(0) <= deadline {
            return Err(SimError::Config("aggregation must start after the purchase deadline".into()));
        }
        Ok(out)
    }

    pub fn deadline(&self) -> u64 {
        self.purchase_deadline_ms.expect("resolved config")
    }

    pub fn aggregation_start(&self) -> u64 {
        self.aggregation_start_ms.expect("resolved config")
    }

    /// Clustered placement prefix, if any.
    pub fn cluster_prefix(&self) -> Option<SubtreeId> {
        match &self.placement {
            Placement::Uniform => None,
            Placement::Clustered { prefix, .. } => BitString::from_bin(prefix).ok().map(SubtreeId::from_prefix),
        }
    }

    /// Number of players per strategy: the honest remainder first, then the
    /// dishonest count split by largest remainder over the shares.
    pub fn strategy_counts(&self) -> Vec<(Strategy, usize)> {
        let dishonest = self.dishonest_count();
        let total: f64 = self.strategies.iter().map(|s| s.fraction).sum();
        let mut counts: Vec<(Strategy, usize, f64)> = self
            .strategies
            .iter()
            .map(|s| {
                let exact = if total > 0.0 { s.fraction / total * dishonest as f64 } else { 0.0 };
                (s.strategy, exact.floor() as usize, exact - exact.floor())
            })
            .collect();
        let assigned: usize = counts.iter().map(|c| c.1).sum();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&i, &j| counts[j].2.total_cmp(&counts[i].2).then(i.cmp(&j)));
        for &i in order.iter().take(dishonest.saturating_sub(assigned)) {
            counts[i].1 += 1;
        }
        let dishonest_assigned: usize = counts.iter().map(|c| c.1).sum();
        let mut out = vec![(Strategy::Honest, self.n - dishonest_assigned)];
        out.extend(counts.into_iter().filter(|c| c.1 > 0).map(|c| (c.0, c.1)));
        out
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let err = |m: &str| Err(SimError::Config(m.to_string()));
        if self.n == 0 {
            return err("n must be positive");
        }
        if !(8..=256).contains(&self.bits) {
            return err("bits must lie in 8..=256");
        }
        if self.n as f64 > 2f64.powi(self.bits as i32) {
            return err("more players than Kids");
        }
        if self.k == 0 || self.l == 0 || self.alpha == 0 {
            return err("k, l and alpha must be positive");
        }
        if !(0.0..0.5).contains(&self.b) {
            return err("b must lie in [0, 0.5)");
        }
        let mut seen = BTreeSet::new();
        for s in &self.strategies {
            if !(0.0..=1.0).contains(&s.fraction) {
                return err("strategy fractions must lie in [0, 1]");
            }
            if s.strategy == Strategy::Honest {
                return err("honest is implied, not a dishonest strategy");
            }
            if !seen.insert(s.strategy) {
                return err("strategy listed twice");
            }
        }
        let total: f64 = self.strategies.iter().map(|s| s.fraction).sum();
        if total > 1.0 + 1e-9 {
            return err("strategy fractions sum above 1");
        }
        if self.dishonest_count() > 0 && total <= 0.0 {
            return err("b > 0 needs at least one dishonest strategy");
        }
        let counts = self.strategy_counts();
        let count_of = |st: Strategy| counts.iter().find(|c| c.0 == st).map_or(0, |c| c.1);
        if count_of(Strategy::LateJoiner) > 0 && !self.authority.sells_late {
            return err("late_joiner needs an authority that sells late");
        }
        if count_of(Strategy::ColludingRootManipulator) > 0 {
            if !self.authority.colludes {
                return err("colluding_root_manipulator needs a colluding authority");
            }
            if self.cluster_prefix().is_none() {
                return err("colluding_root_manipulator needs clustered placement");
            }
        }
        if let Placement::Clustered { prefix, count } = &self.placement {
            let p = BitString::from_bin(prefix).map_err(|e| SimError::Config(e.to_string()))?;
            if p.is_empty() || p.len() > self.bits {
                return err("cluster prefix length must lie in 1..=bits");
            }
            if *count > self.dishonest_count() - count_of(Strategy::LateJoiner) {
                return err("cluster count exceeds the dishonest players");
            }
        }
        if self.latency_min_ms > self.latency_max_ms {
            return err("latency_min_ms exceeds latency_max_ms");
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return err("drop_rate must lie in [0, 1)");
        }
        if self.timeout_ms == 0 || self.epoch_ms < 4 * self.timeout_ms {
            return err("epoch_ms must be at least four timeouts");
        }
        if self.max_pull_attempts == 0 {
            return err("max_pull_attempts must be positive");
        }
        if self.sample_size == 0 || !(0.5..=1.0).contains(&self.sample_majority) || self.sample_majority == 0.5 {
            return err("sample_size must be positive and sample_majority in (0.5, 1]");
        }
        if self.reward_count == 0 {
            return err("reward_count must be positive");
        }
        if self.mode == Mode::Lo {
            check_lotto_domain(self.lotto_domain).map_err(|e| SimError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_resolve() {
        let cfg = ScenarioConfig::default().resolve().unwrap();
        assert_eq!(cfg.deadline(), 64 * 41 + 1000);
        assert_eq!(cfg.aggregation_start(), cfg.deadline() + 10_000);
        assert_eq!(cfg.network_seed, Some(1));
    }

    #[test]
    fn strategy_counts_use_largest_remainder() {
        let cfg = ScenarioConfig {
            n: 128,
            b: 0.1,
            strategies: vec![
                StrategyShare { strategy: Strategy::Silent, fraction: 0.5 },
                StrategyShare { strategy: Strategy::Equivocator, fraction: 0.5 },
            ],
            ..Default::default()
        };
        let counts = cfg.strategy_counts();
        assert_eq!(counts.iter().map(|c| c.1).sum::<usize>(), 128);
        assert_eq!(counts[0], (Strategy::Honest, 115));
        assert_eq!(counts[1].1 + counts[2].1, 13);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            ScenarioConfig { b: 0.5, ..Default::default() },
            ScenarioConfig { n: 0, ..Default::default() },
            ScenarioConfig { bits: 4, ..Default::default() },
            ScenarioConfig { b: 0.2, ..Default::default() },
            ScenarioConfig { mode: Mode::Lo, lotto_domain: 100, ..Default::default() },
            ScenarioConfig {
                b: 0.1,
                strategies: vec![StrategyShare { strategy: Strategy::LateJoiner, fraction: 1.0 }],
                ..Default::default()
            },
            ScenarioConfig {
                b: 0.1,
                strategies: vec![StrategyShare { strategy: Strategy::Silent, fraction: 1.0 }],
                placement: Placement::Clustered { prefix: "101".into(), count: 7 },
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.resolve().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn json_round_trip_with_defaults() {
        let cfg: ScenarioConfig = serde_json::from_str(r#"{"n": 16, "bits": 32}"#).unwrap();
        assert_eq!(cfg.n, 16);
        assert_eq!(cfg.k, 20);
        let back: ScenarioConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<ScenarioConfig>(r#"{"nn": 1}"#).is_err());
    }
}
