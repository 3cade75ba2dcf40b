//! Player roster: strategies, key seeds, nonces and purchase times.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Placement, ScenarioConfig, Strategy};
use super::SimError;
use crate::crypto::{hash, issue_token, keygen, Encoder, KeyPair, Nonce};
use crate::lottery::Mode;
use crate::overlay::{derive_kid, Kid};

#[derive(Clone, Debug)]
pub struct PlannedPlayer {
    /// Transport address, `1..=n`.
    pub addr: u32,
    pub strategy: Strategy,
    pub key_seed: [u8; 32],
    pub r: Nonce,
    /// Secret lotto number (LO only).
    pub lotto_n: Option<u64>,
    pub buy_at_ms: u64,
}

/// Stream seeded from the scenario seed and a label.
pub fn labelled_rng(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut enc = Encoder::tagged(label);
    enc.u64(seed).u64(index);
    ChaCha8Rng::from_seed(hash(&enc.finish()).0)
}

/// Kid that a token from `authority` on this key would produce.
pub fn predicted_kid(authority: &KeyPair, keys: &KeyPair, bits: u16) -> Kid {
    derive_kid(&issue_token(authority, &keys.pk()), bits).expect("bits validated")
}

/// `kid_of` predicts the Kid a key pair will receive.
pub fn plan_players(cfg: &ScenarioConfig, kid_of: impl Fn(&KeyPair) -> Kid) -> Result<Vec<PlannedPlayer>, SimError> {
    let mut rng = labelled_rng(cfg.seed, "roster", 0);
    let mut strategies: Vec<Strategy> =
        cfg.strategy_counts().into_iter().flat_map(|(s, count)| std::iter::repeat_n(s, count)).collect();
    strategies.shuffle(&mut rng);

    let mut players: Vec<PlannedPlayer> = Vec::with_capacity(cfg.n);
    for (i, strategy) in strategies.into_iter().enumerate() {
        let mut key_seed = [0u8; 32];
        rng.fill_bytes(&mut key_seed);
        let mut r = [0u8; 32];
        rng.fill_bytes(&mut r);
        let lotto_n = (cfg.mode == Mode::Lo).then(|| rng.gen_range(0..cfg.lotto_domain));
        players.push(PlannedPlayer { addr: i as u32 + 1, strategy, key_seed, r: Nonce(r), lotto_n, buy_at_ms: 0 });
    }

    if let Placement::Clustered { count, .. } = &cfg.placement {
        let prefix = cfg.cluster_prefix().expect("validated prefix");
        let mut dishonest: Vec<usize> = (0..players.len())
            .filter(|&i| !players[i].strategy.is_honest() && players[i].strategy != Strategy::LateJoiner)
            .collect();
        dishonest.sort_by_key(|&i| (players[i].strategy != Strategy::ColludingRootManipulator, i));
        let mut rolls = 0u64;
        for (rank, &i) in dishonest.iter().enumerate() {
            let want_inside = rank < *count;
            while prefix.contains(&kid_of(&keygen(players[i].key_seed))) != want_inside {
                rolls += 1;
                if rolls > cfg.max_placement_rolls {
                    return Err(SimError::Config("placement re-roll budget exhausted".into()));
                }
                rng.fill_bytes(&mut players[i].key_seed);
            }
        }
    }

    let spacing = cfg.purchase_spacing_ms();
    let late_start = cfg.aggregation_start() + cfg.epoch_ms / 2;
    let (mut on_time, mut late) = (0u64, 0u64);
    for p in &mut players {
        if p.strategy == Strategy::LateJoiner {
            p.buy_at_ms = late_start + late * spacing;
            late += 1;
        } else {
            p.buy_at_ms = on_time * spacing;
            on_time += 1;
        }
    }
    Ok(players)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::config::StrategyShare;

    fn cfg() -> ScenarioConfig {
        ScenarioConfig {
            n: 40,
            bits: 16,
            b: 0.3,
            strategies: vec![StrategyShare { strategy: Strategy::Silent, fraction: 1.0 }],
            placement: Placement::Clustered { prefix: "101".into(), count: 4 },
            ..Default::default()
        }
        .resolve()
        .unwrap()
    }

    #[test]
    fn clustered_places_exact_count_under_prefix() {
        let cfg = cfg();
        let a = keygen([9; 32]);
        let plan = plan_players(&cfg, |k| predicted_kid(&a, k, cfg.bits)).unwrap();
        let prefix = cfg.cluster_prefix().unwrap();
        let inside = plan
            .iter()
            .filter(|p| !p.strategy.is_honest())
            .filter(|p| prefix.contains(&predicted_kid(&a, &keygen(p.key_seed), cfg.bits)))
            .count();
        assert_eq!(inside, 4);
        assert_eq!(plan.iter().filter(|p| !p.strategy.is_honest()).count(), 12);
    }

    #[test]
    fn roster_is_deterministic_and_spaced() {
        let cfg = cfg();
        let a = keygen([9; 32]);
        let p1 = plan_players(&cfg, |k| predicted_kid(&a, k, cfg.bits)).unwrap();
        let p2 = plan_players(&cfg, |k| predicted_kid(&a, k, cfg.bits)).unwrap();
        assert!(p1.iter().zip(&p2).all(|(x, y)| x.key_seed == y.key_seed && x.r == y.r && x.strategy == y.strategy));
        for w in p1.windows(2) {
            assert_eq!(w[1].buy_at_ms - w[0].buy_at_ms, cfg.purchase_spacing_ms());
        }
        assert!(p1.last().unwrap().buy_at_ms < cfg.deadline());
    }

    #[test]
    fn budget_exhaustion_is_a_config_error() {
        let cfg = ScenarioConfig {
            placement: Placement::Clustered { prefix: "1010101010".into(), count: 4 },
            max_placement_rolls: 5,
            ..cfg()
        };
        assert!(matches!(plan_players(&cfg, |k| predicted_kid(&keygen([9; 32]), k, 16)), Err(SimError::Config(_))));
    }
}
