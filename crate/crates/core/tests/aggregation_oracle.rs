#[path = "support/oracle.rs"]
mod oracle;

use kadlot::aggregation::{
    combine_aggregates, combine_containers, lift_container, make_leaf_container, AggregateContainer,
};
use kadlot::crypto::{hash, Digest256};
use kadlot::overlay::Kid;
use kadlot::simnet::{run_scenario, ScenarioConfig};

fn kid_bits(k: &Kid) -> Vec<bool> {
    (0..k.bits()).map(|i| k.bit(i)).collect()
}

fn up(c: &AggregateContainer) -> AggregateContainer {
    lift_container(c).unwrap()
}

#[test]
fn four_leaf_fold_matches_the_oracle() {
    let kids = ["0001", "0110", "1000", "1011"].map(|s| Kid::from_bin(s).unwrap());
    let a: Vec<Digest256> = (0..4u8).map(|i| hash(&[i])).collect();
    let leaves: Vec<_> = kids.iter().zip(&a).map(|(k, a)| make_leaf_container(*a, k)).collect();
    // 0001 and 0110 meet at depth 1, 1000 and 1011 at depth 2.
    let l = combine_containers(&up(&up(&leaves[0])), &up(&up(&leaves[1]))).unwrap();
    let r = up(&combine_containers(&up(&leaves[2]), &up(&leaves[3])).unwrap());
    let root = combine_containers(&l, &r).unwrap();

    let expected =
        oracle::fold_tree(&kids.iter().zip(&a).map(|(k, a)| (kid_bits(k), a.0)).collect::<Vec<_>>(), 4).unwrap();
    assert_eq!((root.h.0, root.a.0, root.c), (expected.h, expected.a, expected.c));

    let pair = |x: [u8; 32], y: [u8; 32]| oracle::sha3(&[x.min(y), x.max(y)].concat());
    assert_eq!(combine_aggregates(&a[0], &a[1]).0, pair(a[0].0, a[1].0));
    assert_eq!(root.a.0, pair(pair(a[0].0, a[1].0), pair(a[2].0, a[3].0)));
}

#[test]
fn distributed_root_of_four_players_matches_the_oracle() {
    for seed in 1..=3 {
        let r = run_scenario(&ScenarioConfig { n: 4, bits: 8, seed, ..Default::default() }).unwrap();
        let leaves: Vec<_> = r.players.iter().map(|p| (kid_bits(&p.kid.unwrap()), p.leaf_a.unwrap().0)).collect();
        let expected = oracle::fold_tree(&leaves, 8).unwrap();
        for p in &r.players {
            assert_eq!((p.root.unwrap().0, p.root_a.unwrap().0, p.root_c.unwrap()), (expected.h, expected.a, 4));
        }
    }
}
