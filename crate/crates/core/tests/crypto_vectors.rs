use kadlot::crypto::{hash, hash_to_domain, hash_to_small_domain};
use num_bigint::BigUint;
use proptest::prelude::*;
use tiny_keccak::{Hasher, Sha3};

fn reference(data: &[u8]) -> [u8; 32] {
    let mut h = Sha3::v256();
    h.update(data);
    let mut out = [0u8; 32];
    h.finalize(&mut out);
    out
}

/// Schoolbook remainder of a big-endian byte string.
fn mod_small(bytes: &[u8], m: u64) -> u64 {
    bytes.iter().fold(0u128, |r, &b| (r * 256 + b as u128) % m as u128) as u64
}

#[test]
fn abc_matches_an_independent_implementation() {
    let d = hash(b"abc");
    assert_eq!(d.0, reference(b"abc"));
    assert_eq!(d.to_hex(), "3a985da74fe225b2045c172d6bd390bd855f086e3e9d525b46bfe24511431532");
}

#[test]
fn seed_1_modulo_49() {
    let reference_digest = reference(b"seed-1");
    assert_eq!(hex::encode(reference_digest), "2e548fdff9e20f5f4f4d478618ea096c397edb8615ec5fd4f0311cb0c02a5d94");
    let oracle = mod_small(&reference_digest, 49);
    assert_eq!(oracle, 22);
    assert_eq!(hash_to_small_domain(b"seed-1", 49).unwrap(), oracle);
    assert_eq!(hash_to_domain(b"seed-1", &BigUint::from(49u32)).unwrap(), BigUint::from(oracle));
}

#[test]
fn full_domain_returns_the_digest_value() {
    let full = BigUint::from(1u8) << 256;
    let v = hash_to_domain(b"seed-1", &full).unwrap();
    assert_eq!(v, BigUint::from_bytes_be(&reference(b"seed-1")));
}

proptest! {
    #[test]
    fn digests_agree_with_the_reference(data in proptest::collection::vec(any::<u8>(), 0..300)) {
        prop_assert_eq!(hash(&data).0, reference(&data));
    }

    #[test]
    fn small_domain_agrees_with_long_division(data in proptest::collection::vec(any::<u8>(), 0..64), m in 1u64..u64::MAX) {
        prop_assert_eq!(hash_to_small_domain(&data, m).unwrap(), mod_small(&reference(&data), m));
    }
}
