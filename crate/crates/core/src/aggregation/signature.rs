//! Container signatures `sig_i(h, d, c)` and equivocation evidence.
//!
//! Signed message layout: `"container-sig" | h (32) | d (u16 BE) | c (u64 BE)`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::container::AggregateContainer;
use super::AggregationError;
use crate::crypto::{AuthToken, Canonical, Digest256, Encoder, KeyPair, PublicKey, SignatureBytes, VerifyCache};
use crate::overlay::{derive_kid, Kid, SubtreeId};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct ContainerSignature {
    pub signer: PublicKey,
    pub token: AuthToken,
    pub h: Digest256,
    pub d: u16,
    pub c: u64,
    pub sig: SignatureBytes,
}

pub fn signature_message(h: &Digest256, d: u16, c: u64) -> Vec<u8> {
    let mut enc = Encoder::tagged("container-sig");
    enc.digest(h).u16(d).u64(c);
    enc.finish()
}

/// Sign a container the signer belongs to.
pub fn sign_container(
    keys: &KeyPair,
    token: &AuthToken,
    kid: &Kid,
    container: &AggregateContainer,
) -> Result<ContainerSignature, AggregationError> {
    if !container.subtree.contains(kid) {
        return Err(AggregationError::SignerOutsideSubtree);
    }
    let d = container.depth();
    Ok(ContainerSignature {
        signer: keys.pk(),
        token: *token,
        h: container.h,
        d,
        c: container.c,
        sig: keys.sign(&signature_message(&container.h, d, container.c)),
    })
}

impl ContainerSignature {
    pub fn signer_kid(&self, bits: u16) -> Option<Kid> {
        derive_kid(&self.token, bits).ok()
    }

    /// Token, signature, and membership of the signer in `subtree`.
    pub fn verify(&self, authority: &PublicKey, subtree: &SubtreeId, bits: u16, cache: &mut VerifyCache) -> bool {
        self.d == subtree.depth()
            && self.signer_kid(bits).is_some_and(|k| subtree.contains(&k))
            && cache.verify_token(authority, &self.signer, &self.token)
            && cache.verify(&self.signer, &signature_message(&self.h, self.d, self.c), &self.sig)
    }

    pub fn covers(&self, container: &AggregateContainer) -> bool {
        self.h == container.h && self.d == container.depth() && self.c == container.c
    }
}

impl Canonical for ContainerSignature {
    fn encode(&self, enc: &mut Encoder) {
        enc.bytes(&self.signer.0).bytes(&self.token.0 .0).digest(&self.h).u16(self.d).u64(self.c).bytes(&self.sig.0);
    }
}

/// Two signatures by one signer on different hashes for the same `(d, c)`.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct MisbehaviorProof {
    pub first: ContainerSignature,
    pub second: ContainerSignature,
    /// Set when `c <= l`: the signer deviated for certain.
    pub certain: bool,
}

impl MisbehaviorProof {
    pub fn signer(&self) -> PublicKey {
        self.first.signer
    }

    /// Structural re-check; signature validity is checked separately.
    pub fn is_consistent(&self, l: u64) -> bool {
        detect_equivocation(&self.first, &self.second, l).as_ref() == Some(self)
    }

    /// Consistent, and both signatures verify for the signer's own subtree.
    pub fn verify(&self, authority: &PublicKey, bits: u16, l: u64, cache: &mut VerifyCache) -> bool {
        self.is_consistent(l)
            && [self.first, self.second]
                .iter()
                .all(|s| s.signer_kid(bits).is_some_and(|k| s.verify(authority, &SubtreeId::of(&k, s.d), bits, cache)))
    }
}

impl Canonical for MisbehaviorProof {
    fn encode(&self, enc: &mut Encoder) {
        enc.nested(&self.first).nested(&self.second).u8(self.certain as u8);
    }
}

/// Both signatures are assumed to verify.
pub fn detect_equivocation(s1: &ContainerSignature, s2: &ContainerSignature, l: u64) -> Option<MisbehaviorProof> {
    (s1.signer == s2.signer && s1.d == s2.d && s1.c == s2.c && s1.h != s2.h).then(|| {
        let (first, second) = if s1.h < s2.h { (*s1, *s2) } else { (*s2, *s1) };
        MisbehaviorProof { first, second, certain: s1.c <= l }
    })
}

/// Per-node memory of verified signatures keyed by `(signer, d, c)`.
#[derive(Debug, Default, Clone)]
pub struct SignatureLedger {
    first_seen: BTreeMap<(PublicKey, u16, u64), ContainerSignature>,
    convicted: BTreeSet<PublicKey>,
    /// Signers named only by proofs with `c > l`; they may have been tricked.
    suspected: BTreeSet<PublicKey>,
}

impl SignatureLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record a verified signature; returns a proof the first time a signer is
    /// caught equivocating. Only certain proofs convict.
    pub fn observe(&mut self, sig: &ContainerSignature, l: u64) -> Option<MisbehaviorProof> {
        let key = (sig.signer, sig.d, sig.c);
        match self.first_seen.get(&key) {
            None => {
                self.first_seen.insert(key, *sig);
                None
            }
            Some(prev) => {
                let proof = detect_equivocation(prev, sig, l)?;
                let fresh =
                    if proof.certain { self.convicted.insert(sig.signer) } else { self.suspected.insert(sig.signer) };
                fresh.then_some(proof)
            }
        }
    }

    pub fn is_convicted(&self, pk: &PublicKey) -> bool {
        self.convicted.contains(pk)
    }

    pub fn convict(&mut self, pk: PublicKey) {
        self.convicted.insert(pk);
    }

    pub fn convicted(&self) -> impl Iterator<Item = &PublicKey> {
        self.convicted.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::container::{lift_container, make_leaf_container};
    use crate::crypto::{hash, issue_token, keygen};

    struct Fixture {
        authority: KeyPair,
        keys: KeyPair,
        token: AuthToken,
        kid: Kid,
    }

    fn fixture(bits: u16) -> Fixture {
        let authority = keygen([1; 32]);
        let keys = keygen([2; 32]);
        let token = issue_token(&authority, &keys.pk());
        let kid = derive_kid(&token, bits).unwrap();
        Fixture { authority, keys, token, kid }
    }

    #[test]
    fn sign_and_verify() {
        let f = fixture(16);
        let leaf = make_leaf_container(hash(b"a"), &f.kid);
        let up = lift_container(&leaf).unwrap();
        let s = sign_container(&f.keys, &f.token, &f.kid, &up).unwrap();
        let mut cache = VerifyCache::new();
        assert!(s.verify(&f.authority.pk(), &up.subtree, 16, &mut cache));
        assert!(s.covers(&up));

        let mut bad = s;
        bad.c += 1;
        assert!(!bad.verify(&f.authority.pk(), &up.subtree, 16, &mut cache));
        let mut bad = s;
        bad.h = hash(b"x");
        assert!(!bad.verify(&f.authority.pk(), &up.subtree, 16, &mut cache));
        let mut bad = s;
        bad.d -= 1;
        assert!(!bad.verify(&f.authority.pk(), &up.subtree, 16, &mut cache));
    }

    #[test]
    fn signer_outside_subtree() {
        let f = fixture(16);
        let other = SubtreeId::of(&f.kid, 1).sibling().unwrap();
        let foreign = make_leaf_container(hash(b"a"), &other.leaf_within(16, |_| false));
        assert!(matches!(
            sign_container(&f.keys, &f.token, &f.kid, &foreign),
            Err(AggregationError::SignerOutsideSubtree)
        ));
        let own = make_leaf_container(hash(b"a"), &f.kid);
        let s = sign_container(&f.keys, &f.token, &f.kid, &own).unwrap();
        let mut cache = VerifyCache::new();
        let mut moved = s;
        moved.d = 16;
        assert!(!moved.verify(&f.authority.pk(), &foreign.subtree, 16, &mut cache));
    }

    fn pair(c: u64) -> (ContainerSignature, ContainerSignature) {
        let f = fixture(8);
        let msg = |h: &Digest256| f.keys.sign(&signature_message(h, 8, c));
        let (h1, h2) = (hash(b"1"), hash(b"2"));
        let base = ContainerSignature { signer: f.keys.pk(), token: f.token, h: h1, d: 8, c, sig: msg(&h1) };
        (base, ContainerSignature { h: h2, sig: msg(&h2), ..base })
    }

    #[test]
    fn equivocation_certainty_boundary() {
        let (s1, s2) = pair(1);
        let p = detect_equivocation(&s1, &s2, 3).unwrap();
        assert!(p.certain);
        assert!(p.is_consistent(3));
        assert_eq!(p, detect_equivocation(&s2, &s1, 3).unwrap());
        assert!(detect_equivocation(&s1, &s1, 3).is_none());

        let (s1, s2) = pair(3);
        assert!(detect_equivocation(&s1, &s2, 3).unwrap().certain);
        let (s1, s2) = pair(4);
        assert!(!detect_equivocation(&s1, &s2, 3).unwrap().certain);
    }

    #[test]
    fn ledger_reports_once() {
        let (s1, s2) = pair(1);
        let mut ledger = SignatureLedger::new();
        assert!(ledger.observe(&s1, 3).is_none());
        assert!(ledger.observe(&s1, 3).is_none());
        assert!(ledger.observe(&s2, 3).is_some());
        assert!(ledger.observe(&s2, 3).is_none());
        assert!(ledger.is_convicted(&s1.signer));
    }

    #[test]
    fn uncertain_proofs_do_not_convict() {
        let (s1, s2) = pair(4);
        let mut ledger = SignatureLedger::new();
        ledger.observe(&s1, 3);
        assert!(ledger.observe(&s2, 3).is_some_and(|p| !p.certain));
        assert!(!ledger.is_convicted(&s1.signer));

        let (c1, c2) = pair(2);
        ledger.observe(&c1, 3);
        assert!(ledger.observe(&c2, 3).is_some_and(|p| p.certain));
        assert!(ledger.is_convicted(&s1.signer));
    }
}
