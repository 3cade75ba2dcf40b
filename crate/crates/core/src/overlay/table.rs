use serde::{Deserialize, Serialize};

use super::kid::{bucket_depth, derive_kid, sibling_subtree, xor_unchecked, Kid, SubtreeId};
use super::OverlayError;
use crate::crypto::{verify_token, AuthToken, Canonical, Encoder, PublicKey};

/// Simulated transport address.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Contact {
    pub kid: Kid,
    pub pk: PublicKey,
    pub token: AuthToken,
    pub addr: NodeId,
}

impl Contact {
    /// Checks the token against the authority key and the Kid against the token.
    pub fn is_authorized(&self, authority_pk: &PublicKey) -> bool {
        verify_token(authority_pk, &self.pk, &self.token)
            && derive_kid(&self.token, self.kid.bits()).ok().as_ref() == Some(&self.kid)
    }
}

impl Canonical for Contact {
    fn encode(&self, enc: &mut Encoder) {
        enc.nested(&self.kid);
        enc.bytes(&self.pk.0);
        enc.bytes(&self.token.0 .0);
        enc.u32(self.addr.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted(u16),
    AlreadyKnown,
    BucketFull(u16),
    IsSelf,
}

/// k-buckets indexed by the depth of the sibling subtree they cover.
#[derive(Debug, Clone)]
pub struct RoutingTable {
    self_kid: Kid,
    k: usize,
    /// `buckets[d - 1]` holds contacts of `S(self, d)`.
    buckets: Vec<Vec<Contact>>,
}

impl RoutingTable {
    pub fn new(self_kid: Kid, k: usize) -> Self {
        assert!(k >= 1);
        Self { self_kid, k, buckets: vec![Vec::new(); self_kid.bits() as usize] }
    }

    pub fn self_kid(&self) -> &Kid {
        &self.self_kid
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn bits(&self) -> u16 {
        self.self_kid.bits()
    }

    /// Insert after checking the contact's token and Kid.
    pub fn bucket_insert(&mut self, contact: Contact, authority_pk: &PublicKey) -> Result<InsertOutcome, OverlayError> {
        if contact.kid == self.self_kid {
            return Ok(InsertOutcome::IsSelf);
        }
        if contact.kid.bits() != self.bits() {
            return Err(OverlayError::LengthMismatch(contact.kid.bits(), self.bits()));
        }
        if !contact.is_authorized(authority_pk) {
            return Err(OverlayError::InvalidToken);
        }
        Ok(self.insert_verified(contact))
    }

    /// Insert a contact whose token the caller already checked. A full bucket
    /// drops the newcomer.
    pub fn insert_verified(&mut self, contact: Contact) -> InsertOutcome {
        let Some(d) = bucket_depth(&self.self_kid, &contact.kid) else {
            return InsertOutcome::IsSelf;
        };
        let bucket = &mut self.buckets[d as usize - 1];
        if bucket.iter().any(|c| c.pk == contact.pk || c.kid == contact.kid) {
            InsertOutcome::AlreadyKnown
        } else if bucket.len() >= self.k {
            InsertOutcome::BucketFull(d)
        } else {
            bucket.push(contact);
            InsertOutcome::Inserted(d)
        }
    }

    pub fn bucket(&self, d: u16) -> &[Contact] {
        &self.buckets[d as usize - 1]
    }

    pub fn is_full(&self, d: u16) -> bool {
        self.bucket(d).len() >= self.k
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contacts(&self) -> impl Iterator<Item = &Contact> {
        self.buckets.iter().flatten()
    }

    pub fn contains_pk(&self, pk: &PublicKey) -> bool {
        self.contacts().any(|c| &c.pk == pk)
    }

    pub fn find_pk(&self, pk: &PublicKey) -> Option<&Contact> {
        self.contacts().find(|c| &c.pk == pk)
    }

    /// Up to `count` known contacts closest to `target`.
    pub fn closest(&self, target: &Kid, count: usize) -> Vec<Contact> {
        let mut all: Vec<Contact> = self.contacts().copied().collect();
        all.sort_by_key(|c| (xor_unchecked(&c.kid, target), c.kid));
        all.truncate(count);
        all
    }

    /// Contacts inside the subtree `S̄(self, d)`, i.e. buckets deeper than `d`.
    pub fn within_own_subtree(&self, d: u16) -> impl Iterator<Item = &Contact> {
        self.buckets[d as usize..].iter().flatten()
    }

    pub fn sibling(&self, d: u16) -> SubtreeId {
        sibling_subtree(&self.self_kid, d).expect("depth in range")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{issue_token, keygen, KeyPair};

    fn authority() -> KeyPair {
        keygen([0xaa; 32])
    }

    fn contact(a: &KeyPair, i: u32, bits: u16) -> Contact {
        let mut seed = [7u8; 32];
        seed[..4].copy_from_slice(&i.to_be_bytes());
        let kp = keygen(seed);
        let token = issue_token(a, &kp.pk());
        Contact { kid: derive_kid(&token, bits).unwrap(), pk: kp.pk(), token, addr: NodeId(i) }
    }

    #[test]
    fn self_insert_is_noop() {
        let a = authority();
        let me = contact(&a, 0, 16);
        let mut t = RoutingTable::new(me.kid, 4);
        assert_eq!(t.bucket_insert(me, &a.pk()).unwrap(), InsertOutcome::IsSelf);
        assert!(t.is_empty());
    }

    #[test]
    fn first_bit_difference_lands_in_bucket_one() {
        let a = authority();
        let me = contact(&a, 0, 16);
        let other = (1..).map(|i| contact(&a, i, 16)).find(|c| c.kid.bit(0) != me.kid.bit(0)).unwrap();
        let mut t = RoutingTable::new(me.kid, 4);
        assert_eq!(t.bucket_insert(other, &a.pk()).unwrap(), InsertOutcome::Inserted(1));
        assert_eq!(t.bucket(1), &[other]);
    }

    #[test]
    fn bucket_capacity_is_k() {
        let a = authority();
        let me = contact(&a, 0, 16);
        let k = 3;
        let mut t = RoutingTable::new(me.kid, k);
        let same_bucket: Vec<_> =
            (1..).map(|i| contact(&a, i, 16)).filter(|c| c.kid.bit(0) != me.kid.bit(0)).take(k + 1).collect();
        for c in &same_bucket[..k] {
            assert_eq!(t.bucket_insert(*c, &a.pk()).unwrap(), InsertOutcome::Inserted(1));
        }
        assert_eq!(t.bucket_insert(same_bucket[k], &a.pk()).unwrap(), InsertOutcome::BucketFull(1));
        assert_eq!(t.bucket(1).len(), k);
        assert_eq!(t.bucket_insert(same_bucket[0], &a.pk()).unwrap(), InsertOutcome::AlreadyKnown);
    }

    #[test]
    fn bad_token_rejected() {
        let a = authority();
        let me = contact(&a, 0, 16);
        let mut forged = contact(&a, 1, 16);
        forged.token = contact(&a, 2, 16).token;
        let mut t = RoutingTable::new(me.kid, 4);
        assert!(matches!(t.bucket_insert(forged, &a.pk()), Err(OverlayError::InvalidToken)));
        let rogue = keygen([0xbb; 32]);
        let foreign = contact(&rogue, 3, 16);
        assert!(matches!(t.bucket_insert(foreign, &a.pk()), Err(OverlayError::InvalidToken)));
    }

    #[test]
    fn every_contact_lies_in_its_bucket_subtree() {
        let a = authority();
        let me = contact(&a, 0, 12);
        let mut t = RoutingTable::new(me.kid, 2);
        for i in 1..300 {
            let _ = t.bucket_insert(contact(&a, i, 12), &a.pk());
        }
        for d in 1..=12 {
            let s = t.sibling(d);
            assert!(t.bucket(d).len() <= 2);
            for c in t.bucket(d) {
                assert!(s.contains(&c.kid));
            }
        }
    }

    #[test]
    fn closest_is_sorted_by_distance() {
        let a = authority();
        let me = contact(&a, 0, 16);
        let mut t = RoutingTable::new(me.kid, 20);
        for i in 1..100 {
            let _ = t.bucket_insert(contact(&a, i, 16), &a.pk());
        }
        let target = contact(&a, 500, 16).kid;
        let got = t.closest(&target, 10);
        let mut all: Vec<_> = t.contacts().copied().collect();
        all.sort_by_key(|c| xor_unchecked(&c.kid, &target));
        assert_eq!(got, all[..10].to_vec());
    }
}
