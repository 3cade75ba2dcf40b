//! Hashing, domain hashing, Ed25519 keys and authorization tokens.
//!
//! Every structure that gets hashed or signed goes through [`Encoder`], which
//! writes each field as a 4-byte big-endian length followed by the field
//! bytes, in declaration order. Integers are encoded big-endian at fixed
//! width before being length-prefixed.

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use num_bigint::BigUint;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha3::{Digest, Sha3_256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("domain size must be at least 1")]
    InvalidDomain,
    #[error("expected {expected} bytes, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("invalid hex: {0}")]
    Hex(String),
}

macro_rules! hex_bytes {
    ($name:ident, $len:expr) => {
        impl $name {
            pub const LEN: usize = $len;

            pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
                let arr: [u8; $len] =
                    bytes.try_into().map_err(|_| CryptoError::Length { expected: $len, actual: bytes.len() })?;
                Ok(Self(arr))
            }

            pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
                let bytes = hex::decode(s).map_err(|e| CryptoError::Hex(e.to_string()))?;
                Self::from_slice(&bytes)
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({}…)", stringify!($name), &self.to_hex()[..12])
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Self::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

/// A SHA3-256 output. Ordering is big-endian unsigned integer order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest256(pub [u8; 32]);
hex_bytes!(Digest256, 32);

impl Digest256 {
    pub fn xor(&self, other: &Digest256) -> Digest256 {
        let mut out = [0u8; 32];
        for (o, (a, b)) in out.iter_mut().zip(self.0.iter().zip(other.0.iter())) {
            *o = a ^ b;
        }
        Digest256(out)
    }

    pub fn to_biguint(&self) -> BigUint {
        BigUint::from_bytes_be(&self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; 32]);
hex_bytes!(PublicKey, 32);

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SignatureBytes(pub [u8; 64]);
hex_bytes!(SignatureBytes, 64);

/// 32 bytes of secret randomness (`r_i`, `r_A`).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Nonce(pub [u8; 32]);
hex_bytes!(Nonce, 32);

/// The authority's signature over a player's public key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AuthToken(pub SignatureBytes);

/// SHA3-256 of `data`.
pub fn hash(data: &[u8]) -> Digest256 {
    Digest256(Sha3_256::digest(data).into())
}

/// Hash `data` and reduce the big-endian digest modulo `domain_size`.
///
/// With `domain_size = 2^256` this is the digest itself. The reduction has a
/// modulo bias for domains that do not divide 2^256; that bias is accepted.
pub fn hash_to_domain(data: &[u8], domain_size: &BigUint) -> Result<BigUint, CryptoError> {
    if domain_size == &BigUint::default() {
        return Err(CryptoError::InvalidDomain);
    }
    Ok(hash(data).to_biguint() % domain_size)
}

/// [`hash_to_domain`] for domains that fit in a `u64`.
pub fn hash_to_small_domain(data: &[u8], domain_size: u64) -> Result<u64, CryptoError> {
    if domain_size == 0 {
        return Err(CryptoError::InvalidDomain);
    }
    Ok(reduce_be(&hash(data).0, domain_size))
}

/// Horner reduction of a big-endian byte string modulo `m`.
pub(crate) fn reduce_be(bytes: &[u8], m: u64) -> u64 {
    let m = m as u128;
    bytes.iter().fold(0u128, |acc, &b| ((acc << 8) | b as u128) % m) as u64
}

/// Ed25519 key pair. Signing is deterministic.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    pk: PublicKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("pk", &self.pk).finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn pk(&self) -> PublicKey {
        self.pk
    }

    /// The 32-byte secret seed.
    pub fn sk(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    pub fn sign(&self, message: &[u8]) -> SignatureBytes {
        SignatureBytes(self.signing.sign(message).to_bytes())
    }
}

/// Derive an Ed25519 key pair from 32 bytes of entropy.
pub fn keygen(seed: [u8; 32]) -> KeyPair {
    let signing = SigningKey::from_bytes(&seed);
    let pk = PublicKey(signing.verifying_key().to_bytes());
    KeyPair { signing, pk }
}

pub fn sign(keys: &KeyPair, message: &[u8]) -> SignatureBytes {
    keys.sign(message)
}

/// Verify an Ed25519 signature. Keys that do not decode to a curve point
/// simply fail verification.
pub fn verify(pk: &PublicKey, message: &[u8], sig: &SignatureBytes) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(&pk.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
    vk.verify(message, &sig).is_ok()
}

/// Byte-slice variant of [`verify`] that reports malformed lengths.
pub fn verify_slices(pk: &[u8], message: &[u8], sig: &[u8]) -> Result<bool, CryptoError> {
    let pk = PublicKey::from_slice(pk)?;
    let sig = SignatureBytes::from_slice(sig)?;
    Ok(verify(&pk, message, &sig))
}

fn token_message(pk: &PublicKey) -> Vec<u8> {
    let mut enc = Encoder::tagged("auth-token");
    enc.bytes(&pk.0);
    enc.finish()
}

/// `t_i = sign_A(pk_i)`.
pub fn issue_token(authority: &KeyPair, pk: &PublicKey) -> AuthToken {
    AuthToken(authority.sign(&token_message(pk)))
}

pub fn verify_token(authority_pk: &PublicKey, pk: &PublicKey, token: &AuthToken) -> bool {
    verify(authority_pk, &token_message(pk), &token.0)
}

/// Memo of signature checks keyed by the digest of `(pk, message, sig)`.
///
/// Verification is a pure function, so a simulation may share one cache
/// across every node without changing any outcome.
#[derive(Debug, Default, Clone)]
pub struct VerifyCache {
    seen: std::collections::HashMap<Digest256, bool>,
    hits: u64,
}

impl VerifyCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn verify(&mut self, pk: &PublicKey, message: &[u8], sig: &SignatureBytes) -> bool {
        let mut enc = Encoder::new();
        enc.bytes(&pk.0).bytes(message).bytes(&sig.0);
        let key = hash(&enc.finish());
        if let Some(&ok) = self.seen.get(&key) {
            self.hits += 1;
            return ok;
        }
        let ok = verify(pk, message, sig);
        self.seen.insert(key, ok);
        ok
    }

    pub fn verify_token(&mut self, authority_pk: &PublicKey, pk: &PublicKey, token: &AuthToken) -> bool {
        self.verify(authority_pk, &token_message(pk), &token.0)
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }
}

/// Length-prefixed canonical writer.
#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Start an encoding whose first field is a domain-separation tag.
    pub fn tagged(tag: &str) -> Self {
        let mut enc = Self::new();
        enc.bytes(tag.as_bytes());
        enc
    }

    pub fn bytes(&mut self, field: &[u8]) -> &mut Self {
        let len = u32::try_from(field.len()).expect("field longer than u32::MAX");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(field);
        self
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.bytes(&[v])
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }

    pub fn digest(&mut self, d: &Digest256) -> &mut Self {
        self.bytes(&d.0)
    }

    /// Nest another canonical structure as a single field.
    pub fn nested(&mut self, value: &impl Canonical) -> &mut Self {
        let inner = value.canonical_bytes();
        self.bytes(&inner)
    }

    pub fn list<T: Canonical>(&mut self, items: &[T]) -> &mut Self {
        let mut inner = Encoder::new();
        inner.u32(items.len() as u32);
        for item in items {
            inner.nested(item);
        }
        let bytes = inner.finish();
        self.bytes(&bytes)
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Types with a documented canonical byte layout.
pub trait Canonical {
    fn encode(&self, enc: &mut Encoder);

    fn canonical_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode(&mut enc);
        enc.finish()
    }

    fn canonical_digest(&self) -> Digest256 {
        hash(&self.canonical_bytes())
    }
}

impl Canonical for Digest256 {
    fn encode(&self, enc: &mut Encoder) {
        enc.digest(self);
    }
}

impl Canonical for PublicKey {
    fn encode(&self, enc: &mut Encoder) {
        enc.bytes(&self.0);
    }
}

impl Canonical for AuthToken {
    fn encode(&self, enc: &mut Encoder) {
        enc.bytes(&self.0 .0);
    }
}
