use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::OverlayError;
use crate::crypto::{hash, AuthToken, Canonical, Encoder};

pub const MAX_BITS: u16 = 256;

/// Bit string of at most 256 bits, most significant bit first. Bits past
/// `len` are always zero so derived equality and hashing are exact.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct BitString {
    bytes: [u8; 32],
    len: u16,
}

impl BitString {
    pub fn empty() -> Self {
        Self::default()
    }

    /// First `len` bits of `bytes`.
    pub fn from_bytes(bytes: &[u8; 32], len: u16) -> Self {
        assert!(len <= MAX_BITS);
        let mut out = Self { bytes: *bytes, len };
        out.clear_tail();
        out
    }

    /// Parse a string of `0`/`1` characters.
    pub fn from_bin(s: &str) -> Result<Self, OverlayError> {
        if s.len() > MAX_BITS as usize {
            return Err(OverlayError::BitsOutOfRange(s.len()));
        }
        let mut out = Self::empty();
        for c in s.chars() {
            match c {
                '0' => out.push(false),
                '1' => out.push(true),
                other => return Err(OverlayError::BadBitString(other.to_string())),
            }
        }
        Ok(out)
    }

    fn clear_tail(&mut self) {
        let len = self.len as usize;
        for i in 0..32 {
            let lo = i * 8;
            if lo >= len {
                self.bytes[i] = 0;
            } else if lo + 8 > len {
                let keep = len - lo;
                self.bytes[i] &= 0xffu8 << (8 - keep);
            }
        }
    }

    pub fn len(&self) -> u16 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, i: u16) -> bool {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        self.bytes[(i / 8) as usize] & (0x80 >> (i % 8)) != 0
    }

    fn set(&mut self, i: u16, v: bool) {
        let mask = 0x80u8 >> (i % 8);
        if v {
            self.bytes[(i / 8) as usize] |= mask;
        } else {
            self.bytes[(i / 8) as usize] &= !mask;
        }
    }

    pub fn push(&mut self, v: bool) {
        assert!(self.len < MAX_BITS);
        self.len += 1;
        self.set(self.len - 1, v);
    }

    pub fn prefix(&self, len: u16) -> BitString {
        assert!(len <= self.len);
        Self::from_bytes(&self.bytes, len)
    }

    pub fn with_bit(&self, v: bool) -> BitString {
        let mut out = *self;
        out.push(v);
        out
    }

    pub fn flip(&self, i: u16) -> BitString {
        let mut out = *self;
        let cur = out.bit(i);
        out.set(i, !cur);
        out
    }

    pub fn starts_with(&self, prefix: &BitString) -> bool {
        prefix.len <= self.len && self.prefix(prefix.len) == *prefix
    }

    pub fn common_prefix_len(&self, other: &BitString) -> u16 {
        let max = self.len.min(other.len);
        for (i, (a, b)) in self.bytes.iter().zip(other.bytes.iter()).enumerate() {
            let x = a ^ b;
            if x != 0 {
                let at = (i as u16) * 8 + x.leading_zeros() as u16;
                return at.min(max);
            }
        }
        max
    }

    /// Raw storage; bits past `len` are zero.
    pub fn raw(&self) -> &[u8; 32] {
        &self.bytes
    }

    pub fn byte_len(&self) -> usize {
        (self.len as usize).div_ceil(8)
    }

    pub fn to_bin(&self) -> String {
        (0..self.len).map(|i| if self.bit(i) { '1' } else { '0' }).collect()
    }

    /// Pad with `fill` bits up to `len`.
    pub fn extend_to(&self, len: u16, fill: impl Fn(u16) -> bool) -> BitString {
        let mut out = *self;
        while out.len < len {
            let i = out.len;
            out.push(fill(i));
        }
        out
    }
}

impl Ord for BitString {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bytes.cmp(&other.bytes).then(self.len.cmp(&other.len))
    }
}

impl PartialOrd for BitString {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 24 {
            write!(f, "0b{}", self.to_bin())
        } else {
            write!(f, "{}/{}…", self.len, hex::encode(&self.bytes[..self.byte_len().min(6)]))
        }
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.len, hex::encode(&self.bytes[..self.byte_len()]))
    }
}

impl std::str::FromStr for BitString {
    type Err = OverlayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (len, hx) = s.split_once('/').ok_or_else(|| OverlayError::BadBitString(s.to_string()))?;
        let len: u16 = len.parse().map_err(|_| OverlayError::BadBitString(s.to_string()))?;
        let raw = hex::decode(hx).map_err(|_| OverlayError::BadBitString(s.to_string()))?;
        if len > MAX_BITS || raw.len() != (len as usize).div_ceil(8) {
            return Err(OverlayError::BadBitString(s.to_string()));
        }
        let mut bytes = [0u8; 32];
        bytes[..raw.len()].copy_from_slice(&raw);
        let out = Self::from_bytes(&bytes, len);
        if out.bytes != bytes {
            return Err(OverlayError::BadBitString(s.to_string()));
        }
        Ok(out)
    }
}

impl Serialize for BitString {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BitString {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl Canonical for BitString {
    fn encode(&self, enc: &mut Encoder) {
        enc.u16(self.len);
        enc.bytes(&self.bytes[..self.byte_len()]);
    }
}

/// Leaf position of a player in the identifier tree.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Kid(pub BitString);

impl fmt::Debug for Kid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Kid({:?})", self.0)
    }
}

impl fmt::Display for Kid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl Kid {
    pub fn from_bin(s: &str) -> Result<Self, OverlayError> {
        BitString::from_bin(s).map(Kid)
    }

    pub fn bits(&self) -> u16 {
        self.0.len()
    }

    pub fn bit(&self, i: u16) -> bool {
        self.0.bit(i)
    }
}

impl Canonical for Kid {
    fn encode(&self, enc: &mut Encoder) {
        self.0.encode(enc);
    }
}

/// First `bits` bits of `hash(token)`.
pub fn derive_kid(token: &AuthToken, bits: u16) -> Result<Kid, OverlayError> {
    if !(1..=MAX_BITS).contains(&bits) {
        return Err(OverlayError::BitsOutOfRange(bits as usize));
    }
    Ok(Kid(BitString::from_bytes(&hash(&token.0 .0).0, bits)))
}

/// XOR distance as a 256-bit big-endian integer. Only the first `B` bits can
/// be non-zero; shorter identifiers occupy the high-order bits, so ordering
/// by distance is the same as for the B-bit integers.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct Distance(pub [u8; 32]);

impl Distance {
    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|b| *b == 0)
    }

    /// Integer value of the distance for a `bits`-wide identifier space.
    pub fn to_biguint(&self, bits: u16) -> num_bigint::BigUint {
        num_bigint::BigUint::from_bytes_be(&self.0) >> (256 - bits as usize)
    }

    pub fn xor(&self, other: &Distance) -> Distance {
        Distance(std::array::from_fn(|i| self.0[i] ^ other.0[i]))
    }
}

pub fn xor_distance(x: &Kid, y: &Kid) -> Result<Distance, OverlayError> {
    if x.bits() != y.bits() {
        return Err(OverlayError::LengthMismatch(x.bits(), y.bits()));
    }
    Ok(xor_unchecked(x, y))
}

pub(crate) fn xor_unchecked(x: &Kid, y: &Kid) -> Distance {
    let mut out = [0u8; 32];
    for (o, (a, b)) in out.iter_mut().zip(x.0.raw().iter().zip(y.0.raw().iter())) {
        *o = a ^ b;
    }
    Distance(out)
}

/// A subtree of the identifier tree, named by the prefix its leaves share.
/// Depth 0 is the whole tree.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubtreeId {
    pub prefix: BitString,
}

impl fmt::Debug for SubtreeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Subtree(d={}, {:?})", self.depth(), self.prefix)
    }
}

impl SubtreeId {
    pub fn root() -> Self {
        Self { prefix: BitString::empty() }
    }

    pub fn from_prefix(prefix: BitString) -> Self {
        Self { prefix }
    }

    pub fn from_bin(s: &str) -> Result<Self, OverlayError> {
        BitString::from_bin(s).map(Self::from_prefix)
    }

    pub fn depth(&self) -> u16 {
        self.prefix.len()
    }

    pub fn contains(&self, kid: &Kid) -> bool {
        kid.0.starts_with(&self.prefix)
    }

    /// The subtree at depth `d` containing `kid`.
    pub fn of(kid: &Kid, d: u16) -> Self {
        Self { prefix: kid.0.prefix(d) }
    }

    pub fn parent(&self) -> Option<SubtreeId> {
        (self.depth() > 0).then(|| Self { prefix: self.prefix.prefix(self.depth() - 1) })
    }

    pub fn child(&self, bit: bool) -> SubtreeId {
        Self { prefix: self.prefix.with_bit(bit) }
    }

    pub fn sibling(&self) -> Option<SubtreeId> {
        (self.depth() > 0).then(|| Self { prefix: self.prefix.flip(self.depth() - 1) })
    }

    pub fn is_sibling_of(&self, other: &SubtreeId) -> bool {
        self.sibling().as_ref() == Some(other)
    }

    /// A leaf identifier inside this subtree, padded with `fill`.
    pub fn leaf_within(&self, bits: u16, fill: impl Fn(u16) -> bool) -> Kid {
        Kid(self.prefix.extend_to(bits, fill))
    }
}

impl Canonical for SubtreeId {
    fn encode(&self, enc: &mut Encoder) {
        self.prefix.encode(enc);
    }
}

/// `S(x, d)`: the sibling of the depth-`d` subtree containing `x`.
pub fn sibling_subtree(x: &Kid, d: u16) -> Result<SubtreeId, OverlayError> {
    if d == 0 {
        return Err(OverlayError::NoSibling);
    }
    if d > x.bits() {
        return Err(OverlayError::DepthOutOfRange(d, x.bits()));
    }
    Ok(SubtreeId { prefix: x.0.prefix(d).flip(d - 1) })
}

/// `S̄(x, d)`: the depth-`d` subtree containing `x`.
pub fn own_subtree(x: &Kid, d: u16) -> Result<SubtreeId, OverlayError> {
    if d > x.bits() {
        return Err(OverlayError::DepthOutOfRange(d, x.bits()));
    }
    Ok(SubtreeId::of(x, d))
}

/// Depth of the sibling subtree of `x` that contains `y`, i.e. common prefix
/// length plus one. `None` when `x == y`.
pub fn bucket_depth(x: &Kid, y: &Kid) -> Option<u16> {
    let cpl = x.0.common_prefix_len(&y.0);
    (cpl < x.bits()).then_some(cpl + 1)
}
