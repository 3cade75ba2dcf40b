//! Authenticated Kademlia overlay: Kids, subtrees, k-buckets and lookups.

mod kid;
mod lookup;
mod table;

pub(crate) use kid::xor_unchecked;
pub use kid::{
    bucket_depth, derive_kid, own_subtree, sibling_subtree, xor_distance, BitString, Distance, Kid, SubtreeId, MAX_BITS,
};
pub use lookup::{subtree_empty_from, Lookup, LookupResult, DEFAULT_ALPHA};
pub use table::{Contact, InsertOutcome, NodeId, RoutingTable};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum OverlayError {
    #[error("bit length {0} outside 1..=256")]
    BitsOutOfRange(usize),
    #[error("malformed bit string {0:?}")]
    BadBitString(String),
    #[error("identifier lengths differ: {0} vs {1}")]
    LengthMismatch(u16, u16),
    #[error("the root has no sibling")]
    NoSibling,
    #[error("depth {0} exceeds identifier length {1}")]
    DepthOutOfRange(u16, u16),
    #[error("token does not verify under the authority key")]
    InvalidToken,
}
