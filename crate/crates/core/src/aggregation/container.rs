//! Aggregate containers and their combination rules.
//!
//! Byte layout of the hashed part of a container, each field length-prefixed:
//!
//! ```text
//! "container" | a (32) | c (u64 BE) | children | subtree
//! ```
//!
//! `children` is the concatenation of `h_child (32) || c_child (u64 BE)` for
//! each child in ascending order of `h_child`; it is empty for a leaf and
//! holds one record for a lifted container. `subtree` is the nested subtree
//! encoding (`u16` depth followed by the packed prefix bytes).

use serde::{Deserialize, Serialize};

use super::AggregationError;
use crate::crypto::{hash, Canonical, Digest256, Encoder};
use crate::overlay::{Kid, SubtreeId};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct ChildRef {
    pub h: Digest256,
    pub c: u64,
}

#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct AggregateContainer {
    pub h: Digest256,
    pub a: Digest256,
    pub c: u64,
    /// Sorted ascending by `h`; at most two entries.
    pub children: Vec<ChildRef>,
    pub subtree: SubtreeId,
}

fn container_hash(a: &Digest256, c: u64, children: &[ChildRef], subtree: &SubtreeId) -> Digest256 {
    let mut packed = Vec::with_capacity(children.len() * 40);
    for child in children {
        packed.extend_from_slice(&child.h.0);
        packed.extend_from_slice(&child.c.to_be_bytes());
    }
    let mut enc = Encoder::tagged("container");
    enc.digest(a).u64(c).bytes(&packed).nested(subtree);
    hash(&enc.finish())
}

impl AggregateContainer {
    fn assemble(a: Digest256, c: u64, mut children: Vec<ChildRef>, subtree: SubtreeId) -> Self {
        children.sort_by_key(|ch| ch.h);
        let h = container_hash(&a, c, &children, &subtree);
        Self { h, a, c, children, subtree }
    }

    pub fn depth(&self) -> u16 {
        self.subtree.depth()
    }

    pub fn as_child(&self) -> ChildRef {
        ChildRef { h: self.h, c: self.c }
    }

    pub fn recompute_hash(&self) -> Digest256 {
        container_hash(&self.a, self.c, &self.children, &self.subtree)
    }

    /// Hash recomputes, children are sorted, and the counter matches them.
    pub fn is_well_formed(&self) -> bool {
        let counts_ok = match self.children.as_slice() {
            [] => self.c == 1,
            [only] => self.c == only.c,
            [x, y] => x.h < y.h && x.c.checked_add(y.c) == Some(self.c),
            _ => false,
        };
        counts_ok && self.c >= 1 && self.recompute_hash() == self.h
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// True when `self` is the container of the parent subtree of `child`
    /// and lists it among its children.
    pub fn has_child(&self, child: &AggregateContainer) -> bool {
        child.subtree.parent().as_ref() == Some(&self.subtree) && self.children.contains(&child.as_child())
    }

    /// The child entry other than `own`, if any.
    pub fn other_child(&self, own: &Digest256) -> Option<ChildRef> {
        match self.children.as_slice() {
            [x, y] if x.h == *own => Some(*y),
            [x, y] if y.h == *own => Some(*x),
            _ => None,
        }
    }
}

impl Canonical for AggregateContainer {
    fn encode(&self, enc: &mut Encoder) {
        enc.digest(&self.h).digest(&self.a).u64(self.c);
        enc.u32(self.children.len() as u32);
        for ch in &self.children {
            enc.digest(&ch.h).u64(ch.c);
        }
        enc.nested(&self.subtree);
    }
}

/// Container of the single-leaf subtree `S̄(x, B)`.
pub fn make_leaf_container(a: Digest256, x: &Kid) -> AggregateContainer {
    AggregateContainer::assemble(a, 1, Vec::new(), SubtreeId::of(x, x.bits()))
}

/// Order-independent parent aggregate: the hash of the smaller value followed
/// by the larger one.
pub fn combine_aggregates(a1: &Digest256, a2: &Digest256) -> Digest256 {
    let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
    let mut buf = [0u8; 64];
    buf[..32].copy_from_slice(&lo.0);
    buf[32..].copy_from_slice(&hi.0);
    hash(&buf)
}

pub fn combine_containers(
    left: &AggregateContainer,
    right: &AggregateContainer,
) -> Result<AggregateContainer, AggregationError> {
    if !left.subtree.is_sibling_of(&right.subtree) {
        return Err(AggregationError::NotSiblings(left.subtree, right.subtree));
    }
    let parent = left.subtree.parent().expect("siblings have a parent");
    let c = left.c.checked_add(right.c).ok_or(AggregationError::CounterOverflow)?;
    Ok(AggregateContainer::assemble(
        combine_aggregates(&left.a, &right.a),
        c,
        vec![left.as_child(), right.as_child()],
        parent,
    ))
}

/// Parent container when the sibling subtree is empty.
pub fn lift_container(child: &AggregateContainer) -> Result<AggregateContainer, AggregationError> {
    let parent = child.subtree.parent().ok_or(AggregationError::LiftAtRoot)?;
    Ok(AggregateContainer::assemble(child.a, child.c, vec![child.as_child()], parent))
}
