//! Independent reference computations for the test suites. Hashing goes
//! through tiny-keccak and every byte layout is spelled out here.
#![allow(dead_code)]

use tiny_keccak::{Hasher, Sha3};

pub fn sha3(data: &[u8]) -> [u8; 32] {
    let mut h = Sha3::v256();
    h.update(data);
    let mut out = [0u8; 32];
    h.finalize(&mut out);
    out
}

/// Length-prefixed field: u32 big-endian length, then the bytes.
fn field(buf: &mut Vec<u8>, bytes: &[u8]) {
    buf.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    buf.extend_from_slice(bytes);
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Node {
    pub h: [u8; 32],
    pub a: [u8; 32],
    pub c: u64,
}

fn container_hash(prefix: &[bool], a: &[u8; 32], c: u64, children: &[Node]) -> [u8; 32] {
    let mut kids: Vec<&Node> = children.iter().collect();
    kids.sort_by_key(|n| n.h);
    let mut packed = Vec::new();
    for k in kids {
        packed.extend_from_slice(&k.h);
        packed.extend_from_slice(&k.c.to_be_bytes());
    }
    let mut subtree = Vec::new();
    field(&mut subtree, &(prefix.len() as u16).to_be_bytes());
    field(&mut subtree, &pack_bits(prefix));
    let mut buf = Vec::new();
    field(&mut buf, b"container");
    field(&mut buf, a);
    field(&mut buf, &c.to_be_bytes());
    field(&mut buf, &packed);
    field(&mut buf, &subtree);
    sha3(&buf)
}

fn combine(a1: &[u8; 32], a2: &[u8; 32]) -> [u8; 32] {
    let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
    let mut buf = lo.to_vec();
    buf.extend_from_slice(hi);
    sha3(&buf)
}

/// Fold leaves `(kid bits, initial aggregate)` over the full prefix tree of
/// depth `bits`: two populated children combine, one populated child lifts.
pub fn fold_tree(leaves: &[(Vec<bool>, [u8; 32])], bits: usize) -> Option<Node> {
    fn go(leaves: &[&(Vec<bool>, [u8; 32])], prefix: &mut Vec<bool>, bits: usize) -> Option<Node> {
        if leaves.is_empty() {
            return None;
        }
        if prefix.len() == bits {
            assert_eq!(leaves.len(), 1, "Kids are distinct");
            let a = leaves[0].1;
            return Some(Node { h: container_hash(prefix, &a, 1, &[]), a, c: 1 });
        }
        let d = prefix.len();
        let mut sides = [None, None];
        for (i, bit) in [false, true].into_iter().enumerate() {
            let part: Vec<_> = leaves.iter().copied().filter(|l| l.0[d] == bit).collect();
            prefix.push(bit);
            sides[i] = go(&part, prefix, bits);
            prefix.pop();
        }
        let node = match sides {
            [Some(x), Some(y)] => {
                let a = combine(&x.a, &y.a);
                let c = x.c + y.c;
                Node { h: container_hash(prefix, &a, c, &[x, y]), a, c }
            }
            [Some(x), None] | [None, Some(x)] => Node { h: container_hash(prefix, &x.a, x.c, &[x]), a: x.a, c: x.c },
            [None, None] => unreachable!("non-empty leaves populate a side"),
        };
        Some(node)
    }
    let refs: Vec<&(Vec<bool>, [u8; 32])> = leaves.iter().collect();
    go(&refs, &mut Vec::new(), bits)
}

pub fn bits_of(bytes: &[u8; 32], len: usize) -> Vec<bool> {
    (0..len).map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0).collect()
}

/// Indices of `players` (Kid bits, sequence number) in winning order: XOR
/// distance to the first `B` bits of `n_w`, ties by `n_w xor s`.
pub fn cl_order(n_w: &[u8; 32], players: &[(Vec<bool>, u64)]) -> Vec<usize> {
    let key = |(kid, s): &(Vec<bool>, u64)| {
        let target = bits_of(n_w, kid.len());
        let distance: Vec<bool> = kid.iter().zip(&target).map(|(x, y)| x ^ y).collect();
        let mut tie = *n_w;
        for (i, b) in s.to_be_bytes().iter().enumerate() {
            tie[24 + i] ^= b;
        }
        (distance, tie)
    };
    let mut idx: Vec<usize> = (0..players.len()).collect();
    idx.sort_by_key(|&i| key(&players[i]));
    idx
}
