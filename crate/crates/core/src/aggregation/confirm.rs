//! Confirmation of candidate containers and the majority vote.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::container::AggregateContainer;
use super::signature::ContainerSignature;
use super::AggregationError;
use crate::crypto::{Canonical, Digest256, Encoder, PublicKey, VerifyCache};
use crate::overlay::{Kid, SubtreeId};

/// A container together with the signatures that confirm it.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct ConfirmedContainer {
    pub container: AggregateContainer,
    /// Signatures on `container.h`, one per signer, sorted by signer key.
    pub sigs: Vec<ContainerSignature>,
    /// Signatures on the child hashes, at most one per child.
    pub child_evidence: Vec<ContainerSignature>,
}

impl Canonical for ConfirmedContainer {
    fn encode(&self, enc: &mut Encoder) {
        enc.nested(&self.container).list(&self.sigs).list(&self.child_evidence);
    }
}

/// Distinct signers needed on a container with counter `c` at depth `d`.
pub fn required_signers(l: u64, c: u64, d: u16, root_extra: u64) -> usize {
    let l = if d == 0 { l + root_extra } else { l };
    l.min(c) as usize
}

/// What the confirming player knows about the candidate's children.
#[derive(Clone, Copy, Debug)]
pub struct ConfirmContext<'a> {
    pub me: &'a PublicKey,
    pub my_kid: &'a Kid,
    /// Hash of the player's own child container; `None` for a leaf.
    pub own_child: Option<Digest256>,
    /// Whether the sibling child subtree was found non-empty.
    pub sibling_nonempty: bool,
    pub required: usize,
    pub bits: u16,
}

/// Assemble a confirmed container from already-verified signatures.
///
/// Requires the confirming player's own signatures on `h` and on its own
/// child hash, a signature on `h` from inside each non-empty child subtree, a
/// signature on the sibling child hash from inside the sibling subtree, and
/// at least `required` distinct signers on `h`.
pub fn confirm(
    candidate: &AggregateContainer,
    gathered: &[ContainerSignature],
    ctx: ConfirmContext<'_>,
) -> Result<ConfirmedContainer, AggregationError> {
    let insufficient = |why: &'static str| AggregationError::InsufficientEvidence(why);
    let on_h: BTreeMap<PublicKey, ContainerSignature> =
        gathered.iter().filter(|s| s.covers(candidate)).map(|s| (s.signer, *s)).collect();
    if !on_h.contains_key(ctx.me) {
        return Err(insufficient("own signature on h missing"));
    }
    let mut evidence = Vec::new();
    if let Some(h1) = ctx.own_child {
        let d_child = candidate.depth() + 1;
        let own_sig = gathered
            .iter()
            .find(|s| s.signer == *ctx.me && s.h == h1 && s.d == d_child)
            .ok_or(insufficient("own signature on own child missing"))?;
        evidence.push(*own_sig);
        if ctx.sibling_nonempty {
            let h2 = candidate.other_child(&h1).ok_or(insufficient("candidate lacks a sibling child"))?;
            let sibling = SubtreeId::of(ctx.my_kid, d_child).sibling().expect("child depth >= 1");
            let inside = |s: &ContainerSignature| s.signer_kid(ctx.bits).is_some_and(|k| sibling.contains(&k));
            if !on_h.values().any(inside) {
                return Err(insufficient("no signature on h from the sibling subtree"));
            }
            let provider = gathered
                .iter()
                .find(|s| s.h == h2.h && s.d == d_child && s.c == h2.c && inside(s))
                .ok_or(insufficient("no signature on the sibling child"))?;
            evidence.push(*provider);
        }
    }
    if on_h.len() < ctx.required {
        return Err(insufficient("too few distinct signers on h"));
    }
    evidence.sort_by_key(|s| s.h);
    Ok(ConfirmedContainer {
        container: candidate.clone(),
        sigs: on_h.into_values().collect(),
        child_evidence: evidence,
    })
}

/// Parameters a verifier applies to a confirmed container received from
/// someone else.
#[derive(Clone, Copy, Debug)]
pub struct VerifyRules<'a> {
    pub authority: &'a PublicKey,
    pub bits: u16,
    pub l: u64,
    pub root_extra: u64,
}

/// Full re-verification of a confirmed container. `admit` filters signers,
/// e.g. by a membership snapshot.
pub fn verify_confirmed(
    cc: &ConfirmedContainer,
    rules: VerifyRules<'_>,
    cache: &mut VerifyCache,
    admit: impl Fn(&ContainerSignature) -> bool,
) -> Result<(), AggregationError> {
    let fail = AggregationError::InvalidConfirmation;
    let c = &cc.container;
    if !c.is_well_formed() {
        return Err(fail("container hash or counters do not recompute"));
    }
    let mut signers = BTreeSet::new();
    for s in &cc.sigs {
        if !s.covers(c) || !s.verify(rules.authority, &c.subtree, rules.bits, cache) {
            return Err(fail("bad signature on h"));
        }
        if admit(s) {
            signers.insert(s.signer);
        }
    }
    if signers.len() < required_signers(rules.l, c.c, c.depth(), rules.root_extra) {
        return Err(fail("too few admitted signers on h"));
    }
    for child in &c.children {
        let ev = cc
            .child_evidence
            .iter()
            .find(|s| s.h == child.h && s.c == child.c)
            .ok_or(fail("missing child evidence"))?;
        let Some(kid) = ev.signer_kid(rules.bits) else {
            return Err(fail("bad evidence signer"));
        };
        let child_subtree = SubtreeId::of(&kid, c.depth() + 1);
        if !c.subtree.contains(&kid) || !ev.verify(rules.authority, &child_subtree, rules.bits, cache) {
            return Err(fail("bad child evidence"));
        }
        if c.children.len() == 2
            && !cc.sigs.iter().any(|s| s.signer_kid(rules.bits).is_some_and(|k| child_subtree.contains(&k)))
        {
            return Err(fail("a child subtree has no signer on h"));
        }
    }
    Ok(())
}

/// The hash with the most distinct signers; ties go to the smaller hash.
pub fn majority_select(counts: &BTreeMap<Digest256, usize>) -> Option<Digest256> {
    counts.iter().max_by(|(h1, n1), (h2, n2)| n1.cmp(n2).then(h2.cmp(h1))).map(|(h, _)| *h)
}
