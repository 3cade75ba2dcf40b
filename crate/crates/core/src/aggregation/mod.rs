//! Aggregate containers, their confirmation, and the per-player epoch logic.

mod confirm;
mod container;
mod node;
mod signature;

pub use confirm::{
    confirm, majority_select, required_signers, verify_confirmed, ConfirmContext, ConfirmedContainer, VerifyRules,
};
pub use container::{
    combine_aggregates, combine_containers, lift_container, make_leaf_container, AggregateContainer, ChildRef,
};
pub use node::*;
pub use signature::{
    detect_equivocation, sign_container, signature_message, ContainerSignature, MisbehaviorProof, SignatureLedger,
};

use crate::overlay::SubtreeId;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum AggregationError {
    #[error("{0:?} and {1:?} are not sibling subtrees")]
    NotSiblings(SubtreeId, SubtreeId),
    #[error("the root container has no parent")]
    LiftAtRoot,
    #[error("counter overflow")]
    CounterOverflow,
    #[error("signer is not a member of the container's subtree")]
    SignerOutsideSubtree,
    #[error("insufficient evidence: {0}")]
    InsufficientEvidence(&'static str),
    #[error("invalid confirmed container: {0}")]
    InvalidConfirmation(&'static str),
}
