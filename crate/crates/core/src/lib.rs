//! Content-addressed experiment state trees.
//!
//! An experiment is modeled as a tree of immutable states. Each state is
//! identified by a 32-byte content hash: the root hash covers the root's
//! properties, and every child hash covers its parent's hash plus the
//! recipe (name and properties) that produced it. Because a child's hash
//! is computable before the child is ever materialized, the hash doubles
//! as a cache key for skipping recomputation.
//!
//! This crate is the pure core: the property-value algebra and its
//! canonical byte encoding, the hash recursion, state/recipe descriptors
//! with integrity checks, and the in-memory tree with provenance paths,
//! tag queries, and DOT export. It is `no_std` (with `alloc`) and does no
//! I/O; persistence and execution live in the companion `stategraph`
//! crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

mod dot;
pub mod graph;
pub mod hash;
pub mod state;
pub mod value;

pub use graph::{ExperimentGraph, GraphError, GraphViolation, NodeSet};
pub use hash::{
    hash_child, hash_root, ParseHashError, StateHash, CHILD_DOMAIN_PREFIX, ROOT_DOMAIN_PREFIX,
};
pub use state::{RecipeDescriptor, RecipeNameError, StateDescriptor, StateViolation};
pub use value::{canonical_encode, EncodeError, PropertyMap, PropertyValue};
