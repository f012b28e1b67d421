//! Reproducible experiment orchestration over content-addressed state
//! trees.
//!
//! The workflow: define an [`engine::Experiment`] lazily (spawn a root,
//! derive children with recipes, attach tags and function hooks), freeze
//! it into an [`executor::ExecutionPlan`], and run it against a store
//! directory. Node hashes are known before execution, so already
//! persisted states are restored instead of recomputed; reruns and tree
//! extensions only pay for what is new. The [`store`] keeps every state
//! on disk with crash-consistent completion markers, and `stategraph ls`
//! / `filter` / `show` / `dot` / `verify` inspect a store after the fact.
//!
//! The pure data model (values, hashing, descriptors, the tree and its
//! query algebra) lives in the `stategraph-core` crate, re-exported here.

pub mod cli;
pub mod demo;
pub mod engine;
pub mod executor;
pub mod json;
pub mod store;

pub use engine::{
    DynError, EngineError, Experiment, FunctionHook, MaterializedState, Recipe, StateDelta,
    StateInitializer, StatePromise,
};
pub use executor::{run, ExecMode, ExecutionPlan, RunReport};
pub use stategraph_core::{
    canonical_encode, hash_child, hash_root, EncodeError, ExperimentGraph, GraphError,
    GraphViolation, NodeSet, PropertyMap, PropertyValue, RecipeDescriptor, StateDescriptor,
    StateHash, StateViolation,
};
pub use store::{SlimGraph, Store, StoreError};
