//! Lazy experiment definition.
//!
//! An [`Experiment`] collects a tree of [`StatePromise`]s without running
//! anything: spawning the root records an initializer, deriving records a
//! recipe, and tags and function hooks attach to promises until the
//! experiment is frozen by [`Experiment::build_plan`]. Promise hashes are
//! computed eagerly from (parent hash, recipe name, recipe properties),
//! which is what lets the executor consult the cache before running.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use stategraph_core::{
    hash_child, hash_root, EncodeError, PropertyMap, PropertyValue, RecipeDescriptor,
    RecipeNameError, StateDescriptor, StateHash,
};
use thiserror::Error;

use crate::executor::{ExecutionPlan, PlanAction, PlanNode};

/// Version stamp recorded in experiment metadata.
pub const SCHEMA_VERSION: u64 = 1;

/// Boxed error type recipes, initializers, and hooks may fail with.
pub type DynError = Box<dyn std::error::Error + Send + Sync>;

/// A state loaded in full: descriptor plus payload blobs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaterializedState {
    pub descriptor: StateDescriptor,
    pub payloads: BTreeMap<String, Vec<u8>>,
}

impl MaterializedState {
    pub fn hash(&self) -> &StateHash {
        &self.descriptor.hash
    }

    pub fn property(&self, key: &str) -> Option<&PropertyValue> {
        self.descriptor.properties.get(key)
    }

    pub fn payload(&self, name: &str) -> Option<&[u8]> {
        self.payloads.get(name).map(Vec::as_slice)
    }
}

/// What a recipe (or initializer) contributes to a child state: property
/// overlays and payload overlays. Anything not overlaid is inherited from
/// the parent unchanged.
#[derive(Debug, Clone, Default)]
pub struct StateDelta {
    pub properties: PropertyMap,
    pub payloads: BTreeMap<String, Vec<u8>>,
}

/// A state-mutating transformation: the edge value of the tree.
///
/// `run` must be a deterministic function of the parent state's contents
/// and this recipe's declared properties, and must not read external
/// mutable inputs. That determinism is the caching soundness contract:
/// a state is never recomputed once its hash is present in the store.
pub trait Recipe: Send + Sync {
    fn name(&self) -> &str;
    fn properties(&self) -> PropertyMap;
    fn run(&self, parent: &MaterializedState) -> Result<StateDelta, DynError>;
}

/// Produces the root state's payloads from its properties. `init` must be
/// deterministic given the properties.
pub trait StateInitializer: Send + Sync {
    fn properties(&self) -> PropertyMap;
    fn init(&self, properties: &PropertyMap) -> Result<BTreeMap<String, Vec<u8>>, DynError>;
}

/// A non-mutating action run against a materialized state (metrics,
/// logging). Hooks add no nodes to the graph and run on every execution
/// of the plan, cache hit or not.
pub trait FunctionHook: Send + Sync {
    fn name(&self) -> &str;
    fn call(&self, state: &MaterializedState) -> Result<(), DynError>;
}

/// Rejected definition-phase operation.
#[derive(Debug, Error)]
pub enum EngineError {
    #[error("experiment already has a root")]
    MultiRoot,
    #[error("experiment has no root")]
    NoRoot,
    #[error("promise does not belong to this experiment")]
    ForeignPromise,
    #[error("experiment is frozen; definition is closed")]
    Frozen,
    #[error("invalid recipe name: {0}")]
    RecipeName(#[from] RecipeNameError),
    #[error("properties are not encodable: {0}")]
    Encode(#[from] EncodeError),
}

/// Lazy handle to a not-yet-materialized state. Carries the precomputed
/// content hash; tags and hooks attached through the experiment do not
/// change it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatePromise {
    experiment: u64,
    index: usize,
    hash: StateHash,
}

impl StatePromise {
    pub fn hash(&self) -> &StateHash {
        &self.hash
    }
}

struct PromiseNode {
    hash: StateHash,
    parent: Option<usize>,
    action: PlanAction,
    tags: BTreeSet<String>,
    hooks: Vec<Arc<dyn FunctionHook>>,
}

static EXPERIMENT_NONCE: AtomicU64 = AtomicU64::new(1);

/// A lazily defined experiment bound to a store directory.
///
/// Definition is single-context: promises are appended in order, every
/// non-root promise's parent precedes it, and nothing executes until a
/// frozen plan is handed to the executor.
pub struct Experiment {
    directory: PathBuf,
    nonce: u64,
    nodes: Vec<PromiseNode>,
    frozen: bool,
    pub schema_version: u64,
}

impl Experiment {
    pub fn new(directory: impl Into<PathBuf>) -> Self {
        Self {
            directory: directory.into(),
            nonce: EXPERIMENT_NONCE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            frozen: false,
            schema_version: SCHEMA_VERSION,
        }
    }

    pub fn directory(&self) -> &Path {
        &self.directory
    }

    /// Number of promises defined so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn root_promise(&self) -> Option<StatePromise> {
        self.nodes.first().map(|node| StatePromise {
            experiment: self.nonce,
            index: 0,
            hash: node.hash,
        })
    }

    /// All promise hashes in definition order.
    pub fn promise_hashes(&self) -> Vec<StateHash> {
        self.nodes.iter().map(|n| n.hash).collect()
    }

    pub fn promise_tags(&self, promise: &StatePromise) -> Result<&BTreeSet<String>, EngineError> {
        Ok(&self.resolve(promise)?.tags)
    }

    /// Creates the root promise. Performs no execution; the initializer
    /// runs when the plan does.
    pub fn spawn_new_tree(
        &mut self,
        initializer: impl StateInitializer + 'static,
    ) -> Result<StatePromise, EngineError> {
        if self.frozen {
            return Err(EngineError::Frozen);
        }
        if !self.nodes.is_empty() {
            return Err(EngineError::MultiRoot);
        }
        let properties = initializer.properties();
        let hash = hash_root(&properties)?;
        self.nodes.push(PromiseNode {
            hash,
            parent: None,
            action: PlanAction::Root {
                properties,
                initializer: Arc::new(initializer),
            },
            tags: BTreeSet::new(),
            hooks: Vec::new(),
        });
        Ok(StatePromise {
            experiment: self.nonce,
            index: 0,
            hash,
        })
    }

    /// Derives a child promise by applying `recipe` to `parent`. The
    /// child's hash is computed now, before anything runs; deriving the
    /// same recipe from the same parent twice yields equal hashes and
    /// collapses to a single node at plan time.
    pub fn derive(
        &mut self,
        parent: &StatePromise,
        recipe: impl Recipe + 'static,
    ) -> Result<StatePromise, EngineError> {
        if self.frozen {
            return Err(EngineError::Frozen);
        }
        let parent_index = self.resolve_index(parent)?;
        let descriptor = RecipeDescriptor::new(recipe.name(), recipe.properties())?;
        let hash = hash_child(&self.nodes[parent_index].hash, &descriptor)?;
        let index = self.nodes.len();
        self.nodes.push(PromiseNode {
            hash,
            parent: Some(parent_index),
            action: PlanAction::Derived {
                descriptor,
                recipe: Arc::new(recipe),
            },
            tags: BTreeSet::new(),
            hooks: Vec::new(),
        });
        Ok(StatePromise {
            experiment: self.nonce,
            index,
            hash,
        })
    }

    /// Records a tag on a promise. Tags are persisted into the state
    /// descriptor at materialization and never enter the hash.
    pub fn add_tag(&mut self, promise: &StatePromise, tag: &str) -> Result<(), EngineError> {
        if self.frozen {
            return Err(EngineError::Frozen);
        }
        let index = self.resolve_index(promise)?;
        self.nodes[index].tags.insert(tag.to_owned());
        Ok(())
    }

    /// Appends a function hook to a promise. Hooks never add graph nodes.
    pub fn attach_function(
        &mut self,
        promise: &StatePromise,
        hook: impl FunctionHook + 'static,
    ) -> Result<(), EngineError> {
        if self.frozen {
            return Err(EngineError::Frozen);
        }
        let index = self.resolve_index(promise)?;
        self.nodes[index].hooks.push(Arc::new(hook));
        Ok(())
    }

    /// Freezes the experiment and returns the topologically ordered plan
    /// (parents before children, ties broken by definition order).
    /// Promises with equal hashes collapse to one plan node, merging
    /// their tags and concatenating their hooks.
    pub fn build_plan(&mut self) -> Result<ExecutionPlan, EngineError> {
        if self.nodes.is_empty() {
            return Err(EngineError::NoRoot);
        }
        self.frozen = true;
        let mut plan_index: BTreeMap<StateHash, usize> = BTreeMap::new();
        let mut plan_nodes: Vec<PlanNode> = Vec::new();
        for node in &self.nodes {
            // The parent promise precedes this one, so its plan slot exists.
            let parent = node.parent.map(|pi| plan_index[&self.nodes[pi].hash]);
            match plan_index.get(&node.hash) {
                Some(&slot) => {
                    let existing = &mut plan_nodes[slot];
                    existing.tags.extend(node.tags.iter().cloned());
                    existing.hooks.extend(node.hooks.iter().cloned());
                }
                None => {
                    plan_index.insert(node.hash, plan_nodes.len());
                    plan_nodes.push(PlanNode {
                        hash: node.hash,
                        parent,
                        action: node.action.clone(),
                        tags: node.tags.clone(),
                        hooks: node.hooks.clone(),
                    });
                }
            }
        }
        Ok(ExecutionPlan::new(self.directory.clone(), plan_nodes))
    }

    fn resolve_index(&self, promise: &StatePromise) -> Result<usize, EngineError> {
        if promise.experiment != self.nonce || promise.index >= self.nodes.len() {
            return Err(EngineError::ForeignPromise);
        }
        if self.nodes[promise.index].hash != promise.hash {
            return Err(EngineError::ForeignPromise);
        }
        Ok(promise.index)
    }

    fn resolve(&self, promise: &StatePromise) -> Result<&PromiseNode, EngineError> {
        self.resolve_index(promise).map(|i| &self.nodes[i])
    }
}

/// Builds the descriptor a promise will materialize into, given the
/// final property map and payload names. Used by the executor.
pub(crate) fn descriptor_for(
    action: &PlanAction,
    hash: StateHash,
    parent_hash: Option<StateHash>,
    properties: PropertyMap,
    payload_names: impl IntoIterator<Item = String>,
    tags: BTreeSet<String>,
) -> Result<StateDescriptor, EncodeError> {
    let descriptor = match action {
        PlanAction::Root { .. } => StateDescriptor::root(properties, payload_names, tags)?,
        PlanAction::Derived { descriptor, .. } => StateDescriptor::child(
            parent_hash.expect("derived plan node has a parent"),
            descriptor.clone(),
            properties,
            payload_names,
            tags,
        )?,
    };
    debug_assert_eq!(descriptor.hash, hash);
    Ok(descriptor)
}
