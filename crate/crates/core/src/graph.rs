//! The in-memory experiment tree: node registry keyed by hash, parent
//! links, provenance paths, structural invariant checks, and a tag-based
//! node-set query algebra.
//!
//! Graphs are built single-writer through [`ExperimentGraph::add_node`]
//! (parents before children) and are plain immutable data afterwards.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;

use crate::hash::StateHash;
use crate::state::{RecipeDescriptor, StateDescriptor, StateViolation};

/// The experiment tree `G = (V, E, W)`: states keyed by hash, one parent
/// link per non-root state, and recipes as edge values.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExperimentGraph {
    nodes: BTreeMap<StateHash, StateDescriptor>,
    children: BTreeMap<StateHash, Vec<StateHash>>,
    root: Option<StateHash>,
}

impl ExperimentGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of edges: non-root nodes whose parent is present.
    pub fn edge_count(&self) -> usize {
        self.nodes
            .values()
            .filter(|d| {
                d.parent_hash
                    .as_ref()
                    .is_some_and(|p| self.nodes.contains_key(p))
            })
            .count()
    }

    pub fn root(&self) -> Option<&StateHash> {
        self.root.as_ref()
    }

    pub fn node(&self, hash: &StateHash) -> Option<&StateDescriptor> {
        self.nodes.get(hash)
    }

    pub fn contains(&self, hash: &StateHash) -> bool {
        self.nodes.contains_key(hash)
    }

    /// All descriptors in ascending hash order.
    pub fn nodes(&self) -> impl Iterator<Item = &StateDescriptor> {
        self.nodes.values()
    }

    /// Children of `hash` in insertion (definition) order.
    pub fn children(&self, hash: &StateHash) -> &[StateHash] {
        self.children.get(hash).map_or(&[], Vec::as_slice)
    }

    /// Inserts a validated node. The root must come first; every other
    /// node's parent must already be present. Re-adding an identical
    /// descriptor is a no-op, so cache-restored nodes can re-enter the
    /// graph naturally.
    pub fn add_node(&mut self, descriptor: StateDescriptor) -> Result<(), GraphError> {
        let violations = descriptor.validate();
        if !violations.is_empty() {
            return Err(GraphError::InvalidDescriptor(violations));
        }
        if let Some(existing) = self.nodes.get(&descriptor.hash) {
            if *existing == descriptor {
                return Ok(());
            }
            return Err(GraphError::DuplicateConflict(descriptor.hash));
        }
        match descriptor.parent_hash {
            None => {
                if let Some(existing) = self.root {
                    return Err(GraphError::MultiRoot { existing });
                }
                self.root = Some(descriptor.hash);
            }
            Some(parent) => {
                if !self.nodes.contains_key(&parent) {
                    return Err(GraphError::DanglingEdge {
                        node: descriptor.hash,
                        parent,
                    });
                }
                self.children.entry(parent).or_default().push(descriptor.hash);
            }
        }
        self.nodes.insert(descriptor.hash, descriptor);
        Ok(())
    }

    /// Test backdoor: inserts without any validation or linking checks.
    /// Exists so integrity checking can be exercised against graphs that
    /// `add_node` would refuse to build.
    #[doc(hidden)]
    pub fn insert_unchecked(&mut self, descriptor: StateDescriptor) {
        if descriptor.parent_hash.is_none() && self.root.is_none() {
            self.root = Some(descriptor.hash);
        }
        if let Some(parent) = descriptor.parent_hash {
            self.children.entry(parent).or_default().push(descriptor.hash);
        }
        self.nodes.insert(descriptor.hash, descriptor);
    }

    /// The provenance path `[node, parent, ..., root]`, each entry paired
    /// with the recipe that produced it (absent for the root). Uniqueness
    /// follows from single-parent links.
    pub fn path_to_root(
        &self,
        node: &StateHash,
    ) -> Result<Vec<(StateHash, Option<RecipeDescriptor>)>, GraphError> {
        let mut current = self
            .nodes
            .get(node)
            .ok_or(GraphError::UnknownNode(*node))?;
        let mut path = Vec::new();
        loop {
            path.push((current.hash, current.recipe.clone()));
            match current.parent_hash {
                None => return Ok(path),
                Some(parent) => {
                    current = self.nodes.get(&parent).ok_or(GraphError::DanglingEdge {
                        node: current.hash,
                        parent,
                    })?;
                }
            }
            if path.len() > self.nodes.len() {
                return Err(GraphError::CycleDetected(*node));
            }
        }
    }

    /// All nodes whose tag set contains `tag` (exact, case-sensitive
    /// match). Unknown tags yield an empty set.
    pub fn filter(&self, tag: &str) -> NodeSet {
        NodeSet {
            binding: self.root,
            members: self
                .nodes
                .values()
                .filter(|d| d.tags.contains(tag))
                .map(|d| d.hash)
                .collect(),
        }
    }

    /// The full node set, for seeding query-algebra expressions.
    pub fn node_set(&self) -> NodeSet {
        NodeSet {
            binding: self.root,
            members: self.nodes.keys().copied().collect(),
        }
    }

    /// Verifies the structural tree invariants: a single root, resolvable
    /// parents, acyclicity, edge count = node count - 1, and per-node
    /// descriptor validity. Violations are data, not errors.
    pub fn check_invariants(&self) -> Vec<GraphViolation> {
        let mut violations = Vec::new();

        let roots: Vec<StateHash> = self
            .nodes
            .values()
            .filter(|d| d.parent_hash.is_none())
            .map(|d| d.hash)
            .collect();
        match roots.as_slice() {
            [] => violations.push(GraphViolation::NoRoot),
            [only] => {
                if self.root != Some(*only) {
                    violations.push(GraphViolation::RootMismatch {
                        registered: self.root,
                        found: *only,
                    });
                }
            }
            _ => violations.push(GraphViolation::MultiRoot(roots.clone())),
        }

        for descriptor in self.nodes.values() {
            let state_violations = descriptor.validate();
            if !state_violations.is_empty() {
                violations.push(GraphViolation::InvalidState {
                    node: descriptor.hash,
                    violations: state_violations,
                });
            }
            if let Some(parent) = descriptor.parent_hash {
                if !self.nodes.contains_key(&parent) {
                    violations.push(GraphViolation::DanglingEdge {
                        node: descriptor.hash,
                        parent,
                    });
                }
            }
            // Walk the parent chain; more hops than nodes means a cycle.
            let mut hops = 0usize;
            let mut cursor = descriptor;
            while let Some(parent) = cursor.parent_hash {
                match self.nodes.get(&parent) {
                    Some(next) => cursor = next,
                    None => break,
                }
                hops += 1;
                if hops > self.nodes.len() {
                    violations.push(GraphViolation::Cycle {
                        node: descriptor.hash,
                    });
                    break;
                }
            }
        }

        let edges = self.edge_count();
        if !self.nodes.is_empty() && edges != self.nodes.len() - 1 {
            violations.push(GraphViolation::EdgeCountMismatch {
                nodes: self.nodes.len(),
                edges,
            });
        }
        violations
    }
}

/// An unordered set of states bound to one graph. Iteration and indexing
/// follow ascending hash order, so indexed access is deterministic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSet {
    binding: Option<StateHash>,
    members: BTreeSet<StateHash>,
}

impl NodeSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, hash: &StateHash) -> bool {
        self.members.contains(hash)
    }

    /// The `index`-th member in ascending hash order.
    pub fn get(&self, index: usize) -> Option<&StateHash> {
        self.members.iter().nth(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &StateHash> {
        self.members.iter()
    }

    pub fn intersect(&self, other: &NodeSet) -> Result<NodeSet, GraphError> {
        self.combine(other, |a, b| a.intersection(b).copied().collect())
    }

    pub fn union(&self, other: &NodeSet) -> Result<NodeSet, GraphError> {
        self.combine(other, |a, b| a.union(b).copied().collect())
    }

    pub fn difference(&self, other: &NodeSet) -> Result<NodeSet, GraphError> {
        self.combine(other, |a, b| a.difference(b).copied().collect())
    }

    fn combine(
        &self,
        other: &NodeSet,
        op: impl FnOnce(&BTreeSet<StateHash>, &BTreeSet<StateHash>) -> BTreeSet<StateHash>,
    ) -> Result<NodeSet, GraphError> {
        if self.binding != other.binding {
            return Err(GraphError::CrossGraph);
        }
        Ok(NodeSet {
            binding: self.binding,
            members: op(&self.members, &other.members),
        })
    }
}

impl<'a> IntoIterator for &'a NodeSet {
    type Item = &'a StateHash;
    type IntoIter = alloc::collections::btree_set::Iter<'a, StateHash>;

    fn into_iter(self) -> Self::IntoIter {
        self.members.iter()
    }
}

/// Rejected graph operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphError {
    InvalidDescriptor(Vec<StateViolation>),
    DanglingEdge { node: StateHash, parent: StateHash },
    MultiRoot { existing: StateHash },
    DuplicateConflict(StateHash),
    UnknownNode(StateHash),
    CycleDetected(StateHash),
    /// Node sets bound to different graphs cannot be combined.
    CrossGraph,
    /// The graph failed its invariant check; carries the violations.
    InvalidGraph(Vec<GraphViolation>),
}

impl fmt::Display for GraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphError::InvalidDescriptor(violations) => {
                write!(f, "descriptor invalid: ")?;
                write_joined(f, violations)
            }
            GraphError::DanglingEdge { node, parent } => write!(
                f,
                "dangling-edge: node {node} references missing parent {parent}"
            ),
            GraphError::MultiRoot { existing } => {
                write!(f, "graph already has root {existing}")
            }
            GraphError::DuplicateConflict(hash) => write!(
                f,
                "conflicting descriptor for existing node {hash}"
            ),
            GraphError::UnknownNode(hash) => write!(f, "unknown node {hash}"),
            GraphError::CycleDetected(hash) => write!(f, "cycle through node {hash}"),
            GraphError::CrossGraph => {
                write!(f, "node sets are bound to different graphs")
            }
            GraphError::InvalidGraph(violations) => {
                write!(f, "graph invariants violated: ")?;
                write_joined(f, violations)
            }
        }
    }
}

impl core::error::Error for GraphError {}

fn write_joined<T: fmt::Display>(f: &mut fmt::Formatter<'_>, items: &[T]) -> fmt::Result {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            write!(f, "; ")?;
        }
        write!(f, "{item}")?;
    }
    Ok(())
}

/// A broken structural invariant of the tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphViolation {
    NoRoot,
    MultiRoot(Vec<StateHash>),
    DanglingEdge {
        node: StateHash,
        parent: StateHash,
    },
    Cycle {
        node: StateHash,
    },
    EdgeCountMismatch {
        nodes: usize,
        edges: usize,
    },
    RootMismatch {
        registered: Option<StateHash>,
        found: StateHash,
    },
    InvalidState {
        node: StateHash,
        violations: Vec<StateViolation>,
    },
}

impl fmt::Display for GraphViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphViolation::NoRoot => write!(f, "no-root: graph has no parentless node"),
            GraphViolation::MultiRoot(roots) => {
                write!(f, "multi-root: {} parentless nodes", roots.len())
            }
            GraphViolation::DanglingEdge { node, parent } => write!(
                f,
                "dangling-edge: node {node} references missing parent {parent}"
            ),
            GraphViolation::Cycle { node } => write!(f, "cycle: parent chain of {node} loops"),
            GraphViolation::EdgeCountMismatch { nodes, edges } => write!(
                f,
                "edge-count-mismatch: {nodes} nodes but {edges} edges"
            ),
            GraphViolation::RootMismatch { registered, found } => match registered {
                Some(registered) => write!(
                    f,
                    "root-mismatch: registered root {registered}, parentless node {found}"
                ),
                None => write!(f, "root-mismatch: no registered root, parentless node {found}"),
            },
            GraphViolation::InvalidState { node, violations } => {
                write!(f, "invalid-state {node}: ")?;
                write_joined(f, violations)
            }
        }
    }
}

/// Matching on violation families without caring about payloads.
impl GraphViolation {
    pub fn kind(&self) -> &'static str {
        match self {
            GraphViolation::NoRoot => "no-root",
            GraphViolation::MultiRoot(_) => "multi-root",
            GraphViolation::DanglingEdge { .. } => "dangling-edge",
            GraphViolation::Cycle { .. } => "cycle",
            GraphViolation::EdgeCountMismatch { .. } => "edge-count-mismatch",
            GraphViolation::RootMismatch { .. } => "root-mismatch",
            GraphViolation::InvalidState { .. } => "invalid-state",
        }
    }
}
