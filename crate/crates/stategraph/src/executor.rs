//! Runs a frozen plan: cache lookup by hash, recipe execution against an
//! isolated copy of the parent state, atomic persistence, and function
//! hooks, in single-threaded or multi-threaded mode.
//!
//! The two modes produce byte-identical stores: node contents depend only
//! on (parent contents, recipe), parents are always reloaded fresh from
//! the store rather than shared in memory, and persistence is atomic per
//! node. Among ready nodes the scheduler always prefers the lowest plan
//! index, so single-threaded runs follow definition order exactly.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use stategraph_core::{PropertyMap, RecipeDescriptor, StateHash};
use thiserror::Error;

use crate::engine::{
    descriptor_for, FunctionHook, MaterializedState, Recipe, StateInitializer,
};
use crate::store::{StateStatus, Store, StoreError};

/// How a plan gets executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    /// Everything on the calling thread, in definition order.
    SingleThreaded,
    /// A pool of workers; nodes run as soon as their parent completes.
    MultiThreaded { workers: usize },
}

/// Execution failure that aborts the run (as opposed to recipe failures,
/// which are reported per node).
#[derive(Debug, Error)]
pub enum ExecError {
    #[error("worker count must be at least 1")]
    InvalidWorkerCount,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("plan hash {expected} does not match materialized descriptor hash {computed}")]
    HashDrift {
        expected: StateHash,
        computed: StateHash,
    },
}

pub(crate) enum PlanAction {
    Root {
        properties: PropertyMap,
        initializer: Arc<dyn StateInitializer>,
    },
    Derived {
        descriptor: RecipeDescriptor,
        recipe: Arc<dyn Recipe>,
    },
}

impl Clone for PlanAction {
    fn clone(&self) -> Self {
        match self {
            PlanAction::Root {
                properties,
                initializer,
            } => PlanAction::Root {
                properties: properties.clone(),
                initializer: Arc::clone(initializer),
            },
            PlanAction::Derived { descriptor, recipe } => PlanAction::Derived {
                descriptor: descriptor.clone(),
                recipe: Arc::clone(recipe),
            },
        }
    }
}

impl PlanAction {
    fn name(&self) -> &str {
        match self {
            PlanAction::Root { .. } => "ROOT",
            PlanAction::Derived { descriptor, .. } => descriptor.name(),
        }
    }
}

pub(crate) struct PlanNode {
    pub hash: StateHash,
    pub parent: Option<usize>,
    pub action: PlanAction,
    pub tags: BTreeSet<String>,
    pub hooks: Vec<Arc<dyn FunctionHook>>,
}

/// A frozen, topologically ordered execution plan. Immutable; safe to
/// share and to run repeatedly.
pub struct ExecutionPlan {
    directory: PathBuf,
    nodes: Vec<PlanNode>,
}

impl ExecutionPlan {
    pub(crate) fn new(directory: PathBuf, nodes: Vec<PlanNode>) -> Self {
        debug_assert!(!nodes.is_empty());
        debug_assert!(nodes[0].parent.is_none());
        Self { directory, nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn directory(&self) -> &Path {
        &self.directory
    }

    pub fn root_hash(&self) -> StateHash {
        self.nodes[0].hash
    }

    /// Node hashes in plan (topological) order.
    pub fn node_hashes(&self) -> Vec<StateHash> {
        self.nodes.iter().map(|n| n.hash).collect()
    }

    fn child_indices(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.nodes.len()];
        for (index, node) in self.nodes.iter().enumerate() {
            if let Some(parent) = node.parent {
                children[parent].push(index);
            }
        }
        children
    }
}

/// What happened to each plan node during one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// The recipe (or root initializer) returned an error; the node was
    /// not materialized and its subtree was blocked.
    Recipe,
    /// A function hook failed after the node materialized; descendants
    /// were unaffected.
    Function,
}

#[derive(Debug, Clone)]
pub struct NodeFailure {
    pub hash: StateHash,
    pub name: String,
    pub message: String,
    pub kind: FailureKind,
}

/// Outcome of one plan run.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    /// Nodes materialized by executing their recipe, in plan order.
    pub executed: Vec<StateHash>,
    /// Nodes restored from the store without recomputation, in plan order.
    pub cache_hits: Vec<StateHash>,
    pub failed: Vec<NodeFailure>,
    /// Nodes skipped because an ancestor failed, in plan order.
    pub blocked: Vec<StateHash>,
    /// Hook invocations per materialized node.
    pub function_invocations: BTreeMap<StateHash, usize>,
    pub wall_time: Duration,
}

impl RunReport {
    /// True when every node materialized and every hook succeeded.
    pub fn is_clean(&self) -> bool {
        self.failed.is_empty() && self.blocked.is_empty()
    }

    pub fn total_function_invocations(&self) -> usize {
        self.function_invocations.values().sum()
    }
}

#[derive(Debug)]
enum NodeOutcome {
    Executed {
        hook_count: usize,
        hook_failures: Vec<(String, String)>,
    },
    Cached {
        hook_count: usize,
        hook_failures: Vec<(String, String)>,
    },
    RecipeFailed {
        name: String,
        message: String,
    },
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Status {
    Waiting,
    Queued,
    Running,
    Done,
    Failed,
    Blocked,
}

struct Sched {
    status: Vec<Status>,
    ready: BinaryHeap<Reverse<usize>>,
    /// Nodes not yet terminal (done, failed, or blocked).
    pending: usize,
    outcomes: Vec<Option<NodeOutcome>>,
    fatal: Option<ExecError>,
}

struct RunCtx<'a> {
    plan: &'a ExecutionPlan,
    store: &'a Store,
    children: &'a [Vec<usize>],
    sched: &'a Mutex<Sched>,
    wakeup: &'a Condvar,
}

/// Runs the plan against its experiment directory. Every node is
/// materialized exactly once (by execution or cache restore), a node runs
/// only after its parent is materialized, and all hooks fire exactly once
/// per node per run. Recipe failures block only their own subtree; the
/// rest of the tree still completes, and the report says what happened.
pub fn run(plan: &ExecutionPlan, mode: ExecMode) -> Result<RunReport, ExecError> {
    let workers = match mode {
        ExecMode::SingleThreaded => 1,
        ExecMode::MultiThreaded { workers } => {
            if workers == 0 {
                return Err(ExecError::InvalidWorkerCount);
            }
            workers
        }
    };
    let started = Instant::now();
    let store = Store::init(&plan.directory, &plan.root_hash())?;
    let children = plan.child_indices();

    let mut sched = Sched {
        status: vec![Status::Waiting; plan.len()],
        ready: BinaryHeap::new(),
        pending: plan.len(),
        outcomes: (0..plan.len()).map(|_| None).collect(),
        fatal: None,
    };
    sched.status[0] = Status::Queued;
    sched.ready.push(Reverse(0));

    let sched = Mutex::new(sched);
    let wakeup = Condvar::new();
    let ctx = RunCtx {
        plan,
        store: &store,
        children: &children,
        sched: &sched,
        wakeup: &wakeup,
    };

    if workers == 1 {
        worker_loop(&ctx);
    } else {
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| worker_loop(&ctx));
            }
        });
    }

    let sched = sched.into_inner().expect("scheduler mutex not poisoned");
    if let Some(fatal) = sched.fatal {
        return Err(fatal);
    }
    Ok(assemble_report(plan, sched, started.elapsed()))
}

fn worker_loop(ctx: &RunCtx<'_>) {
    loop {
        let index = {
            let mut guard = ctx.sched.lock().expect("scheduler mutex not poisoned");
            loop {
                if guard.fatal.is_some() || guard.pending == 0 {
                    return;
                }
                if let Some(Reverse(index)) = guard.ready.pop() {
                    guard.status[index] = Status::Running;
                    break index;
                }
                guard = ctx
                    .wakeup
                    .wait(guard)
                    .expect("scheduler mutex not poisoned");
            }
        };

        let result = process_node(ctx.plan, ctx.store, index);

        let mut guard = ctx.sched.lock().expect("scheduler mutex not poisoned");
        match result {
            Ok(outcome) => {
                let recipe_failed = matches!(outcome, NodeOutcome::RecipeFailed { .. });
                guard.status[index] = if recipe_failed {
                    Status::Failed
                } else {
                    Status::Done
                };
                guard.outcomes[index] = Some(outcome);
                guard.pending -= 1;
                if recipe_failed {
                    // Nothing below an unmaterialized node can ever run.
                    let mut stack = ctx.children[index].clone();
                    while let Some(child) = stack.pop() {
                        guard.status[child] = Status::Blocked;
                        guard.pending -= 1;
                        stack.extend_from_slice(&ctx.children[child]);
                    }
                } else {
                    for &child in &ctx.children[index] {
                        guard.status[child] = Status::Queued;
                        guard.ready.push(Reverse(child));
                    }
                }
            }
            Err(err) => {
                guard.fatal.get_or_insert(err);
            }
        }
        drop(guard);
        ctx.wakeup.notify_all();
    }
}

fn process_node(
    plan: &ExecutionPlan,
    store: &Store,
    index: usize,
) -> Result<NodeOutcome, ExecError> {
    let node = &plan.nodes[index];
    match store.lookup(&node.hash)? {
        StateStatus::Complete(_) => {
            log_event(&node.hash, "CACHE", node.action.name());
            let (hook_count, hook_failures) = if node.hooks.is_empty() {
                (0, Vec::new())
            } else {
                let state = store.restore_state_full(&node.hash)?;
                invoke_hooks(node, &state)
            };
            Ok(NodeOutcome::Cached {
                hook_count,
                hook_failures,
            })
        }
        StateStatus::Corrupt(_) => {
            // Damaged cache entries are moved aside and recomputed.
            store.quarantine_state(&node.hash)?;
            execute_node(plan, store, index)
        }
        StateStatus::Incomplete | StateStatus::Absent => execute_node(plan, store, index),
    }
}

fn execute_node(
    plan: &ExecutionPlan,
    store: &Store,
    index: usize,
) -> Result<NodeOutcome, ExecError> {
    let node = &plan.nodes[index];
    let (properties, payloads, parent_hash) = match &node.action {
        PlanAction::Root {
            properties,
            initializer,
        } => match initializer.init(properties) {
            Ok(payloads) => (properties.clone(), payloads, None),
            Err(err) => return Ok(recipe_failure(node, "initialize", &err.to_string())),
        },
        PlanAction::Derived {
            descriptor: recipe_descriptor,
            recipe,
        } => {
            let parent_index = node.parent.expect("derived plan node has a parent");
            let parent_hash = plan.nodes[parent_index].hash;
            // Isolation: always a fresh deserialized copy, never a shared
            // in-memory object, so sibling branches cannot interfere.
            let parent_state = store.restore_state_full(&parent_hash)?;
            let delta = match recipe.run(&parent_state) {
                Ok(delta) => delta,
                Err(err) => {
                    return Ok(recipe_failure(
                        node,
                        recipe_descriptor.name(),
                        &err.to_string(),
                    ))
                }
            };
            let MaterializedState {
                descriptor: parent_descriptor,
                payloads: mut merged_payloads,
            } = parent_state;
            let mut merged_properties = parent_descriptor.properties;
            merged_properties.extend(delta.properties);
            merged_payloads.extend(delta.payloads);
            (merged_properties, merged_payloads, Some(parent_hash))
        }
    };

    let descriptor = match descriptor_for(
        &node.action,
        node.hash,
        parent_hash,
        properties,
        payloads.keys().cloned(),
        node.tags.clone(),
    ) {
        Ok(descriptor) => descriptor,
        // A recipe smuggled NaN into the properties; that is its failure.
        Err(err) => return Ok(recipe_failure(node, node.action.name(), &err.to_string())),
    };
    if descriptor.hash != node.hash {
        return Err(ExecError::HashDrift {
            expected: node.hash,
            computed: descriptor.hash,
        });
    }

    store.save_state(&descriptor, &payloads)?;
    log_event(&node.hash, "EXEC", node.action.name());
    let state = MaterializedState {
        descriptor,
        payloads,
    };
    let (hook_count, hook_failures) = invoke_hooks(node, &state);
    Ok(NodeOutcome::Executed {
        hook_count,
        hook_failures,
    })
}

fn recipe_failure(node: &PlanNode, name: &str, message: &str) -> NodeOutcome {
    log_event(&node.hash, "FAIL", name);
    NodeOutcome::RecipeFailed {
        name: name.to_owned(),
        message: message.to_owned(),
    }
}

fn invoke_hooks(node: &PlanNode, state: &MaterializedState) -> (usize, Vec<(String, String)>) {
    let mut failures = Vec::new();
    for hook in &node.hooks {
        log_event(&node.hash, "FUNC", hook.name());
        if let Err(err) = hook.call(state) {
            log_event(&node.hash, "FAIL", hook.name());
            failures.push((hook.name().to_owned(), err.to_string()));
        }
    }
    (node.hooks.len(), failures)
}

fn assemble_report(plan: &ExecutionPlan, sched: Sched, wall_time: Duration) -> RunReport {
    let mut report = RunReport {
        wall_time,
        ..RunReport::default()
    };
    for (index, node) in plan.nodes.iter().enumerate() {
        match sched.status[index] {
            Status::Done => {
                let outcome = sched.outcomes[index]
                    .as_ref()
                    .expect("done nodes have outcomes");
                let (hook_count, hook_failures) = match outcome {
                    NodeOutcome::Executed {
                        hook_count,
                        hook_failures,
                    } => {
                        report.executed.push(node.hash);
                        (hook_count, hook_failures)
                    }
                    NodeOutcome::Cached {
                        hook_count,
                        hook_failures,
                    } => {
                        report.cache_hits.push(node.hash);
                        (hook_count, hook_failures)
                    }
                    NodeOutcome::RecipeFailed { .. } => unreachable!("failed nodes are not Done"),
                };
                report.function_invocations.insert(node.hash, *hook_count);
                for (name, message) in hook_failures {
                    report.failed.push(NodeFailure {
                        hash: node.hash,
                        name: name.clone(),
                        message: message.clone(),
                        kind: FailureKind::Function,
                    });
                }
            }
            Status::Failed => {
                if let Some(NodeOutcome::RecipeFailed { name, message }) = &sched.outcomes[index] {
                    report.failed.push(NodeFailure {
                        hash: node.hash,
                        name: name.clone(),
                        message: message.clone(),
                        kind: FailureKind::Recipe,
                    });
                }
            }
            Status::Blocked => report.blocked.push(node.hash),
            Status::Waiting | Status::Queued | Status::Running => {
                unreachable!("run finished with a non-terminal node")
            }
        }
    }
    report
}

/// Progress line: `<ISO-8601 time> <hash-prefix8> <EVENT> <name>`.
fn log_event(hash: &StateHash, event: &str, name: &str) {
    eprintln!(
        "{} {} {} {}",
        chrono::Utc::now().format("%Y-%m-%dT%H:%M:%S%.3fZ"),
        hash.prefix8(),
        event,
        name
    );
}
