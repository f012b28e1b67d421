//! The persistent experiment directory.
//!
//! Layout:
//!
//! ```text
//! <root>/experiment.json              schema version, encoding version, root hash
//! <root>/states/<64-hex>/state.json   descriptor (canonical JSON)
//! <root>/states/<64-hex>/payload/<name>.bin
//! <root>/states/<64-hex>/COMPLETE     empty marker, written last
//! <root>/tmp/                         staging for atomic renames
//! <root>/quarantine/                  corrupt or half-written state dirs
//! ```
//!
//! A state directory is authoritative if and only if its `COMPLETE`
//! marker exists; everything else is treated as a cache miss. Writes
//! stage into `tmp/` and move into place with a single rename, so a
//! crash at any point leaves either no state dir or a markerless one.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde_json::{Map as JsonMap, Value};
use sha2::{Digest, Sha256};
use stategraph_core::{ExperimentGraph, StateDescriptor, StateHash, StateViolation};
use thiserror::Error;
use walkdir::WalkDir;

use crate::engine::MaterializedState;
use crate::json::{descriptor_from_json_str, descriptor_to_canonical_string, JsonError};

pub const EXPERIMENT_FILE: &str = "experiment.json";
pub const STATES_DIR: &str = "states";
pub const TMP_DIR: &str = "tmp";
pub const QUARANTINE_DIR: &str = "quarantine";
pub const STATE_FILE: &str = "state.json";
pub const PAYLOAD_DIR: &str = "payload";
pub const COMPLETE_MARKER: &str = "COMPLETE";
pub const ENCODING_VERSION: &str = "v1";

/// Rejected store operation.
#[derive(Debug, Error)]
pub enum StoreError {
    #[error("not an experiment directory: {0}")]
    NotAnExperiment(PathBuf),
    #[error("store has root {existing}, expected {requested}")]
    IncompatibleRoot {
        existing: StateHash,
        requested: StateHash,
    },
    #[error("unsupported schema version {0}")]
    UnsupportedSchema(u64),
    #[error("unsupported encoding version {0:?}")]
    UnsupportedEncoding(String),
    #[error("malformed experiment metadata: {0}")]
    MalformedMeta(String),
    #[error("state {0} not found or incomplete")]
    StateNotFound(StateHash),
    #[error("state {hash} corrupt: {reason}")]
    CorruptState { hash: StateHash, reason: String },
    #[error("descriptor for {hash} is invalid: {reasons}")]
    InvalidDescriptor { hash: StateHash, reasons: String },
    #[error("payload names {payloads:?} do not match descriptor attribute names {declared:?}")]
    PayloadMismatch {
        payloads: Vec<String>,
        declared: Vec<String>,
    },
    #[error("payload name {0:?} cannot be used as a file name")]
    InvalidPayloadName(String),
    #[error("state json: {0}")]
    Json(#[from] JsonError),
    #[error("internal graph rebuild failure: {0}")]
    GraphBuild(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parsed contents of `experiment.json`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreMeta {
    pub schema_version: u64,
    pub encoding: String,
    pub root_hash: StateHash,
}

/// Cache-lookup view of one state directory.
#[derive(Debug, Clone)]
pub enum StateStatus {
    /// Marker present and the descriptor re-validates.
    Complete(StateDescriptor),
    /// Directory exists but the completion marker is missing.
    Incomplete,
    /// Marker present but the contents do not hold up.
    Corrupt(String),
    Absent,
}

/// A state directory excluded from a slim restore, and why.
#[derive(Debug, Clone)]
pub struct ExcludedState {
    pub dir_name: String,
    pub reason: ExcludeReason,
}

#[derive(Debug, Clone)]
pub enum ExcludeReason {
    /// Directory name is not a well-formed state hash.
    NotAHash,
    /// No completion marker; the state never finished persisting.
    Incomplete,
    Corrupt(String),
    /// Valid state whose ancestry does not reach the root.
    Unreachable { parent: Option<StateHash> },
}

impl fmt::Display for ExcludeReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExcludeReason::NotAHash => write!(f, "directory name is not a state hash"),
            ExcludeReason::Incomplete => write!(f, "incomplete: missing completion marker"),
            ExcludeReason::Corrupt(reason) => write!(f, "corrupt: {reason}"),
            ExcludeReason::Unreachable { parent: Some(p) } => {
                write!(f, "dangling-edge: parent {p} not in graph")
            }
            ExcludeReason::Unreachable { parent: None } => {
                write!(f, "extra root not registered in experiment metadata")
            }
        }
    }
}

/// Result of a slim restore: the graph built from `state.json` files
/// only (no payload bytes touched), plus a report of everything that had
/// to be left out.
#[derive(Debug, Clone)]
pub struct SlimGraph {
    pub graph: ExperimentGraph,
    pub excluded: Vec<ExcludedState>,
}

/// Handle to an experiment directory.
pub struct Store {
    root: PathBuf,
    tmp_seq: AtomicU64,
}

impl Store {
    fn handle(path: &Path) -> Self {
        Self {
            root: path.to_path_buf(),
            tmp_seq: AtomicU64::new(0),
        }
    }

    /// Initializes a fresh experiment directory, or reopens an existing
    /// one if its root hash matches (a no-op then).
    pub fn init(path: &Path, root_hash: &StateHash) -> Result<Self, StoreError> {
        if path.join(EXPERIMENT_FILE).is_file() {
            let store = Self::open(path)?;
            let meta = store.meta()?;
            if meta.root_hash != *root_hash {
                return Err(StoreError::IncompatibleRoot {
                    existing: meta.root_hash,
                    requested: *root_hash,
                });
            }
            return Ok(store);
        }
        if path.exists() {
            if !path.is_dir() {
                return Err(StoreError::NotAnExperiment(path.to_path_buf()));
            }
            let mut entries = fs::read_dir(path).map_err(io_at(path))?;
            if entries.next().is_some() {
                return Err(StoreError::NotAnExperiment(path.to_path_buf()));
            }
        }
        let states = path.join(STATES_DIR);
        fs::create_dir_all(&states).map_err(io_at(&states))?;
        let tmp = path.join(TMP_DIR);
        fs::create_dir_all(&tmp).map_err(io_at(&tmp))?;

        let mut meta = JsonMap::new();
        meta.insert("encoding".into(), Value::String(ENCODING_VERSION.into()));
        meta.insert("root_hash".into(), Value::String(root_hash.to_hex()));
        meta.insert(
            "schema_version".into(),
            Value::Number(crate::engine::SCHEMA_VERSION.into()),
        );
        let mut text = serde_json::to_string_pretty(&Value::Object(meta))
            .expect("experiment metadata serializes");
        text.push('\n');
        let staged = tmp.join("experiment.json.new");
        write_file_sync(&staged, text.as_bytes())?;
        let meta_path = path.join(EXPERIMENT_FILE);
        fs::rename(&staged, &meta_path).map_err(io_at(&meta_path))?;
        sync_dir(path)?;
        Ok(Self::handle(path))
    }

    /// Opens an existing experiment directory.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        if !path.join(EXPERIMENT_FILE).is_file() {
            return Err(StoreError::NotAnExperiment(path.to_path_buf()));
        }
        let store = Self::handle(path);
        store.meta()?;
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn meta(&self) -> Result<StoreMeta, StoreError> {
        let path = self.root.join(EXPERIMENT_FILE);
        let text = fs::read_to_string(&path).map_err(io_at(&path))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| StoreError::MalformedMeta(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| StoreError::MalformedMeta("not an object".into()))?;
        let schema_version = obj
            .get("schema_version")
            .and_then(Value::as_u64)
            .ok_or_else(|| StoreError::MalformedMeta("missing schema_version".into()))?;
        if schema_version != crate::engine::SCHEMA_VERSION {
            return Err(StoreError::UnsupportedSchema(schema_version));
        }
        let encoding = obj
            .get("encoding")
            .and_then(Value::as_str)
            .ok_or_else(|| StoreError::MalformedMeta("missing encoding".into()))?
            .to_owned();
        if encoding != ENCODING_VERSION {
            return Err(StoreError::UnsupportedEncoding(encoding));
        }
        let root_hash = obj
            .get("root_hash")
            .and_then(Value::as_str)
            .ok_or_else(|| StoreError::MalformedMeta("missing root_hash".into()))?;
        let root_hash = StateHash::from_hex(root_hash)
            .map_err(|e| StoreError::MalformedMeta(format!("root_hash: {e}")))?;
        Ok(StoreMeta {
            schema_version,
            encoding,
            root_hash,
        })
    }

    pub fn state_dir(&self, hash: &StateHash) -> PathBuf {
        self.root.join(STATES_DIR).join(hash.to_hex())
    }

    /// Persists a state atomically: stage under `tmp/`, rename into
    /// `states/<hash>/`, then write the completion marker. Saving an
    /// already complete hash is a no-op; a half-written directory left by
    /// a crash is quarantined and replaced.
    pub fn save_state(
        &self,
        descriptor: &StateDescriptor,
        payloads: &BTreeMap<String, Vec<u8>>,
    ) -> Result<(), StoreError> {
        let violations = descriptor.validate();
        if !violations.is_empty() {
            return Err(StoreError::InvalidDescriptor {
                hash: descriptor.hash,
                reasons: join_violations(&violations),
            });
        }
        let declared: BTreeSet<&str> = descriptor
            .nonhashed_attribute_names
            .iter()
            .map(String::as_str)
            .collect();
        let provided: BTreeSet<&str> = payloads.keys().map(String::as_str).collect();
        if declared != provided {
            return Err(StoreError::PayloadMismatch {
                payloads: provided.iter().map(|s| (*s).to_owned()).collect(),
                declared: declared.iter().map(|s| (*s).to_owned()).collect(),
            });
        }
        for name in payloads.keys() {
            check_payload_name(name)?;
        }

        let final_dir = self.state_dir(&descriptor.hash);
        if final_dir.join(COMPLETE_MARKER).exists() {
            return Ok(());
        }

        let staged = self.root.join(TMP_DIR).join(format!(
            "{}.{}.{}",
            descriptor.hash.to_hex(),
            std::process::id(),
            self.tmp_seq.fetch_add(1, Ordering::Relaxed)
        ));
        fs::create_dir_all(&staged).map_err(io_at(&staged))?;
        write_file_sync(
            &staged.join(STATE_FILE),
            descriptor_to_canonical_string(descriptor)?.as_bytes(),
        )?;
        if !payloads.is_empty() {
            let payload_dir = staged.join(PAYLOAD_DIR);
            fs::create_dir_all(&payload_dir).map_err(io_at(&payload_dir))?;
            for (name, bytes) in payloads {
                write_file_sync(&payload_dir.join(format!("{name}.bin")), bytes)?;
            }
        }

        let mut attempts = 0;
        loop {
            match fs::rename(&staged, &final_dir) {
                Ok(()) => break,
                Err(err) => {
                    if final_dir.join(COMPLETE_MARKER).exists() {
                        // Concurrent save of the same hash won the race.
                        let _ = fs::remove_dir_all(&staged);
                        return Ok(());
                    }
                    if final_dir.exists() && attempts < 4 {
                        self.quarantine_dir(&final_dir)?;
                        attempts += 1;
                        continue;
                    }
                    let _ = fs::remove_dir_all(&staged);
                    return Err(io_at(&final_dir)(err));
                }
            }
        }
        write_file_sync(&final_dir.join(COMPLETE_MARKER), b"")?;
        sync_dir(&final_dir)?;
        sync_dir(&self.root.join(STATES_DIR))?;
        Ok(())
    }

    /// Classifies the state directory for `hash`. Only errors on real
    /// I/O failures; missing, unfinished, or damaged contents are data.
    pub fn lookup(&self, hash: &StateHash) -> Result<StateStatus, StoreError> {
        let dir = self.state_dir(hash);
        if !dir.exists() {
            return Ok(StateStatus::Absent);
        }
        if !dir.is_dir() {
            return Ok(StateStatus::Corrupt("state path is not a directory".into()));
        }
        if !dir.join(COMPLETE_MARKER).exists() {
            return Ok(StateStatus::Incomplete);
        }
        let state_path = dir.join(STATE_FILE);
        let text = match fs::read_to_string(&state_path) {
            Ok(text) => text,
            Err(err) if err.kind() == io::ErrorKind::NotFound => {
                return Ok(StateStatus::Corrupt("state.json missing".into()));
            }
            Err(err) => return Err(io_at(&state_path)(err)),
        };
        let descriptor = match descriptor_from_json_str(&text) {
            Ok(descriptor) => descriptor,
            Err(err) => return Ok(StateStatus::Corrupt(err.to_string())),
        };
        if descriptor.hash != *hash {
            return Ok(StateStatus::Corrupt(
                "directory name does not match stored hash".into(),
            ));
        }
        let violations = descriptor.validate();
        if !violations.is_empty() {
            return Ok(StateStatus::Corrupt(join_violations(&violations)));
        }
        Ok(StateStatus::Complete(descriptor))
    }

    /// Cache probe: hit if and only if the directory exists, carries the
    /// completion marker, and its descriptor re-validates.
    pub fn cache_lookup(&self, hash: &StateHash) -> bool {
        matches!(self.lookup(hash), Ok(StateStatus::Complete(_)))
    }

    /// Restores a state in full: descriptor plus every payload blob,
    /// byte-equal to what was saved.
    pub fn restore_state_full(&self, hash: &StateHash) -> Result<MaterializedState, StoreError> {
        match self.lookup(hash)? {
            StateStatus::Complete(descriptor) => {
                let dir = self.state_dir(hash);
                let mut payloads = BTreeMap::new();
                for name in &descriptor.nonhashed_attribute_names {
                    let path = dir.join(PAYLOAD_DIR).join(format!("{name}.bin"));
                    let bytes = match fs::read(&path) {
                        Ok(bytes) => bytes,
                        Err(err) if err.kind() == io::ErrorKind::NotFound => {
                            return Err(StoreError::CorruptState {
                                hash: *hash,
                                reason: format!("payload {name:?} missing despite marker"),
                            });
                        }
                        Err(err) => return Err(io_at(&path)(err)),
                    };
                    payloads.insert(name.clone(), bytes);
                }
                Ok(MaterializedState {
                    descriptor,
                    payloads,
                })
            }
            StateStatus::Incomplete | StateStatus::Absent => {
                Err(StoreError::StateNotFound(*hash))
            }
            StateStatus::Corrupt(reason) => Err(StoreError::CorruptState {
                hash: *hash,
                reason,
            }),
        }
    }

    /// Moves a damaged state directory into `quarantine/` so the next run
    /// recomputes it. Missing directories are a no-op.
    pub fn quarantine_state(&self, hash: &StateHash) -> Result<(), StoreError> {
        let dir = self.state_dir(hash);
        if dir.exists() {
            self.quarantine_dir(&dir)?;
        }
        Ok(())
    }

    fn quarantine_dir(&self, dir: &Path) -> Result<(), StoreError> {
        let qroot = self.root.join(QUARANTINE_DIR);
        fs::create_dir_all(&qroot).map_err(io_at(&qroot))?;
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "unnamed".into());
        for attempt in 0u64.. {
            let dest = qroot.join(format!("{name}.{attempt}"));
            if dest.exists() {
                continue;
            }
            return match fs::rename(dir, &dest) {
                Ok(()) => Ok(()),
                // Another process got there first.
                Err(err) if err.kind() == io::ErrorKind::NotFound => Ok(()),
                Err(err) => Err(io_at(dir)(err)),
            };
        }
        unreachable!("quarantine slot search is unbounded")
    }

    /// All complete, valid descriptors keyed by hash, plus exclusions.
    pub fn load_descriptors(
        &self,
    ) -> Result<(BTreeMap<StateHash, StateDescriptor>, Vec<ExcludedState>), StoreError> {
        let states = self.root.join(STATES_DIR);
        let mut entries: Vec<_> = fs::read_dir(&states)
            .map_err(io_at(&states))?
            .collect::<Result<_, _>>()
            .map_err(io_at(&states))?;
        entries.sort_by_key(|e| e.file_name());

        let mut descriptors = BTreeMap::new();
        let mut excluded = Vec::new();
        for entry in entries {
            let dir_name = entry.file_name().to_string_lossy().into_owned();
            let hash = match StateHash::from_hex(&dir_name) {
                Ok(hash) => hash,
                Err(_) => {
                    excluded.push(ExcludedState {
                        dir_name,
                        reason: ExcludeReason::NotAHash,
                    });
                    continue;
                }
            };
            match self.lookup(&hash)? {
                StateStatus::Complete(descriptor) => {
                    descriptors.insert(hash, descriptor);
                }
                StateStatus::Incomplete => excluded.push(ExcludedState {
                    dir_name,
                    reason: ExcludeReason::Incomplete,
                }),
                StateStatus::Corrupt(reason) => excluded.push(ExcludedState {
                    dir_name,
                    reason: ExcludeReason::Corrupt(reason),
                }),
                StateStatus::Absent => {}
            }
        }
        Ok((descriptors, excluded))
    }

    /// Slim restore: rebuilds the experiment graph from `state.json`
    /// files alone. Payload blobs are never opened.
    pub fn load_graph_slim(&self) -> Result<SlimGraph, StoreError> {
        let meta = self.meta()?;
        let (descriptors, mut excluded) = self.load_descriptors()?;

        let mut children: BTreeMap<StateHash, Vec<StateHash>> = BTreeMap::new();
        for descriptor in descriptors.values() {
            if let Some(parent) = descriptor.parent_hash {
                children.entry(parent).or_default().push(descriptor.hash);
            }
        }

        let mut graph = ExperimentGraph::new();
        let mut queue = VecDeque::from([meta.root_hash]);
        while let Some(hash) = queue.pop_front() {
            if graph.contains(&hash) {
                continue;
            }
            let Some(descriptor) = descriptors.get(&hash) else {
                continue;
            };
            graph
                .add_node(descriptor.clone())
                .map_err(|e| StoreError::GraphBuild(e.to_string()))?;
            if let Some(kids) = children.get(&hash) {
                queue.extend(kids.iter().copied());
            }
        }
        for (hash, descriptor) in &descriptors {
            if !graph.contains(hash) {
                excluded.push(ExcludedState {
                    dir_name: hash.to_hex(),
                    reason: ExcludeReason::Unreachable {
                        parent: descriptor.parent_hash,
                    },
                });
            }
        }
        excluded.sort_by(|a, b| a.dir_name.cmp(&b.dir_name));
        Ok(SlimGraph { graph, excluded })
    }
}

fn join_violations(violations: &[StateViolation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

fn check_payload_name(name: &str) -> Result<(), StoreError> {
    let bad = name.is_empty()
        || name == "."
        || name == ".."
        || name
            .chars()
            .any(|c| c == '/' || c == '\\' || c.is_control());
    if bad {
        return Err(StoreError::InvalidPayloadName(name.to_owned()));
    }
    Ok(())
}

fn write_file_sync(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let mut file = File::create(path).map_err(io_at(path))?;
    file.write_all(bytes).map_err(io_at(path))?;
    file.sync_all().map_err(io_at(path))?;
    Ok(())
}

fn sync_dir(path: &Path) -> Result<(), StoreError> {
    File::open(path)
        .and_then(|dir| dir.sync_all())
        .map_err(io_at(path))
}

/// Digest of a directory tree: relative paths and file contents, in
/// sorted path order. Two stores with equal digests hold byte-identical
/// files. Empty directories and metadata (times, modes) do not count.
pub fn tree_digest(path: &Path) -> Result<[u8; 32], StoreError> {
    let mut files: Vec<(String, PathBuf)> = Vec::new();
    for entry in WalkDir::new(path).sort_by_file_name() {
        let entry = entry.map_err(|e| StoreError::Io {
            path: path.to_path_buf(),
            source: io::Error::other(e),
        })?;
        if entry.file_type().is_file() {
            let rel = entry
                .path()
                .strip_prefix(path)
                .expect("walkdir entries stay under the walk root")
                .to_string_lossy()
                .into_owned();
            files.push((rel, entry.path().to_path_buf()));
        }
    }
    files.sort();
    let mut hasher = Sha256::new();
    for (rel, full) in files {
        hasher.update((rel.len() as u64).to_be_bytes());
        hasher.update(rel.as_bytes());
        let bytes = fs::read(&full).map_err(io_at(&full))?;
        hasher.update((bytes.len() as u64).to_be_bytes());
        hasher.update(&bytes);
    }
    Ok(hasher.finalize().into())
}
