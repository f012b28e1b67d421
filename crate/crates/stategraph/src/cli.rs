//! Command-line surface over experiment stores.
//!
//! Exit codes: 0 success, 1 violations or not-found, 2 usage errors
//! (the latter produced by argument parsing). Everything printed to
//! standard out is deterministic for a given store; progress and
//! diagnostics go to standard error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use stategraph_core::{StateDescriptor, StateHash};

use crate::demo::{build_demo_experiment, build_demo_experiment_extended};
use crate::executor::{run, ExecMode};
use crate::json::{property_map_to_display_string, property_to_display_string};
use crate::store::{Store, PAYLOAD_DIR};

#[derive(Debug, Parser)]
#[command(
    name = "stategraph",
    version,
    about = "Reproducible experiment trees: run the built-in demo and inspect persisted stores"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build and run the train-then-prune demo experiment.
    Demo {
        /// Experiment directory (created if absent).
        dir: PathBuf,
        /// Worker threads; 1 means single-threaded execution.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        workers: u64,
        /// Extra learning-rate branches (train + prune each) to attach.
        #[arg(long = "extend-lr", value_name = "LR")]
        extend_lr: Vec<f64>,
    },
    /// List all complete states, one line per state.
    Ls { dir: PathBuf },
    /// Print hashes of states carrying all of the given tags.
    Filter {
        dir: PathBuf,
        /// Comma-separated tags; a state must carry every one.
        #[arg(long, value_delimiter = ',', required = true)]
        tags: Vec<String>,
    },
    /// Show one state: properties, tags, recipe, payloads, provenance.
    Show {
        dir: PathBuf,
        /// Full 64-hex hash or a unique prefix (at least 4 characters).
        hash: String,
    },
    /// Export the experiment tree as DOT text.
    Dot { dir: PathBuf },
    /// Recompute hashes and check every store and tree invariant.
    Verify { dir: PathBuf },
}

pub fn main_with(cli: Cli) -> i32 {
    match cli.command {
        Command::Demo {
            dir,
            workers,
            extend_lr,
        } => cmd_demo(&dir, workers as usize, &extend_lr),
        Command::Ls { dir } => cmd_ls(&dir),
        Command::Filter { dir, tags } => cmd_filter(&dir, &tags),
        Command::Show { dir, hash } => cmd_show(&dir, &hash),
        Command::Dot { dir } => cmd_dot(&dir),
        Command::Verify { dir } => cmd_verify(&dir),
    }
}

fn fail(message: impl std::fmt::Display) -> i32 {
    eprintln!("error: {message}");
    1
}

pub fn cmd_demo(dir: &Path, workers: usize, extend_lr: &[f64]) -> i32 {
    let experiment = if extend_lr.is_empty() {
        build_demo_experiment(dir)
    } else {
        build_demo_experiment_extended(dir, extend_lr)
    };
    let mut experiment = match experiment {
        Ok(experiment) => experiment,
        Err(err) => return fail(err),
    };
    let plan = match experiment.build_plan() {
        Ok(plan) => plan,
        Err(err) => return fail(err),
    };
    let mode = if workers == 1 {
        ExecMode::SingleThreaded
    } else {
        ExecMode::MultiThreaded { workers }
    };
    let report = match run(&plan, mode) {
        Ok(report) => report,
        Err(err) => return fail(err),
    };
    println!(
        "executed={} cached={}",
        report.executed.len(),
        report.cache_hits.len()
    );
    if report.is_clean() {
        0
    } else {
        for failure in &report.failed {
            eprintln!(
                "failed: {} {} — {}",
                failure.hash.prefix8(),
                failure.name,
                failure.message
            );
        }
        for hash in &report.blocked {
            eprintln!("blocked: {}", hash.prefix8());
        }
        1
    }
}

pub fn cmd_ls(dir: &Path) -> i32 {
    let store = match Store::open(dir) {
        Ok(store) => store,
        Err(err) => return fail(err),
    };
    let (descriptors, excluded) = match store.load_descriptors() {
        Ok(loaded) => loaded,
        Err(err) => return fail(err),
    };
    for excluded_state in &excluded {
        eprintln!("skipped {}: {}", excluded_state.dir_name, excluded_state.reason);
    }
    for descriptor in descriptors.values() {
        let tags: Vec<&str> = descriptor.tags.iter().map(String::as_str).collect();
        println!(
            "{} {} tags={}",
            descriptor.hash.prefix8(),
            descriptor.recipe_name().unwrap_or("ROOT"),
            tags.join(",")
        );
    }
    0
}

pub fn cmd_filter(dir: &Path, tags: &[String]) -> i32 {
    let store = match Store::open(dir) {
        Ok(store) => store,
        Err(err) => return fail(err),
    };
    let slim = match store.load_graph_slim() {
        Ok(slim) => slim,
        Err(err) => return fail(err),
    };
    let mut tags = tags.iter();
    let Some(first) = tags.next() else {
        return fail("at least one tag is required");
    };
    let mut selected = slim.graph.filter(first);
    for tag in tags {
        selected = match selected.intersect(&slim.graph.filter(tag)) {
            Ok(set) => set,
            Err(err) => return fail(err),
        };
    }
    for hash in selected.iter() {
        println!("{hash}");
    }
    0
}

pub fn cmd_show(dir: &Path, hash_or_prefix: &str) -> i32 {
    let store = match Store::open(dir) {
        Ok(store) => store,
        Err(err) => return fail(err),
    };
    let (descriptors, _) = match store.load_descriptors() {
        Ok(loaded) => loaded,
        Err(err) => return fail(err),
    };
    let hash = match resolve_prefix(&descriptors, hash_or_prefix) {
        Ok(hash) => hash,
        Err(message) => return fail(message),
    };
    let descriptor = &descriptors[&hash];

    println!("hash: {hash}");
    match &descriptor.recipe {
        Some(recipe) => {
            let props = property_map_to_display_string(recipe.properties())
                .unwrap_or_else(|_| "<unrenderable>".into());
            println!("recipe: {} {}", recipe.name(), props);
        }
        None => println!("recipe: ROOT"),
    }
    let tags: Vec<&str> = descriptor.tags.iter().map(String::as_str).collect();
    println!("tags: {}", tags.join(","));
    println!("properties:");
    for (key, value) in &descriptor.properties {
        let rendered =
            property_to_display_string(value).unwrap_or_else(|_| "<unrenderable>".into());
        println!("  {key} = {rendered}");
    }
    println!("payloads:");
    for name in &descriptor.nonhashed_attribute_names {
        let path = store
            .state_dir(&hash)
            .join(PAYLOAD_DIR)
            .join(format!("{name}.bin"));
        match std::fs::metadata(&path) {
            Ok(meta) => println!("  {name} ({} bytes)", meta.len()),
            Err(_) => println!("  {name} (missing)"),
        }
    }
    println!("provenance:");
    // Walk the descriptor map directly so damage elsewhere in the store
    // cannot hide this state's own ancestry.
    let mut cursor = descriptor;
    let mut steps = 0usize;
    loop {
        println!(
            "  {} {}",
            cursor.hash.prefix8(),
            cursor.recipe_name().unwrap_or("ROOT")
        );
        match cursor.parent_hash {
            None => break,
            Some(parent) => match descriptors.get(&parent) {
                Some(next) => cursor = next,
                None => {
                    return fail(format!("provenance broken: parent {parent} missing"));
                }
            },
        }
        steps += 1;
        if steps > descriptors.len() {
            return fail("provenance broken: parent chain loops");
        }
    }
    0
}

fn resolve_prefix(
    descriptors: &BTreeMap<StateHash, StateDescriptor>,
    text: &str,
) -> Result<StateHash, String> {
    if text.len() == 64 {
        let hash = StateHash::from_hex(text).map_err(|e| e.to_string())?;
        return if descriptors.contains_key(&hash) {
            Ok(hash)
        } else {
            Err(format!("no state {text}"))
        };
    }
    if text.len() < 4 {
        return Err(format!(
            "prefix {text:?} is too short; at least 4 characters required"
        ));
    }
    let candidates: Vec<&StateHash> = descriptors
        .keys()
        .filter(|h| h.to_hex().starts_with(text))
        .collect();
    match candidates.as_slice() {
        [] => Err(format!("no state matches prefix {text:?}")),
        [unique] => Ok(**unique),
        many => {
            let listed: Vec<String> = many.iter().map(|h| h.to_hex()).collect();
            Err(format!(
                "prefix {text:?} is ambiguous; candidates:\n  {}",
                listed.join("\n  ")
            ))
        }
    }
}

pub fn cmd_dot(dir: &Path) -> i32 {
    let store = match Store::open(dir) {
        Ok(store) => store,
        Err(err) => return fail(err),
    };
    let slim = match store.load_graph_slim() {
        Ok(slim) => slim,
        Err(err) => return fail(err),
    };
    for excluded in &slim.excluded {
        eprintln!("skipped {}: {}", excluded.dir_name, excluded.reason);
    }
    match slim.graph.to_dot() {
        Ok(dot) => {
            print!("{dot}");
            0
        }
        Err(err) => fail(err),
    }
}

pub fn cmd_verify(dir: &Path) -> i32 {
    let store = match Store::open(dir) {
        Ok(store) => store,
        Err(err) => return fail(err),
    };
    let mut violations: Vec<String> = Vec::new();

    let slim = match store.load_graph_slim() {
        Ok(slim) => slim,
        Err(err) => return fail(err),
    };
    // Exclusions are integrity findings here: verify vouches for the
    // whole store, not just the reachable part.
    for excluded in &slim.excluded {
        violations.push(format!("{}: {}", excluded.dir_name, excluded.reason));
    }
    for violation in slim.graph.check_invariants() {
        violations.push(violation.to_string());
    }

    if violations.is_empty() {
        0
    } else {
        for violation in &violations {
            println!("{violation}");
        }
        1
    }
}
