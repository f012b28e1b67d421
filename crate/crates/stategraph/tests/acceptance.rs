//! Acceptance suite: one check per release criterion, each printed as a
//! single pass/fail line. Run with `cargo test --test acceptance --
//! --nocapture` to see the lines on success; on failure the harness
//! prints them anyway.
//!
//! Tolerances are pinned in code: caching and query counts are exact,
//! store digests compare byte-equal, the gradient check uses relative
//! error 1e-6, and loss values must match the frozen oracle bits.

use std::collections::BTreeSet;
use std::fs;
use std::panic::catch_unwind;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use stategraph::demo::{
    build_demo_experiment, generate_data, gradient, gradient_descent, mse_loss, SplitMix64,
    DEFAULT_FEATURES, DEFAULT_SAMPLES, DEFAULT_SEED, WEIGHTS_PAYLOAD,
};
use stategraph::executor::{run, ExecMode};
use stategraph::store::{tree_digest, Store, COMPLETE_MARKER};
use stategraph::{hash_root, PropertyMap, PropertyValue, StateHash};
use tempfile::TempDir;

type CriterionResult = Result<String, String>;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stategraph"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn cli_ok(args: &[&str]) -> Result<Output, String> {
    let output = cli(args);
    if !output.status.success() {
        return Err(format!(
            "command {args:?} exited {:?}: {}",
            output.status.code(),
            String::from_utf8_lossy(&output.stderr)
        ));
    }
    Ok(output)
}

fn stdout_line(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).trim().to_owned()
}

fn check(condition: bool, message: &str) -> Result<(), String> {
    if condition {
        Ok(())
    } else {
        Err(message.to_owned())
    }
}

/// Criterion 1 — caching: fresh demo executes 5, rerun executes 0, and a
/// third learning-rate branch over the same store executes exactly 2.
/// Exact counts, under five seconds total.
fn criterion_caching() -> CriterionResult {
    let started = Instant::now();
    let dir = TempDir::new().unwrap();
    let path = dir.path().to_str().unwrap();

    let fresh = stdout_line(&cli_ok(&["demo", path])?);
    check(fresh == "executed=5 cached=0", &format!("fresh run: {fresh}"))?;
    let rerun = stdout_line(&cli_ok(&["demo", path])?);
    check(rerun == "executed=0 cached=5", &format!("rerun: {rerun}"))?;
    let extended = stdout_line(&cli_ok(&["demo", path, "--extend-lr", "0.001"])?);
    check(
        extended == "executed=2 cached=5",
        &format!("extension: {extended}"),
    )?;
    let elapsed = started.elapsed();
    check(
        elapsed < Duration::from_secs(5),
        &format!("took {elapsed:?}, budget 5s"),
    )?;
    Ok(format!("{fresh}; {rerun}; {extended}; {elapsed:?}"))
}

/// Criterion 2 — the filter-and-restore flow: "pruned" ∩ "lr:0.1" selects
/// exactly one node whose weights payload holds exactly 5 zeros of 10.
fn criterion_query_and_restore() -> CriterionResult {
    let dir = TempDir::new().unwrap();
    let path = dir.path().to_str().unwrap();
    cli_ok(&["demo", path])?;

    let store = Store::open(dir.path()).map_err(|e| e.to_string())?;
    let slim = store.load_graph_slim().map_err(|e| e.to_string())?;
    let selected = slim
        .graph
        .filter("pruned")
        .intersect(&slim.graph.filter("lr:0.1"))
        .map_err(|e| e.to_string())?;
    check(
        selected.len() == 1,
        &format!("expected 1 node, got {}", selected.len()),
    )?;

    let state = store
        .restore_state_full(selected.get(0).unwrap())
        .map_err(|e| e.to_string())?;
    let weights = stategraph::demo::decode_weights(
        state.payload(WEIGHTS_PAYLOAD).ok_or("weights payload missing")?,
    )
    .map_err(|e| e.to_string())?;
    check(weights.len() == 10, &format!("{} weights", weights.len()))?;
    let zeros = weights.iter().filter(|w| **w == 0.0).count();
    check(zeros == 5, &format!("{zeros} zero entries, expected 5"))?;
    Ok("1 node selected; 5 of 10 weights zero".into())
}

/// Criterion 3 — tree invariants: the slim graph has 5 nodes, 4 edges,
/// one root, unique root-terminated provenance paths; verify exits 0.
fn criterion_tree_invariants() -> CriterionResult {
    let dir = TempDir::new().unwrap();
    let path = dir.path().to_str().unwrap();
    cli_ok(&["demo", path])?;

    let store = Store::open(dir.path()).map_err(|e| e.to_string())?;
    let slim = store.load_graph_slim().map_err(|e| e.to_string())?;
    check(slim.graph.len() == 5, &format!("{} nodes", slim.graph.len()))?;
    check(
        slim.graph.edge_count() == 4,
        &format!("{} edges", slim.graph.edge_count()),
    )?;
    check(slim.graph.root().is_some(), "no root")?;
    let violations = slim.graph.check_invariants();
    check(violations.is_empty(), &format!("violations: {violations:?}"))?;

    let root = *slim.graph.root().unwrap();
    for descriptor in slim.graph.nodes() {
        let path_a = slim
            .graph
            .path_to_root(&descriptor.hash)
            .map_err(|e| e.to_string())?;
        let path_b = slim
            .graph
            .path_to_root(&descriptor.hash)
            .map_err(|e| e.to_string())?;
        check(path_a == path_b, "path not unique across walks")?;
        check(
            path_a.last().map(|(h, _)| *h) == Some(root),
            "path does not terminate at root",
        )?;
    }

    let verify = cli(&["verify", path]);
    check(
        verify.status.code() == Some(0),
        &format!("verify exited {:?}", verify.status.code()),
    )?;
    Ok("5 nodes, 4 edges, one root, verify exit 0".into())
}

/// Criterion 4 — function semantics: a fully cached rerun still emits
/// exactly 2 EVAL lines and the graph still has 5 nodes.
fn criterion_function_semantics() -> CriterionResult {
    let dir = TempDir::new().unwrap();
    let path = dir.path().to_str().unwrap();
    cli_ok(&["demo", path])?;

    let rerun = cli_ok(&["demo", path])?;
    check(
        stdout_line(&rerun) == "executed=0 cached=5",
        "rerun was not fully cached",
    )?;
    let stderr = String::from_utf8_lossy(&rerun.stderr).into_owned();
    let eval_lines = stderr.lines().filter(|l| l.starts_with("EVAL ")).count();
    check(eval_lines == 2, &format!("{eval_lines} EVAL lines, expected 2"))?;

    let store = Store::open(dir.path()).map_err(|e| e.to_string())?;
    let slim = store.load_graph_slim().map_err(|e| e.to_string())?;
    check(
        slim.graph.len() == 5,
        &format!("{} nodes after rerun", slim.graph.len()),
    )?;
    Ok("2 EVAL lines on cached rerun; node count 5".into())
}

/// Criterion 5 — mode equivalence: stores produced with 1, 2, 4, and 8
/// workers have byte-identical directory-tree digests.
fn criterion_mode_equivalence() -> CriterionResult {
    let mut digests = Vec::new();
    for workers in ["1", "2", "4", "8"] {
        let dir = TempDir::new().unwrap();
        let path = dir.path().to_str().unwrap();
        cli_ok(&["demo", path, "--workers", workers])?;
        digests.push(tree_digest(dir.path()).map_err(|e| e.to_string())?);
    }
    check(
        digests.windows(2).all(|w| w[0] == w[1]),
        "store digests diverged across worker counts",
    )?;
    Ok("identical digests for workers {1,2,4,8}".into())
}

/// Criterion 6 — hash suite: cross-process determinism, sensitivity over
/// 10^4 single-field perturbations, map-order invariance, and the frozen
/// golden for the empty-root hash.
fn criterion_hash_suite() -> CriterionResult {
    // Two separate processes producing byte-identical stores.
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    cli_ok(&["demo", a.path().to_str().unwrap()])?;
    cli_ok(&["demo", b.path().to_str().unwrap()])?;
    let da = tree_digest(a.path()).map_err(|e| e.to_string())?;
    let db = tree_digest(b.path()).map_err(|e| e.to_string())?;
    check(da == db, "two processes produced different stores")?;

    // Sensitivity: 10^4 randomized single-field perturbations.
    let mut rng = SplitMix64::new(0x5EED);
    let mut base = PropertyMap::new();
    for key in ["alpha", "beta", "gamma", "delta"] {
        base.insert(key.into(), PropertyValue::Int(rng.next_u64() as i64));
    }
    let base_hash = hash_root(&base).map_err(|e| e.to_string())?;
    let keys: Vec<String> = base.keys().cloned().collect();
    for trial in 0..10_000 {
        let key = &keys[(rng.next_u64() % keys.len() as u64) as usize];
        let mut perturbed = base.clone();
        let new_value = match rng.next_u64() % 3 {
            0 => PropertyValue::Int(rng.next_u64() as i64),
            1 => PropertyValue::Float(rng.next_f64() + 1.0),
            _ => PropertyValue::Str(format!("v{}", rng.next_u64())),
        };
        if perturbed.get(key) == Some(&new_value) {
            continue; // astronomically unlikely collision with the base value
        }
        perturbed.insert(key.clone(), new_value);
        let perturbed_hash = hash_root(&perturbed).map_err(|e| e.to_string())?;
        check(
            perturbed_hash != base_hash,
            &format!("perturbation {trial} did not change the hash"),
        )?;
    }

    // Map-order invariance.
    let mut forward = PropertyMap::new();
    forward.insert("lr".into(), PropertyValue::Float(0.1));
    forward.insert("seed".into(), PropertyValue::Int(42));
    let mut reverse = PropertyMap::new();
    reverse.insert("seed".into(), PropertyValue::Int(42));
    reverse.insert("lr".into(), PropertyValue::Float(0.1));
    check(
        hash_root(&forward).unwrap() == hash_root(&reverse).unwrap(),
        "insertion order leaked into the hash",
    )?;

    // Golden value, frozen from an independent SHA-256 oracle.
    let empty = hash_root(&PropertyMap::new()).unwrap();
    check(
        empty.to_hex() == "0e4b5b0efbcd722547b8d4e46c1d985b7e1fac83790a886a009e81a87045c0fd",
        &format!("empty-root hash drifted: {empty}"),
    )?;
    Ok("cross-process determinism, 10^4 perturbations, order invariance, golden".into())
}

/// Criterion 7 — numerical demo: analytic vs central-difference gradient
/// within 1e-6 relative error at 5 random points; final losses ordered,
/// below 1e-3 for lr=0.1, and bit-equal to the frozen oracle values.
fn criterion_numerics() -> CriterionResult {
    let started = Instant::now();
    let data = generate_data(DEFAULT_SEED, DEFAULT_SAMPLES, DEFAULT_FEATURES);
    let mut rng = SplitMix64::new(20260809);
    let h = 1e-5;
    for point in 0..5 {
        let w: Vec<f64> = (0..DEFAULT_FEATURES)
            .map(|_| 2.0 * rng.next_f64() - 1.0)
            .collect();
        let g = gradient(&data, &w);
        let mut err_sq = 0.0;
        let mut norm_sq = 0.0;
        for j in 0..DEFAULT_FEATURES {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += h;
            wm[j] -= h;
            let fd = (mse_loss(&data, &wp) - mse_loss(&data, &wm)) / (2.0 * h);
            err_sq += (g[j] - fd) * (g[j] - fd);
            norm_sq += g[j] * g[j];
        }
        let rel = (err_sq / norm_sq).sqrt();
        check(
            rel < 1e-6,
            &format!("gradient point {point}: relative error {rel}"),
        )?;
    }

    let zeros = vec![0.0; DEFAULT_FEATURES];
    let fast = gradient_descent(&data, &zeros, 0.1, 200).map_err(|e| e.to_string())?;
    let slow = gradient_descent(&data, &zeros, 0.01, 200).map_err(|e| e.to_string())?;
    let fast_final = *fast.losses.last().unwrap();
    let slow_final = *slow.losses.last().unwrap();
    check(fast_final < 1e-3, &format!("loss(0.1) = {fast_final}"))?;
    check(
        fast_final < slow_final,
        &format!("loss ordering: {fast_final} vs {slow_final}"),
    )?;
    // Bit-exact match against the straight-line oracle (frozen values).
    check(
        fast_final.to_bits() == 0x3E99_51D6_EAE4_8AB4,
        &format!("loss(0.1) bits {:#018X}", fast_final.to_bits()),
    )?;
    check(
        slow_final.to_bits() == 0x3FCB_8A1C_A582_F0DF,
        &format!("loss(0.01) bits {:#018X}", slow_final.to_bits()),
    )?;
    let elapsed = started.elapsed();
    check(
        elapsed < Duration::from_secs(1),
        &format!("took {elapsed:?}, budget 1s"),
    )?;
    Ok(format!(
        "gradient ok; loss(0.1)={fast_final:e} < 1e-3 < loss(0.01)={slow_final:.3}; {elapsed:?}"
    ))
}

/// Criterion 8 — crash consistency: after deleting the completion marker
/// of one mid-tree state, the next run re-executes exactly the states the
/// marker oracle says are unpersisted.
fn criterion_crash_consistency() -> CriterionResult {
    let dir = TempDir::new().unwrap();
    let mut experiment = build_demo_experiment(dir.path()).map_err(|e| e.to_string())?;
    let plan = experiment.build_plan().map_err(|e| e.to_string())?;
    run(&plan, ExecMode::SingleThreaded).map_err(|e| e.to_string())?;

    // Fault injection: the lr=0.1 train node loses its marker.
    let victim = plan.node_hashes()[1];
    let store = Store::open(dir.path()).map_err(|e| e.to_string())?;
    fs::remove_file(store.state_dir(&victim).join(COMPLETE_MARKER))
        .map_err(|e| e.to_string())?;

    // Oracle: recomputation set = states without a completion marker.
    let expected: BTreeSet<StateHash> = plan
        .node_hashes()
        .into_iter()
        .filter(|h| !store.state_dir(h).join(COMPLETE_MARKER).exists())
        .collect();
    check(expected.len() == 1, "oracle set should be the single victim")?;

    let report = run(&plan, ExecMode::SingleThreaded).map_err(|e| e.to_string())?;
    let executed: BTreeSet<StateHash> = report.executed.iter().copied().collect();
    check(
        executed == expected,
        &format!("executed {executed:?}, expected {expected:?}"),
    )?;
    check(
        report.cache_hits.len() == 4,
        &format!("{} cache hits, expected 4", report.cache_hits.len()),
    )?;
    check(report.is_clean(), "recovery run reported failures")?;
    Ok("re-executed exactly the markerless state; 4 cache hits".into())
}

type Criterion = fn() -> CriterionResult;

#[test]
fn acceptance() {
    let criteria: [(&str, Criterion); 8] = [
        ("caching counts (fresh, rerun, extension)", criterion_caching),
        ("filter-and-restore query", criterion_query_and_restore),
        ("tree invariants and verify", criterion_tree_invariants),
        ("function semantics under caching", criterion_function_semantics),
        ("mode equivalence across worker counts", criterion_mode_equivalence),
        ("hash determinism, sensitivity, golden", criterion_hash_suite),
        ("numerical demo against oracle", criterion_numerics),
        ("crash consistency", criterion_crash_consistency),
    ];

    let mut failures = Vec::new();
    for (index, (name, criterion)) in criteria.iter().enumerate() {
        let number = index + 1;
        match catch_unwind(criterion) {
            Ok(Ok(detail)) => println!("criterion {number} PASS — {name}: {detail}"),
            Ok(Err(reason)) => {
                println!("criterion {number} FAIL — {name}: {reason}");
                failures.push(number);
            }
            Err(_) => {
                println!("criterion {number} FAIL — {name}: panicked");
                failures.push(number);
            }
        }
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}
