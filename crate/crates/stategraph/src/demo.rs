//! A deterministic train-then-prune pipeline on a synthetic linear
//! problem: the built-in demonstration of root spawning, recipes, tags,
//! function hooks, and caching.
//!
//! Everything here is bit-reproducible across runs, threads, and
//! platforms: data comes from a fixed SplitMix64 stream, and training
//! fixes its arithmetic order (dot products ascend feature index,
//! gradient accumulation ascends sample index) so results are exact to
//! the last bit.

// The index-based loops below spell out the evaluation order the results
// are frozen against; keep them literal.
#![allow(clippy::needless_range_loop, clippy::assign_op_pattern)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use stategraph_core::{PropertyMap, PropertyValue};
use thiserror::Error;

use crate::engine::{
    DynError, Experiment, FunctionHook, MaterializedState, Recipe, StateDelta, StateInitializer,
};
use crate::EngineError;

/// Payload blob name for model weights.
pub const WEIGHTS_PAYLOAD: &str = "weights";

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_SAMPLES: usize = 100;
pub const DEFAULT_FEATURES: usize = 10;
pub const DEFAULT_EPOCHS: i64 = 200;
pub const DEMO_PRUNE_FRACTION: f64 = 0.5;
/// Learning rates of the two standard demo branches.
pub const DEMO_LEARNING_RATES: [f64; 2] = [0.1, 0.01];

/// SplitMix64: tiny, splittable, and easy to reproduce in any language.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform double in [0, 1): the top 53 bits over 2^53.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Synthetic regression set with an exact planted solution: every entry
/// of `x` is uniform in [-1, 1) and `y = X · 1`, so the all-ones weight
/// vector reaches loss zero exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<f64>,
    samples: usize,
    features: usize,
}

impl Dataset {
    pub fn sample_count(&self) -> usize {
        self.samples
    }

    pub fn feature_count(&self) -> usize {
        self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.features..(i + 1) * self.features]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.y[i]
    }
}

/// Generates the dataset for `seed`, filling `x` row-major with `2u - 1`
/// draws and deriving `y` from the planted all-ones solution.
pub fn generate_data(seed: u64, samples: usize, features: usize) -> Dataset {
    assert!(samples >= 1 && features >= 1, "dataset must be non-empty");
    let mut rng = SplitMix64::new(seed);
    let mut x = Vec::with_capacity(samples * features);
    for _ in 0..samples * features {
        x.push(2.0 * rng.next_f64() - 1.0);
    }
    let truth = vec![1.0; features];
    let mut y = Vec::with_capacity(samples);
    for i in 0..samples {
        y.push(dot(&x[i * features..(i + 1) * features], &truth));
    }
    Dataset {
        x,
        y,
        samples,
        features,
    }
}

fn dot(row: &[f64], weights: &[f64]) -> f64 {
    let mut acc = 0.0;
    for j in 0..row.len() {
        acc += row[j] * weights[j];
    }
    acc
}

fn residuals(data: &Dataset, weights: &[f64]) -> Vec<f64> {
    let mut r = Vec::with_capacity(data.samples);
    for i in 0..data.samples {
        r.push(dot(data.row(i), weights) - data.y[i]);
    }
    r
}

fn loss_from_residuals(residuals: &[f64], samples: usize) -> f64 {
    let mut acc = 0.0;
    for r in residuals {
        acc += r * r;
    }
    acc / samples as f64
}

fn gradient_from_residuals(data: &Dataset, residuals: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; data.features];
    // Ascending sample index, per the fixed arithmetic order.
    for i in 0..data.samples {
        let row = data.row(i);
        for j in 0..data.features {
            g[j] += row[j] * residuals[i];
        }
    }
    let scale = 2.0 / data.samples as f64;
    for value in &mut g {
        *value = scale * *value;
    }
    g
}

/// Mean-squared-error training loss `(1/n) * ||Xw - y||^2`.
pub fn mse_loss(data: &Dataset, weights: &[f64]) -> f64 {
    loss_from_residuals(&residuals(data, weights), data.samples)
}

/// Analytic gradient `(2/n) * X^T (Xw - y)`.
pub fn gradient(data: &Dataset, weights: &[f64]) -> Vec<f64> {
    gradient_from_residuals(data, &residuals(data, weights))
}

/// Weights plus the loss trace: entry `k` is the loss entering epoch `k`,
/// and the final entry is the loss after the last update.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub weights: Vec<f64>,
    pub losses: Vec<f64>,
}

#[derive(Debug, Error)]
#[error("training diverged: non-finite loss at epoch {epoch}")]
pub struct DivergenceError {
    pub epoch: u64,
}

/// Full-batch gradient descent with a fixed arithmetic order.
pub fn gradient_descent(
    data: &Dataset,
    start: &[f64],
    learning_rate: f64,
    epochs: u64,
) -> Result<TrainTrace, DivergenceError> {
    let mut weights = start.to_vec();
    let mut losses = Vec::with_capacity(epochs as usize + 1);
    for epoch in 0..epochs {
        let r = residuals(data, &weights);
        let loss = loss_from_residuals(&r, data.samples);
        if !loss.is_finite() {
            return Err(DivergenceError { epoch });
        }
        losses.push(loss);
        let g = gradient_from_residuals(data, &r);
        for j in 0..weights.len() {
            weights[j] = weights[j] - learning_rate * g[j];
        }
    }
    let final_loss = mse_loss(data, &weights);
    if !final_loss.is_finite() {
        return Err(DivergenceError { epoch: epochs });
    }
    losses.push(final_loss);
    Ok(TrainTrace { weights, losses })
}

/// Magnitude pruning: zero the `floor(fraction * d)` weights of smallest
/// absolute value, lower indices pruned first on ties.
pub fn prune_smallest(weights: &[f64], fraction: f64) -> Vec<f64> {
    let d = weights.len();
    let k = ((fraction * d as f64).floor() as usize).min(d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        weights[a]
            .abs()
            .total_cmp(&weights[b].abs())
            .then(a.cmp(&b))
    });
    let mut out = weights.to_vec();
    for &index in &order[..k] {
        out[index] = 0.0;
    }
    out
}

/// Weights blob layout: little-endian u64 count, then that many
/// little-endian IEEE-754 doubles.
pub fn encode_weights(weights: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + weights.len() * 8);
    out.extend_from_slice(&(weights.len() as u64).to_le_bytes());
    for w in weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WeightsCodecError {
    #[error("weights blob is truncated")]
    Truncated,
    #[error("weights blob length disagrees with its count field")]
    CountMismatch,
    #[error("weights blob contains a non-finite entry at index {0}")]
    NonFinite(usize),
}

pub fn decode_weights(bytes: &[u8]) -> Result<Vec<f64>, WeightsCodecError> {
    if bytes.len() < 8 {
        return Err(WeightsCodecError::Truncated);
    }
    let count = u64::from_le_bytes(bytes[..8].try_into().expect("sliced 8 bytes")) as usize;
    let body = &bytes[8..];
    if body.len() != count * 8 {
        return Err(WeightsCodecError::CountMismatch);
    }
    let mut weights = Vec::with_capacity(count);
    for (i, chunk) in body.chunks_exact(8).enumerate() {
        let w = f64::from_le_bytes(chunk.try_into().expect("chunked 8 bytes"));
        if !w.is_finite() {
            return Err(WeightsCodecError::NonFinite(i));
        }
        weights.push(w);
    }
    Ok(weights)
}

fn int_property(state: &MaterializedState, key: &str) -> Result<i64, DynError> {
    match state.property(key) {
        Some(PropertyValue::Int(v)) => Ok(*v),
        Some(_) => Err(format!("property {key:?} is not an integer").into()),
        None => Err(format!("property {key:?} is missing").into()),
    }
}

/// Rebuilds the dataset a state was defined over from its `seed`, `n`,
/// and `d` properties. Recipes depend only on state contents, never on
/// ambient inputs, so this is their one data source.
fn dataset_from_state(state: &MaterializedState) -> Result<Dataset, DynError> {
    let seed = u64::try_from(int_property(state, "seed")?)
        .map_err(|_| "property \"seed\" is negative")?;
    let samples = usize::try_from(int_property(state, "n")?)
        .map_err(|_| "property \"n\" is not a valid count")?;
    let features = usize::try_from(int_property(state, "d")?)
        .map_err(|_| "property \"d\" is not a valid count")?;
    if samples == 0 || features == 0 {
        return Err("dataset dimensions must be positive".into());
    }
    Ok(generate_data(seed, samples, features))
}

fn weights_from_state(state: &MaterializedState) -> Result<Vec<f64>, DynError> {
    let bytes = state
        .payload(WEIGHTS_PAYLOAD)
        .ok_or("missing \"weights\" payload")?;
    Ok(decode_weights(bytes)?)
}

/// Root initializer: records the dataset parameters as hashed properties
/// and seeds the tree with zero weights.
pub struct ZeroWeightsInit {
    pub seed: u64,
    pub samples: usize,
    pub features: usize,
}

impl StateInitializer for ZeroWeightsInit {
    fn properties(&self) -> PropertyMap {
        PropertyMap::from([
            ("d".to_string(), PropertyValue::Int(self.features as i64)),
            ("n".to_string(), PropertyValue::Int(self.samples as i64)),
            ("seed".to_string(), PropertyValue::Int(self.seed as i64)),
        ])
    }

    fn init(&self, _properties: &PropertyMap) -> Result<BTreeMap<String, Vec<u8>>, DynError> {
        Ok(BTreeMap::from([(
            WEIGHTS_PAYLOAD.to_string(),
            encode_weights(&vec![0.0; self.features]),
        )]))
    }
}

/// Gradient-descent training step of the pipeline.
pub struct TrainRecipe {
    pub lr: f64,
    pub epochs: i64,
}

impl Recipe for TrainRecipe {
    fn name(&self) -> &str {
        "TrainRecipe"
    }

    fn properties(&self) -> PropertyMap {
        PropertyMap::from([
            ("epochs".to_string(), PropertyValue::Int(self.epochs)),
            ("lr".to_string(), PropertyValue::Float(self.lr)),
        ])
    }

    fn run(&self, parent: &MaterializedState) -> Result<StateDelta, DynError> {
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err("learning rate must be positive and finite".into());
        }
        if self.epochs < 0 {
            return Err("epochs must be non-negative".into());
        }
        let data = dataset_from_state(parent)?;
        let weights = weights_from_state(parent)?;
        if weights.len() != data.feature_count() {
            return Err(format!(
                "weights have {} entries but the dataset has {} features",
                weights.len(),
                data.feature_count()
            )
            .into());
        }
        let trace = gradient_descent(&data, &weights, self.lr, self.epochs as u64)?;
        Ok(StateDelta {
            properties: self.properties(),
            payloads: BTreeMap::from([(
                WEIGHTS_PAYLOAD.to_string(),
                encode_weights(&trace.weights),
            )]),
        })
    }
}

/// Magnitude-pruning step of the pipeline.
pub struct PruneRecipe {
    pub fraction: f64,
}

impl Recipe for PruneRecipe {
    fn name(&self) -> &str {
        "PruneRecipe"
    }

    fn properties(&self) -> PropertyMap {
        PropertyMap::from([(
            "fraction".to_string(),
            PropertyValue::Float(self.fraction),
        )])
    }

    fn run(&self, parent: &MaterializedState) -> Result<StateDelta, DynError> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err("prune fraction must lie in [0, 1]".into());
        }
        let weights = weights_from_state(parent)?;
        let pruned = prune_smallest(&weights, self.fraction);
        Ok(StateDelta {
            properties: self.properties(),
            payloads: BTreeMap::from([(
                WEIGHTS_PAYLOAD.to_string(),
                encode_weights(&pruned),
            )]),
        })
    }
}

/// Where evaluation lines go; defaults to standard error.
pub type MetricSink = Arc<dyn Fn(&str) + Send + Sync>;

/// Evaluation hook: recomputes the training loss of a state's weights and
/// emits one `EVAL <hash-prefix8> loss=<value>` line. Mutates nothing and
/// adds no graph nodes; runs even when the state came from cache.
pub struct EvaluateFunction {
    sink: Option<MetricSink>,
}

impl EvaluateFunction {
    pub fn new() -> Self {
        Self { sink: None }
    }

    pub fn with_sink(sink: MetricSink) -> Self {
        Self { sink: Some(sink) }
    }
}

impl Default for EvaluateFunction {
    fn default() -> Self {
        Self::new()
    }
}

impl FunctionHook for EvaluateFunction {
    fn name(&self) -> &str {
        "evaluate"
    }

    fn call(&self, state: &MaterializedState) -> Result<(), DynError> {
        let data = dataset_from_state(state)?;
        let weights = weights_from_state(state)?;
        if weights.len() != data.feature_count() {
            return Err("weights and dataset disagree on dimension".into());
        }
        let loss = mse_loss(&data, &weights);
        let line = format!("EVAL {} loss={}", state.hash().prefix8(), loss);
        match &self.sink {
            Some(sink) => sink(&line),
            None => eprintln!("{line}"),
        }
        Ok(())
    }
}

/// The standard five-node demo: a zero-initialized root, one training
/// branch per learning rate in [`DEMO_LEARNING_RATES`], and a pruning
/// stage with an evaluation hook under each.
pub fn build_demo_experiment(directory: &Path) -> Result<Experiment, EngineError> {
    build_demo_experiment_extended(directory, &[])
}

/// The demo with extra learning-rate branches appended, for growing an
/// existing tree: each extra rate adds one train and one prune node.
pub fn build_demo_experiment_extended(
    directory: &Path,
    extra_learning_rates: &[f64],
) -> Result<Experiment, EngineError> {
    let mut experiment = Experiment::new(directory);
    let root = experiment.spawn_new_tree(ZeroWeightsInit {
        seed: DEFAULT_SEED,
        samples: DEFAULT_SAMPLES,
        features: DEFAULT_FEATURES,
    })?;
    experiment.add_tag(&root, "root")?;
    for lr in DEMO_LEARNING_RATES.iter().chain(extra_learning_rates) {
        let lr_tag = format!("lr:{lr}");
        let trained = experiment.derive(
            &root,
            TrainRecipe {
                lr: *lr,
                epochs: DEFAULT_EPOCHS,
            },
        )?;
        experiment.add_tag(&trained, &lr_tag)?;
        let pruned = experiment.derive(
            &trained,
            PruneRecipe {
                fraction: DEMO_PRUNE_FRACTION,
            },
        )?;
        experiment.add_tag(&pruned, "pruned")?;
        experiment.add_tag(&pruned, &lr_tag)?;
        experiment.attach_function(&pruned, EvaluateFunction::new())?;
    }
    Ok(experiment)
}
