//! Surrogate selection: a small MLP regressor (6 -> 32 -> 16 -> 1) fit to
//! historical (shaping, achieved reward) records, used to rank random
//! candidate shapings and keep the top P.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::nn::{relu, Dense};
use crate::rng::stream_rng;
use crate::shaping::{
    validate_shaping_set, SelectionMethod, ShapingSet, ShapingVector, Violation, NUM_FEATURES,
};

pub const LAYER_SIZES: [usize; 4] = [6, 32, 16, 1];
pub const DROPOUT_RATE: f64 = 0.3;

/// One historical training run: the shaping it used and the reward it reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub folder: String,
    pub pop_num: u32,
    pub seed: u64,
    pub run_type: String,
    pub best_reward: f64,
    #[serde(rename = "reward_shaping_params")]
    pub shaping: ShapingVector,
}

/// MLP regressor with rectifier hiddens, identity output, inverted dropout
/// at train time, and stored normalization constants (inputs scaled to
/// [0, 1], targets standardized).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<Dense>,
    pub dropout_rate: f64,
    pub in_scale: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 500, learning_rate: 0.001, batch_size: 8, seed: 0 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SurrogateError {
    #[error("need at least {batch_size} records, got {len}")]
    InsufficientData { len: usize, batch_size: usize },
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    NonFiniteLoss { epoch: usize, loss: f64 },
    #[error("cannot select {p} shapings from {n_candidates} candidates")]
    InvalidCount { p: usize, n_candidates: usize },
    #[error("input has {got} values, model expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("record {index} invalid: {reasons}")]
    InvalidRecord { index: usize, reasons: String },
    #[error("checkpoint is not a surrogate model (kind {0:?})")]
    WrongKind(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Xavier-uniform weights, zero biases; deterministic in the seed.
pub fn init_mlp(seed: u64) -> MlpModel {
    let mut rng = stream_rng(seed, "surrogate/init", 0);
    let layers = LAYER_SIZES
        .windows(2)
        .map(|w| Dense::xavier(w[0], w[1], &mut rng))
        .collect();
    MlpModel {
        layers,
        dropout_rate: DROPOUT_RATE,
        in_scale: vec![10.0; NUM_FEATURES],
        target_mean: 0.0,
        target_std: 1.0,
    }
}

struct ForwardCache {
    /// Normalized input.
    x: Vec<f64>,
    /// Pre-activations per hidden layer.
    z: Vec<Vec<f64>>,
    /// Post-activation (and post-dropout) values per hidden layer.
    a: Vec<Vec<f64>>,
    /// Effective dropout multiplier per hidden unit (1 everywhere in
    /// inference mode).
    keep: Vec<Vec<f64>>,
    /// Standardized-space output.
    y: f64,
}

impl MlpModel {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn validate_shapes(&self) -> Result<(), SurrogateError> {
        for pair in self.layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(SurrogateError::ShapeMismatch {
                    expected: pair[0].outputs,
                    got: pair[1].inputs,
                });
            }
        }
        if self.in_scale.len() != self.layers[0].inputs {
            return Err(SurrogateError::ShapeMismatch {
                expected: self.layers[0].inputs,
                got: self.in_scale.len(),
            });
        }
        Ok(())
    }

    fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().zip(&self.in_scale).map(|(v, s)| v / s).collect()
    }

    fn forward_cache<R: Rng>(&self, raw: &[f64], dropout: Option<&mut R>) -> ForwardCache {
        let x = self.normalize(raw);
        let hidden = self.layers.len() - 1;
        let mut z = Vec::with_capacity(hidden);
        let mut a = Vec::with_capacity(hidden);
        let mut keep = Vec::with_capacity(hidden);
        let mut masks_rng = dropout;
        let keep_prob = 1.0 - self.dropout_rate;
        let mut cur = x.clone();
        for layer in &self.layers[..hidden] {
            let pre = layer.forward(&cur);
            let mut act = pre.clone();
            relu(&mut act);
            let scale: Vec<f64> = match masks_rng.as_deref_mut() {
                Some(rng) => (0..act.len())
                    .map(|_| if rng.random::<f64>() < keep_prob { 1.0 / keep_prob } else { 0.0 })
                    .collect(),
                None => vec![1.0; act.len()],
            };
            for (v, k) in act.iter_mut().zip(&scale) {
                *v *= k;
            }
            z.push(pre);
            keep.push(scale);
            cur = act.clone();
            a.push(act);
        }
        let y = self.layers[hidden].forward(&cur)[0];
        ForwardCache { x, z, a, keep, y }
    }

    /// Inference: normalized input through the net, output de-standardized.
    pub fn predict(&self, shaping: &ShapingVector) -> f64 {
        self.predict_raw(&shaping.0).expect("shaping arity matches model input")
    }

    pub fn predict_raw(&self, raw: &[f64]) -> Result<f64, SurrogateError> {
        if raw.len() != self.layers[0].inputs {
            return Err(SurrogateError::ShapeMismatch {
                expected: self.layers[0].inputs,
                got: raw.len(),
            });
        }
        let cache = self.forward_cache::<rand_chacha::ChaCha8Rng>(raw, None);
        Ok(cache.y * self.target_std + self.target_mean)
    }

    /// Flat parameter view in checkpoint order: per layer, weights row-major
    /// then biases.
    pub fn get_param(&self, mut index: usize) -> f64 {
        for layer in &self.layers {
            if index < layer.weights.len() {
                return layer.weights[index];
            }
            index -= layer.weights.len();
            if index < layer.biases.len() {
                return layer.biases[index];
            }
            index -= layer.biases.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut index: usize, value: f64) {
        for layer in &mut self.layers {
            if index < layer.weights.len() {
                layer.weights[index] = value;
                return;
            }
            index -= layer.weights.len();
            if index < layer.biases.len() {
                layer.biases[index] = value;
                return;
            }
            index -= layer.biases.len();
        }
        panic!("parameter index out of range");
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new("surrogate");
        let mut sizes = vec![self.layers[0].inputs.to_string()];
        for layer in &self.layers {
            sizes.push(layer.outputs.to_string());
        }
        ckpt.push_field("layers", sizes.join(" "));
        ckpt.push_field("dropout_rate", self.dropout_rate);
        ckpt.push_field(
            "in_scale",
            self.in_scale.iter().map(f64::to_string).collect::<Vec<_>>().join(" "),
        );
        ckpt.push_field("target_mean", self.target_mean);
        ckpt.push_field("target_std", self.target_std);
        for layer in &self.layers {
            ckpt.params.extend_from_slice(&layer.weights);
            ckpt.params.extend_from_slice(&layer.biases);
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, SurrogateError> {
        if ckpt.kind != "surrogate" {
            return Err(SurrogateError::WrongKind(ckpt.kind.clone()));
        }
        let sizes: Vec<usize> = ckpt.parse_list("layers")?;
        let mut layers = Vec::with_capacity(sizes.len().saturating_sub(1));
        let mut cursor = 0usize;
        for pair in sizes.windows(2) {
            let (inputs, outputs) = (pair[0], pair[1]);
            let n_w = inputs * outputs;
            let weights = ckpt.params[cursor..cursor + n_w].to_vec();
            cursor += n_w;
            let biases = ckpt.params[cursor..cursor + outputs].to_vec();
            cursor += outputs;
            layers.push(Dense { inputs, outputs, weights, biases });
        }
        if cursor != ckpt.params.len() {
            return Err(CheckpointError::ParamCount { expected: cursor, got: ckpt.params.len() }
                .into());
        }
        let model = MlpModel {
            layers,
            dropout_rate: ckpt.parse_field("dropout_rate")?,
            in_scale: ckpt.parse_list("in_scale")?,
            target_mean: ckpt.parse_field("target_mean")?,
            target_std: ckpt.parse_field("target_std")?,
        };
        model.validate_shapes()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), SurrogateError> {
        self.to_checkpoint().save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SurrogateError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Forward in standardized space with optional dropout via `seed`.
pub fn forward(model: &MlpModel, shaping: &ShapingVector, training: bool, seed: u64) -> f64 {
    if training {
        let mut rng = stream_rng(seed, "surrogate/dropout", 0);
        let cache = model.forward_cache(&shaping.0, Some(&mut rng));
        cache.y * model.target_std + model.target_mean
    } else {
        model.predict(shaping)
    }
}

/// Per-layer gradients, matching the model's shapes.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]))
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            for (m, t) in mine.0.iter_mut().zip(&theirs.0) {
                *m += t * scale;
            }
            for (m, t) in mine.1.iter_mut().zip(&theirs.1) {
                *m += t * scale;
            }
        }
    }
}

/// Squared-error loss in standardized target space and its analytic
/// parameter gradients, reusing the dropout state captured in `cache`.
fn loss_and_grads_from_cache(
    model: &MlpModel,
    cache: &ForwardCache,
    target_std_space: f64,
) -> (f64, Gradients) {
    let residual = cache.y - target_std_space;
    let loss = residual * residual;
    let mut grads = Gradients::zeros_like(model);
    let hidden = model.layers.len() - 1;

    // Output layer.
    let mut upstream = vec![2.0 * residual];
    let last_input = if hidden == 0 { &cache.x } else { &cache.a[hidden - 1] };
    {
        let (gw, gb) = &mut grads.layers[hidden];
        for (i, x) in last_input.iter().enumerate() {
            gw[i] = upstream[0] * x;
        }
        gb[0] = upstream[0];
    }

    // Hidden layers, walking backward.
    for l in (0..hidden).rev() {
        let next_layer = &model.layers[l + 1];
        let mut da = vec![0.0; next_layer.inputs];
        for o in 0..next_layer.outputs {
            let row = &next_layer.weights[o * next_layer.inputs..(o + 1) * next_layer.inputs];
            for (i, w) in row.iter().enumerate() {
                da[i] += upstream[o] * w;
            }
        }
        let dz: Vec<f64> = da
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let relu_grad = if cache.z[l][i] > 0.0 { 1.0 } else { 0.0 };
                d * relu_grad * cache.keep[l][i]
            })
            .collect();
        let input = if l == 0 { &cache.x } else { &cache.a[l - 1] };
        let (gw, gb) = &mut grads.layers[l];
        let layer = &model.layers[l];
        for o in 0..layer.outputs {
            for (i, x) in input.iter().enumerate() {
                gw[o * layer.inputs + i] = dz[o] * x;
            }
            gb[o] = dz[o];
        }
        upstream = dz;
    }
    (loss, grads)
}

/// Dropout-free loss and analytic gradients for one record, in standardized
/// target space.
pub fn loss_and_gradients(
    model: &MlpModel,
    shaping: &ShapingVector,
    target: f64,
) -> (f64, Gradients) {
    let cache = model.forward_cache::<rand_chacha::ChaCha8Rng>(&shaping.0, None);
    let t = (target - model.target_mean) / model.target_std;
    loss_and_grads_from_cache(model, &cache, t)
}

/// Central finite-difference gradients of the same loss.
pub fn numeric_gradients(
    model: &MlpModel,
    shaping: &ShapingVector,
    target: f64,
    epsilon: f64,
) -> Vec<f64> {
    let t = (target - model.target_mean) / model.target_std;
    let loss_at = |m: &MlpModel| {
        let cache = m.forward_cache::<rand_chacha::ChaCha8Rng>(&shaping.0, None);
        let r = cache.y - t;
        r * r
    };
    let n = model.param_count();
    let mut grads = Vec::with_capacity(n);
    let mut probe = model.clone();
    for i in 0..n {
        let original = probe.get_param(i);
        probe.set_param(i, original + epsilon);
        let plus = loss_at(&probe);
        probe.set_param(i, original - epsilon);
        let minus = loss_at(&probe);
        probe.set_param(i, original);
        grads.push((plus - minus) / (2.0 * epsilon));
    }
    grads
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-8)
}

/// Signs of every hidden pre-activation; finite differences are only valid
/// for a parameter if perturbing it does not flip any rectifier.
fn activation_pattern(model: &MlpModel, raw: &[f64]) -> Vec<bool> {
    let cache = model.forward_cache::<rand_chacha::ChaCha8Rng>(raw, None);
    cache.z.iter().flatten().map(|z| *z > 0.0).collect()
}

/// Max relative error between analytic and central finite-difference
/// gradients. Components whose ±epsilon probes straddle a rectifier kink are
/// excluded: the secant there does not estimate the derivative.
pub fn gradient_check(model: &MlpModel, record: &ResultRecord, epsilon: f64) -> f64 {
    let (_, analytic) = loss_and_gradients(model, &record.shaping, record.best_reward);
    let analytic = analytic.flatten();
    let t = (record.best_reward - model.target_mean) / model.target_std;
    let loss_at = |m: &MlpModel| {
        let cache = m.forward_cache::<rand_chacha::ChaCha8Rng>(&record.shaping.0, None);
        let r = cache.y - t;
        r * r
    };
    let mut probe = model.clone();
    let mut max_err = 0.0_f64;
    for (i, a) in analytic.iter().enumerate() {
        let original = probe.get_param(i);
        probe.set_param(i, original + epsilon);
        let plus = loss_at(&probe);
        let pattern_plus = activation_pattern(&probe, &record.shaping.0);
        probe.set_param(i, original - epsilon);
        let minus = loss_at(&probe);
        let pattern_minus = activation_pattern(&probe, &record.shaping.0);
        probe.set_param(i, original);
        if pattern_plus != pattern_minus {
            continue;
        }
        let n = (plus - minus) / (2.0 * epsilon);
        max_err = max_err.max(relative_error(*a, n));
    }
    max_err
}

/// Minibatch SGD on MSE. Targets are standardized against this dataset;
/// the constants are stored in the returned model. Returns per-epoch mean
/// training loss (standardized space).
pub fn train(
    model: &MlpModel,
    data: &[ResultRecord],
    cfg: &TrainConfig,
) -> Result<(MlpModel, Vec<f64>), SurrogateError> {
    let mut model = model.clone();
    if cfg.epochs == 0 {
        return Ok((model, Vec::new()));
    }
    if data.len() < cfg.batch_size {
        return Err(SurrogateError::InsufficientData {
            len: data.len(),
            batch_size: cfg.batch_size,
        });
    }
    let n = data.len() as f64;
    let mean = data.iter().map(|r| r.best_reward).sum::<f64>() / n;
    let var = data.iter().map(|r| (r.best_reward - mean).powi(2)).sum::<f64>() / n;
    model.target_mean = mean;
    model.target_std = var.sqrt().max(1e-8);

    let mut rng = stream_rng(cfg.seed, "surrogate/train", 0);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut batch_grads = Gradients::zeros_like(&model);
            for &i in batch {
                let record = &data[i];
                let cache = model.forward_cache(&record.shaping.0, Some(&mut rng));
                let t = (record.best_reward - model.target_mean) / model.target_std;
                let (loss, grads) = loss_and_grads_from_cache(&model, &cache, t);
                loss_sum += loss;
                batch_grads.add_scaled(&grads, 1.0 / batch.len() as f64);
            }
            for (layer, (gw, gb)) in model.layers.iter_mut().zip(&batch_grads.layers) {
                for (w, g) in layer.weights.iter_mut().zip(gw) {
                    *w -= cfg.learning_rate * g;
                }
                for (b, g) in layer.biases.iter_mut().zip(gb) {
                    *b -= cfg.learning_rate * g;
                }
            }
        }
        let epoch_loss = loss_sum / n;
        if !epoch_loss.is_finite() || epoch_loss > 1e6 {
            return Err(SurrogateError::NonFiniteLoss { epoch, loss: epoch_loss });
        }
        history.push(epoch_loss);
    }
    Ok((model, history))
}

/// Uniform-random candidate pool shared by selection and its tests.
pub fn generate_candidates(n: usize, seed: u64) -> Vec<ShapingVector> {
    let mut rng = stream_rng(seed, "surrogate/candidates", 0);
    (0..n)
        .map(|_| {
            let mut v = [0.0; NUM_FEATURES];
            for w in v.iter_mut() {
                *w = rng.random::<f64>() * 10.0;
            }
            ShapingVector(v)
        })
        .collect()
}

/// Trains on the records, scores `n_candidates` random shapings, and keeps
/// the top `p` by predicted reward (ties broken by generation index).
pub fn surrogate_select(
    data: &[ResultRecord],
    p: usize,
    n_candidates: usize,
    seed: u64,
) -> Result<ShapingSet, SurrogateError> {
    if p < 1 || p > n_candidates {
        return Err(SurrogateError::InvalidCount { p, n_candidates });
    }
    let cfg = TrainConfig { seed: crate::rng::substream(seed, "surrogate/train-seed", 0), ..TrainConfig::default() };
    let model = init_mlp(crate::rng::substream(seed, "surrogate/init-seed", 0));
    let (model, _history) = train(&model, data, &cfg)?;
    let candidates = generate_candidates(n_candidates, seed);
    let scores: Vec<f64> = candidates.iter().map(|c| model.predict(c)).collect();
    let mut order: Vec<usize> = (0..n_candidates).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let shapings = order[..p].iter().map(|&i| candidates[i]).collect();
    Ok(ShapingSet::new(SelectionMethod::Surrogate, seed, shapings))
}

/// Parses the historical-results JSON list, validating every shaping.
pub fn parse_results(text: &str) -> Result<Vec<ResultRecord>, SurrogateError> {
    let records: Vec<ResultRecord> = serde_json::from_str(text)?;
    for (index, record) in records.iter().enumerate() {
        let violations = record_violations(record);
        if !violations.is_empty() {
            let reasons =
                violations.iter().map(Violation::to_string).collect::<Vec<_>>().join("; ");
            return Err(SurrogateError::InvalidRecord { index, reasons });
        }
    }
    Ok(records)
}

fn record_violations(record: &ResultRecord) -> Vec<Violation> {
    let probe = ShapingSet {
        method: SelectionMethod::Fixed,
        seed: 0,
        shapings: vec![record.shaping],
        created_at: 0,
    };
    validate_shaping_set(&probe)
}

pub fn load_results(path: &Path) -> Result<Vec<ResultRecord>, SurrogateError> {
    parse_results(&std::fs::read_to_string(path)?)
}
