//! Small feed-forward regression network with deterministic training.
//!
//! Hidden layers use tanh so the fitted surface is smooth everywhere —
//! the simulator differentiates the network analytically for its
//! conductance and capacitance stamps. Training is plain mini-batch
//! Adam on mean-squared error; everything is a pure function of the
//! seed, so two runs produce bit-identical weights.

use crate::dataset::{Dataset, InputNorm, RegionTag, TransformDescriptor};
use crate::refdev::Polarity;
use crate::util::to_json_17;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file error: {0}")]
    Format(String),
}

/// Network shape: 3 inputs, tanh hidden layers, 3 linear outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MLPSpec {
    pub layer_sizes: Vec<usize>,
}

impl Default for MLPSpec {
    fn default() -> Self {
        MLPSpec {
            layer_sizes: vec![3, 32, 32, 3],
        }
    }
}

impl MLPSpec {
    pub fn hidden(widths: &[usize]) -> Self {
        let mut sizes = vec![3];
        sizes.extend_from_slice(widths);
        sizes.push(3);
        MLPSpec { layer_sizes: sizes }
    }

    pub fn validate(&self) -> Result<(), MlpError> {
        let n = self.layer_sizes.len();
        if n < 3 {
            return Err(MlpError::Config(
                "network needs at least one hidden layer".into(),
            ));
        }
        if self.layer_sizes[0] != 3 || self.layer_sizes[n - 1] != 3 {
            return Err(MlpError::Config(format!(
                "expected 3 inputs and 3 outputs, got {:?}",
                self.layer_sizes
            )));
        }
        if self.layer_sizes.iter().any(|&s| s == 0) {
            return Err(MlpError::Config("zero-width layer".into()));
        }
        Ok(())
    }

    pub fn hidden_layer_count(&self) -> usize {
        self.layer_sizes.len() - 2
    }

    pub fn max_width(&self) -> usize {
        *self.layer_sizes.iter().max().unwrap_or(&0)
    }
}

/// One affine layer, weights stored row-major (rows = outputs).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Layer {
            rows,
            cols,
            w: vec![0.0; rows * cols],
            b: vec![0.0; rows],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MLPParams {
    pub spec: MLPSpec,
    pub layers: Vec<Layer>,
}

/// Xavier-uniform initialization (bound sqrt(6/(fan_in+fan_out))),
/// zero biases; deterministic in `seed`.
pub fn init(spec: &MLPSpec, seed: u64) -> Result<MLPParams, MlpError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    for win in spec.layer_sizes.windows(2) {
        let (fan_in, fan_out) = (win[0], win[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut layer = Layer::zeros(fan_out, fan_in);
        for w in layer.w.iter_mut() {
            *w = bound * (2.0 * rng.gen::<f64>() - 1.0);
        }
        layers.push(layer);
    }
    Ok(MLPParams {
        spec: spec.clone(),
        layers,
    })
}

impl MLPParams {
    /// Plain forward pass: affine + tanh on hidden layers, identity on
    /// the output layer.
    pub fn forward(&self, x: [f64; 3]) -> [f64; 3] {
        let mut cur: Vec<f64> = x.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.rows];
            for r in 0..layer.rows {
                let row = &layer.w[r * layer.cols..(r + 1) * layer.cols];
                let mut acc = layer.b[r];
                for (w, a) in row.iter().zip(&cur) {
                    acc += w * a;
                }
                next[r] = if li == last { acc } else { acc.tanh() };
            }
            cur = next;
        }
        [cur[0], cur[1], cur[2]]
    }

    /// Exact derivative of `forward` with respect to the inputs,
    /// a 3x3 matrix with rows = outputs, cols = inputs.
    pub fn input_jacobian(&self, x: [f64; 3]) -> [[f64; 3]; 3] {
        // Propagate a (width x 3) sensitivity matrix through the net.
        let mut cur: Vec<f64> = x.to_vec();
        let mut sens: Vec<[f64; 3]> = vec![
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ];
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.rows];
            let mut next_sens = vec![[0.0; 3]; layer.rows];
            for r in 0..layer.rows {
                let row = &layer.w[r * layer.cols..(r + 1) * layer.cols];
                let mut acc = layer.b[r];
                let mut ds = [0.0; 3];
                for (c, (w, a)) in row.iter().zip(&cur).enumerate() {
                    acc += w * a;
                    for k in 0..3 {
                        ds[k] += w * sens[c][k];
                    }
                    let _ = c;
                }
                if li == last {
                    next[r] = acc;
                    next_sens[r] = ds;
                } else {
                    let t = acc.tanh();
                    let g = 1.0 - t * t;
                    next[r] = t;
                    next_sens[r] = [g * ds[0], g * ds[1], g * ds[2]];
                }
            }
            cur = next;
            sens = next_sens;
        }
        [sens[0], sens[1], sens[2]]
    }
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Per-epoch multiplicative learning-rate decay (1.0 = constant).
    pub lr_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub target_loss: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            lr_decay: 0.9993,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 256,
            max_epochs: 5000,
            target_loss: 1e-7,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MlpError> {
        if !(self.learning_rate >= 0.0)
            || !(self.beta1 > 0.0 && self.beta1 < 1.0)
            || !(self.beta2 > 0.0 && self.beta2 < 1.0)
            || self.batch_size == 0
        {
            return Err(MlpError::Config(format!("invalid train config {self:?}")));
        }
        Ok(())
    }
}

/// Pre-normalized training arrays.
struct Prepared {
    inputs: Vec<[f64; 3]>,
    targets: Vec<[f64; 3]>,
}

fn prepare(ds: &Dataset) -> Prepared {
    Prepared {
        inputs: ds
            .samples
            .iter()
            .map(|s| ds.input_norm.normalize(s.bias))
            .collect(),
        targets: ds.samples.iter().map(|s| s.targets).collect(),
    }
}

/// Scratch space reused across samples during training.
struct Scratch {
    /// Activations per layer (index 0 = input).
    acts: Vec<Vec<f64>>,
    /// Backpropagated deltas per layer output.
    deltas: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(spec: &MLPSpec) -> Self {
        Scratch {
            acts: spec.layer_sizes.iter().map(|&s| vec![0.0; s]).collect(),
            deltas: spec.layer_sizes[1..]
                .iter()
                .map(|&s| vec![0.0; s])
                .collect(),
        }
    }
}

fn forward_cached(p: &MLPParams, x: &[f64; 3], scratch: &mut Scratch) {
    scratch.acts[0][..3].copy_from_slice(x);
    let last = p.layers.len() - 1;
    for (li, layer) in p.layers.iter().enumerate() {
        let (prev, rest) = scratch.acts.split_at_mut(li + 1);
        let prev = &prev[li];
        let out = &mut rest[0];
        for r in 0..layer.rows {
            let row = &layer.w[r * layer.cols..(r + 1) * layer.cols];
            let mut acc = layer.b[r];
            for (w, a) in row.iter().zip(prev.iter()) {
                acc += w * a;
            }
            out[r] = if li == last { acc } else { acc.tanh() };
        }
    }
}

/// Mean-squared error over all samples and outputs.
fn full_mse(p: &MLPParams, data: &Prepared) -> f64 {
    let mut acc = 0.0;
    for (x, t) in data.inputs.iter().zip(&data.targets) {
        let y = p.forward(*x);
        for k in 0..3 {
            let e = y[k] - t[k];
            acc += e * e;
        }
    }
    acc / (data.inputs.len() as f64 * 3.0)
}

/// Accumulates MSE gradients for one batch into `grads`; returns the
/// batch loss. Gradients and loss use mean over (batch x outputs).
fn batch_gradients(
    p: &MLPParams,
    data: &Prepared,
    batch: &[usize],
    scratch: &mut Scratch,
    grads: &mut [Layer],
) -> f64 {
    for g in grads.iter_mut() {
        g.w.fill(0.0);
        g.b.fill(0.0);
    }
    let scale = 1.0 / (batch.len() as f64 * 3.0);
    let mut loss = 0.0;
    let n_layers = p.layers.len();
    for &si in batch {
        forward_cached(p, &data.inputs[si], scratch);
        // Output delta.
        let target = &data.targets[si];
        for k in 0..3 {
            let e = scratch.acts[n_layers][k] - target[k];
            loss += e * e * scale;
            scratch.deltas[n_layers - 1][k] = 2.0 * e * scale;
        }
        // Backward through layers.
        for li in (0..n_layers).rev() {
            let layer = &p.layers[li];
            // Weight/bias gradients for this layer.
            {
                let g = &mut grads[li];
                let delta = &scratch.deltas[li];
                let prev = &scratch.acts[li];
                for r in 0..layer.rows {
                    let d = delta[r];
                    g.b[r] += d;
                    let grow = &mut g.w[r * layer.cols..(r + 1) * layer.cols];
                    for (gw, a) in grow.iter_mut().zip(prev.iter()) {
                        *gw += d * a;
                    }
                }
            }
            // Delta for the previous layer (skip at the input).
            if li > 0 {
                let (lower, upper) = scratch.deltas.split_at_mut(li);
                let delta = &upper[0];
                let prev_delta = &mut lower[li - 1];
                prev_delta.fill(0.0);
                for r in 0..layer.rows {
                    let d = delta[r];
                    let row = &layer.w[r * layer.cols..(r + 1) * layer.cols];
                    for (pd, w) in prev_delta.iter_mut().zip(row.iter()) {
                        *pd += d * w;
                    }
                }
                let act = &scratch.acts[li];
                for (pd, a) in prev_delta.iter_mut().zip(act.iter()) {
                    *pd *= 1.0 - a * a;
                }
            }
        }
    }
    loss
}

/// Mini-batch Adam on MSE. Returns the trained parameters and the
/// per-epoch full-dataset loss history. Stops at `max_epochs` or when
/// the epoch loss reaches `target_loss`.
pub fn train(
    p0: &MLPParams,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<(MLPParams, Vec<f64>), MlpError> {
    cfg.validate()?;
    if ds.samples.is_empty() {
        return Err(MlpError::Config("empty training dataset".into()));
    }
    let data = prepare(ds);
    let mut p = p0.clone();
    let mut scratch = Scratch::new(&p.spec);

    let mut grads: Vec<Layer> = p
        .layers
        .iter()
        .map(|l| Layer::zeros(l.rows, l.cols))
        .collect();
    let mut m: Vec<Layer> = grads.clone();
    let mut v: Vec<Layer> = grads.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.inputs.len()).collect();
    let mut history = Vec::new();
    let mut step = 0u64;

    let mut lr = cfg.learning_rate;
    for epoch in 0..cfg.max_epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let loss = batch_gradients(&p, &data, batch, &mut scratch, &mut grads);
            if !loss.is_finite() {
                return Err(MlpError::Diverged { epoch });
            }
            step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(step as i32);
            let bc2 = 1.0 - cfg.beta2.powi(step as i32);
            for (li, layer) in p.layers.iter_mut().enumerate() {
                let g = &grads[li];
                let (ml, vl) = (&mut m[li], &mut v[li]);
                for i in 0..layer.w.len() {
                    ml.w[i] = cfg.beta1 * ml.w[i] + (1.0 - cfg.beta1) * g.w[i];
                    vl.w[i] = cfg.beta2 * vl.w[i] + (1.0 - cfg.beta2) * g.w[i] * g.w[i];
                    layer.w[i] -= lr * (ml.w[i] / bc1)
                        / ((vl.w[i] / bc2).sqrt() + cfg.epsilon);
                }
                for i in 0..layer.b.len() {
                    ml.b[i] = cfg.beta1 * ml.b[i] + (1.0 - cfg.beta1) * g.b[i];
                    vl.b[i] = cfg.beta2 * vl.b[i] + (1.0 - cfg.beta2) * g.b[i] * g.b[i];
                    layer.b[i] -= lr * (ml.b[i] / bc1)
                        / ((vl.b[i] / bc2).sqrt() + cfg.epsilon);
                }
            }
        }
        let epoch_loss = full_mse(&p, &data);
        if !epoch_loss.is_finite() {
            return Err(MlpError::Diverged { epoch });
        }
        history.push(epoch_loss);
        if epoch_loss <= cfg.target_loss {
            break;
        }
        lr *= cfg.lr_decay;
    }
    Ok((p, history))
}

/// One row of the architecture sweep table.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub hidden_layers: usize,
    pub neurons: usize,
    pub final_train_mse: f64,
    pub heldout_mse: f64,
}

/// Trains each spec independently from a seeded init and reports train
/// and held-out MSE. Entries are independent, so they may run on the
/// current rayon pool; row order follows `specs`.
pub fn hyperparam_sweep(
    train_ds: &Dataset,
    heldout_ds: &Dataset,
    specs: &[MLPSpec],
    cfg: &TrainConfig,
) -> Result<Vec<SweepRow>, MlpError> {
    if specs.is_empty() {
        return Err(MlpError::Config("no specs to sweep".into()));
    }
    let heldout = prepare(heldout_ds);
    specs
        .par_iter()
        .map(|spec| {
            let p0 = init(spec, cfg.seed)?;
            let (p, history) = train(&p0, train_ds, cfg)?;
            Ok(SweepRow {
                hidden_layers: spec.hidden_layer_count(),
                neurons: spec.max_width(),
                final_train_mse: *history.last().expect("non-empty history"),
                heldout_mse: full_mse(&p, &heldout),
            })
        })
        .collect()
}

/// Evaluates MSE of a trained net on a dataset (transformed space).
pub fn dataset_mse(p: &MLPParams, ds: &Dataset) -> f64 {
    full_mse(p, &prepare(ds))
}

/// Everything besides weights that a deployed model needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub transform: TransformDescriptor,
    pub input_norm: InputNorm,
    pub region_tag: RegionTag,
    pub polarity: Polarity,
}

/// On-disk schema of a single trained network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRecord {
    pub version: u32,
    pub spec: MLPSpec,
    /// Per layer, row-major nested arrays (rows = outputs).
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    pub transform: TransformDescriptor,
    pub input_norm: InputNorm,
    pub region_tag: RegionTag,
    pub polarity: Polarity,
}

impl ModelRecord {
    pub fn from_params(p: &MLPParams, meta: &ModelMeta) -> Self {
        ModelRecord {
            version: MODEL_FILE_VERSION,
            spec: p.spec.clone(),
            weights: p
                .layers
                .iter()
                .map(|l| {
                    (0..l.rows)
                        .map(|r| l.w[r * l.cols..(r + 1) * l.cols].to_vec())
                        .collect()
                })
                .collect(),
            biases: p.layers.iter().map(|l| l.b.clone()).collect(),
            transform: meta.transform,
            input_norm: meta.input_norm,
            region_tag: meta.region_tag,
            polarity: meta.polarity,
        }
    }

    pub fn into_params(self) -> Result<(MLPParams, ModelMeta), MlpError> {
        if self.version != MODEL_FILE_VERSION {
            return Err(MlpError::Format(format!(
                "unsupported model file version {} (expected {MODEL_FILE_VERSION})",
                self.version
            )));
        }
        self.spec.validate()?;
        if self.weights.len() != self.spec.layer_sizes.len() - 1
            || self.biases.len() != self.weights.len()
        {
            return Err(MlpError::Format("layer count mismatch".into()));
        }
        let mut layers = Vec::new();
        for (li, win) in self.spec.layer_sizes.windows(2).enumerate() {
            let (cols, rows) = (win[0], win[1]);
            let wl = &self.weights[li];
            let bl = &self.biases[li];
            if wl.len() != rows || bl.len() != rows || wl.iter().any(|r| r.len() != cols) {
                return Err(MlpError::Format(format!(
                    "layer {li} shape mismatch (expected {rows}x{cols})"
                )));
            }
            let mut layer = Layer::zeros(rows, cols);
            for (r, row) in wl.iter().enumerate() {
                layer.w[r * cols..(r + 1) * cols].copy_from_slice(row);
            }
            layer.b.copy_from_slice(bl);
            if layer.w.iter().chain(layer.b.iter()).any(|x| !x.is_finite()) {
                return Err(MlpError::Format(format!("non-finite weight in layer {li}")));
            }
            layers.push(layer);
        }
        Ok((
            MLPParams {
                spec: self.spec,
                layers,
            },
            ModelMeta {
                transform: self.transform,
                input_norm: self.input_norm,
                region_tag: self.region_tag,
                polarity: self.polarity,
            },
        ))
    }
}

/// Serializes a trained network and its metadata as JSON (floats at
/// 17 significant digits).
pub fn save_model(path: &Path, p: &MLPParams, meta: &ModelMeta) -> Result<(), MlpError> {
    let record = ModelRecord::from_params(p, meta);
    let json = to_json_17(&record).map_err(|e| MlpError::Format(e.to_string()))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(MLPParams, ModelMeta), MlpError> {
    let text = fs::read_to_string(path)?;
    let record: ModelRecord =
        serde_json::from_str(&text).map_err(|e| MlpError::Format(e.to_string()))?;
    record.into_params()
}
