//! From-scratch MLP: manual backpropagation through the activation
//! catalog, softmax cross-entropy, Adam, and optional pre-activation
//! batch normalization.
//!
//! Hidden layers compute `x^l = f(W^l x^{l-1} + b^l)` (BN, when enabled,
//! sits between the affine map and `f`); the final layer emits raw
//! logits. Training is a single logical sequence; all shuffling comes
//! from seeded substreams so a fixed seed reproduces the run bit for bit.

use ndarray::{Array1, Array2, Axis};
use serde::Serialize;

use crate::activations::ActivationSpec;
use crate::data::{self, DataError, Dataset};
use crate::initializers::{self, InitError, InitScheme};
use crate::rng::substream;

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("batch normalization needs at least 2 samples per training batch")]
    BatchTooSmall,
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    WeightIo(#[from] InitError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture plus initialization of one network.
#[derive(Clone, Debug)]
pub struct NetworkConfig {
    /// `[N_0, ..., N_L]`; the last width is the class count.
    pub layer_widths: Vec<usize>,
    /// Hidden-layer activation; the output layer is linear + softmax.
    pub activation: ActivationSpec,
    pub init: InitScheme,
    pub batch_norm: bool,
    /// Seed for shuffling and the validation split (weights draw from
    /// `init.seed`).
    pub seed: u64,
}

/// Optimization hyperparameters (Adam).
#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub val_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl TrainConfig {
    pub fn new(lr: f64, epochs: usize) -> Self {
        Self {
            lr,
            batch_size: 128,
            epochs,
            val_fraction: 0.15,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Margin over chance accuracy that counts as having learned.
pub const LEARNED_MARGIN: f64 = 0.05;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EpochMetrics {
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub best_val_acc: f64,
    /// Chance accuracy for the class count (0.1 for ten classes).
    pub chance: f64,
    /// `best_val_acc >= chance + 0.05`.
    pub learned: bool,
}

const BN_EPS: f64 = 1e-3;
const BN_MOMENTUM: f64 = 0.99;

#[derive(Clone, Debug)]
struct BnParams {
    gamma: Array1<f64>,
    beta: Array1<f64>,
    running_mean: Array1<f64>,
    running_var: Array1<f64>,
}

impl BnParams {
    fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

/// Batch-normalization mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

struct BnCache {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Standard per-feature batch normalization on pre-activations.
/// Training mode normalizes with batch statistics and folds them into
/// the running averages; eval mode uses the running averages.
pub fn batch_norm_layer(
    x: &Array2<f64>,
    params: &mut BnLayer,
    mode: BnMode,
) -> Result<Array2<f64>, NetworkError> {
    let (out, _) = bn_forward(x, &mut params.0, mode)?;
    Ok(out)
}

/// Opaque handle to one layer's BN parameters, for the public
/// [`batch_norm_layer`] entry point.
pub struct BnLayer(BnParams);

impl BnLayer {
    pub fn new(width: usize) -> Self {
        Self(BnParams::new(width))
    }

    pub fn running_stats(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.0.running_mean.to_vec(),
            self.0.running_var.to_vec(),
        )
    }
}

fn bn_forward(
    x: &Array2<f64>,
    params: &mut BnParams,
    mode: BnMode,
) -> Result<(Array2<f64>, Option<BnCache>), NetworkError> {
    let b = x.nrows() as f64;
    match mode {
        BnMode::Train => {
            if x.nrows() < 2 {
                return Err(NetworkError::BatchTooSmall);
            }
            let mean = x.mean_axis(Axis(0)).expect("nonempty batch");
            let centered = x - &mean;
            let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / b;
            let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let x_hat = &centered * &inv_std;
            let out = &x_hat * &params.gamma + &params.beta;
            params.running_mean = &params.running_mean * BN_MOMENTUM + &(&mean * (1.0 - BN_MOMENTUM));
            params.running_var = &params.running_var * BN_MOMENTUM + &(&var * (1.0 - BN_MOMENTUM));
            Ok((out, Some(BnCache { x_hat, inv_std })))
        }
        BnMode::Eval => {
            let inv_std = params.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let x_hat = (x - &params.running_mean) * &inv_std;
            Ok(((&x_hat * &params.gamma) + &params.beta, None))
        }
    }
}

fn bn_backward(
    d_out: &Array2<f64>,
    cache: &BnCache,
    params: &BnParams,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let b = d_out.nrows() as f64;
    let d_beta = d_out.sum_axis(Axis(0));
    let d_gamma = (d_out * &cache.x_hat).sum_axis(Axis(0));
    let d_x_hat = d_out * &params.gamma;
    let sum_dxhat = d_x_hat.sum_axis(Axis(0));
    let sum_dxhat_xhat = (&d_x_hat * &cache.x_hat).sum_axis(Axis(0));
    let d_x = (&(&d_x_hat * b) - &sum_dxhat - &(&cache.x_hat * &sum_dxhat_xhat))
        * &cache.inv_std
        / b;
    (d_x, d_gamma, d_beta)
}

struct LayerCache {
    /// Input to the layer's affine map.
    input: Array2<f64>,
    /// What the activation sees (pre-activation, after BN if enabled).
    act_in: Array2<f64>,
    bn: Option<BnCache>,
}

struct ForwardCache {
    layers: Vec<LayerCache>,
    /// Input to the output layer.
    last_hidden: Array2<f64>,
}

/// Gradients for every parameter tensor of the network.
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub bn_gamma: Vec<Array1<f64>>,
    pub bn_beta: Vec<Array1<f64>>,
}

/// A materialized network: weights, biases, and optional BN state.
pub struct Network {
    pub config: NetworkConfig,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    bn: Vec<BnParams>,
}

impl Network {
    /// Builds the network: layer `l` draws from the init scheme's
    /// `(seed, l)` substreams, biases start at zero.
    pub fn new(config: NetworkConfig) -> Result<Self, NetworkError> {
        if config.layer_widths.len() < 2 {
            return Err(NetworkError::BadConfig(
                "need at least an input and an output width".into(),
            ));
        }
        if config.layer_widths.iter().any(|&w| w == 0) {
            return Err(NetworkError::BadConfig("zero-width layer".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 1..config.layer_widths.len() {
            let rows = config.layer_widths[l];
            let cols = config.layer_widths[l - 1];
            weights.push(config.init.init_layer(rows, cols, (l - 1) as u64));
            biases.push(Array1::zeros(rows));
        }
        let bn = if config.batch_norm {
            (1..config.layer_widths.len() - 1)
                .map(|l| BnParams::new(config.layer_widths[l]))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self { config, weights, biases, bn })
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    fn check_batch(&self, batch: &Array2<f64>) -> Result<(), NetworkError> {
        let expected = self.config.layer_widths[0];
        if batch.ncols() != expected {
            return Err(NetworkError::ShapeMismatch {
                expected: format!("batch with {expected} features"),
                got: format!("{} features", batch.ncols()),
            });
        }
        Ok(())
    }

    fn forward_internal(
        &mut self,
        batch: &Array2<f64>,
        mode: BnMode,
    ) -> Result<(Array2<f64>, ForwardCache), NetworkError> {
        self.check_batch(batch)?;
        let n_layers = self.weights.len();
        let mut layers = Vec::with_capacity(n_layers - 1);
        let mut h = batch.clone();
        for l in 0..n_layers - 1 {
            let pre = h.dot(&self.weights[l].t()) + &self.biases[l];
            let (act_in, bn_cache) = if self.config.batch_norm {
                let (out, cache) = bn_forward(&pre, &mut self.bn[l], mode)?;
                (out, cache)
            } else {
                (pre, None)
            };
            let activated = act_in.mapv(|v| self.config.activation.eval(v));
            layers.push(LayerCache { input: h, act_in, bn: bn_cache });
            h = activated;
        }
        let logits = h.dot(&self.weights[n_layers - 1].t()) + &self.biases[n_layers - 1];
        Ok((logits, ForwardCache { layers, last_hidden: h }))
    }

    /// Training-mode forward pass returning raw logits. BN running
    /// statistics are updated as a side effect.
    pub fn forward(&mut self, batch: &Array2<f64>) -> Result<Array2<f64>, NetworkError> {
        Ok(self.forward_internal(batch, BnMode::Train)?.0)
    }

    /// Inference-mode forward pass (BN uses running statistics).
    pub fn forward_eval(&mut self, batch: &Array2<f64>) -> Result<Array2<f64>, NetworkError> {
        Ok(self.forward_internal(batch, BnMode::Eval)?.0)
    }

    /// Mean softmax cross-entropy and exact gradients for every
    /// parameter tensor.
    pub fn loss_and_grads(
        &mut self,
        batch: &Array2<f64>,
        labels: &[u8],
    ) -> Result<(f64, Gradients), NetworkError> {
        let (loss, _, grads) = self.loss_grads_counting(batch, labels)?;
        Ok((loss, grads))
    }

    fn loss_grads_counting(
        &mut self,
        batch: &Array2<f64>,
        labels: &[u8],
    ) -> Result<(f64, usize, Gradients), NetworkError> {
        if labels.len() != batch.nrows() {
            return Err(NetworkError::ShapeMismatch {
                expected: format!("{} labels", batch.nrows()),
                got: format!("{}", labels.len()),
            });
        }
        let classes = *self.config.layer_widths.last().expect("validated");
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(NetworkError::ShapeMismatch {
                expected: format!("labels below {classes}"),
                got: format!("label {bad}"),
            });
        }
        let (logits, cache) = self.forward_internal(batch, BnMode::Train)?;
        let (loss, correct, mut d_logits) = softmax_cross_entropy(&logits, labels);

        let n_layers = self.weights.len();
        let mut g_w = vec![Array2::zeros((0, 0)); n_layers];
        let mut g_b = vec![Array1::zeros(0); n_layers];
        let mut g_gamma = Vec::new();
        let mut g_beta = Vec::new();
        if self.config.batch_norm {
            g_gamma = vec![Array1::zeros(0); n_layers - 1];
            g_beta = vec![Array1::zeros(0); n_layers - 1];
        }

        g_w[n_layers - 1] = d_logits.t().dot(&cache.last_hidden);
        g_b[n_layers - 1] = d_logits.sum_axis(Axis(0));
        let mut d_h = d_logits.dot(&self.weights[n_layers - 1]);

        for l in (0..n_layers - 1).rev() {
            let layer = &cache.layers[l];
            let d_act_in =
                &d_h * &layer.act_in.mapv(|v| self.config.activation.deriv(v));
            let d_pre = if let Some(bn_cache) = &layer.bn {
                let (d_pre, d_gamma, d_beta) = bn_backward(&d_act_in, bn_cache, &self.bn[l]);
                g_gamma[l] = d_gamma;
                g_beta[l] = d_beta;
                d_pre
            } else {
                d_act_in
            };
            g_w[l] = d_pre.t().dot(&layer.input);
            g_b[l] = d_pre.sum_axis(Axis(0));
            if l > 0 {
                d_h = d_pre.dot(&self.weights[l]);
            } else {
                d_logits = d_pre; // keep the borrow checker quiet; unused
            }
        }
        let _ = d_logits;
        Ok((
            loss,
            correct,
            Gradients { weights: g_w, biases: g_b, bn_gamma: g_gamma, bn_beta: g_beta },
        ))
    }

    /// Average loss and accuracy in eval mode.
    pub fn evaluate(
        &mut self,
        images: &Array2<f64>,
        labels: &[u8],
        batch_size: usize,
    ) -> Result<(f64, f64), NetworkError> {
        let n = labels.len();
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut start = 0;
        while start < n {
            let end = (start + batch_size).min(n);
            let batch = images.slice(ndarray::s![start..end, ..]).to_owned();
            let logits = self.forward_eval(&batch)?;
            let (loss, c, _) = softmax_cross_entropy(&logits, &labels[start..end]);
            loss_sum += loss * (end - start) as f64;
            correct += c;
            start = end;
        }
        Ok((loss_sum / n as f64, correct as f64 / n as f64))
    }

    /// Writes the checkpoint: a binary file of concatenated weight
    /// containers (per layer: W then b; then BN gamma/beta/mean/var when
    /// enabled) plus a JSON manifest next to it.
    pub fn save_checkpoint(&self, prefix: &std::path::Path) -> Result<(), NetworkError> {
        use std::io::BufWriter;
        let weights_path = prefix.with_extension("weights");
        let mut w = BufWriter::new(std::fs::File::create(&weights_path)?);
        for l in 0..self.weights.len() {
            initializers::write_weight_matrix(&mut w, &self.weights[l])?;
            initializers::write_weight_vector(&mut w, &self.biases[l])?;
        }
        for bn in &self.bn {
            initializers::write_weight_vector(&mut w, &bn.gamma)?;
            initializers::write_weight_vector(&mut w, &bn.beta)?;
            initializers::write_weight_vector(&mut w, &bn.running_mean)?;
            initializers::write_weight_vector(&mut w, &bn.running_var)?;
        }
        drop(w);
        let manifest = serde_json::json!({
            "layer_widths": self.config.layer_widths,
            "activation": self.config.activation.to_string(),
            "batch_norm": self.config.batch_norm,
            "seed": self.config.seed,
            "weights_file": weights_path.file_name().map(|s| s.to_string_lossy().into_owned()),
        });
        std::fs::write(
            prefix.with_extension("json"),
            serde_json::to_string_pretty(&manifest).expect("static manifest"),
        )?;
        Ok(())
    }

    /// Reloads weights saved by [`Network::save_checkpoint`] into a
    /// network of the same configuration.
    pub fn load_weights(&mut self, prefix: &std::path::Path) -> Result<(), NetworkError> {
        use std::io::BufReader;
        let mut r = BufReader::new(std::fs::File::open(prefix.with_extension("weights"))?);
        for l in 0..self.weights.len() {
            self.weights[l] = initializers::read_weight_matrix(&mut r)?;
            self.biases[l] = initializers::read_weight_matrix(&mut r)?.row(0).to_owned();
        }
        for bn in self.bn.iter_mut() {
            bn.gamma = initializers::read_weight_matrix(&mut r)?.row(0).to_owned();
            bn.beta = initializers::read_weight_matrix(&mut r)?.row(0).to_owned();
            bn.running_mean = initializers::read_weight_matrix(&mut r)?.row(0).to_owned();
            bn.running_var = initializers::read_weight_matrix(&mut r)?.row(0).to_owned();
        }
        Ok(())
    }
}

/// Worst relative gap between the analytic gradients and central finite
/// differences (step 1e-4) over a probe of weight entries, every bias,
/// and every BN scale. The relative denominator floors at 1e-2: the
/// finite differences themselves carry ~2e-8 of truncation and
/// cancellation noise, far below what any backprop defect produces on
/// entries of that size.
pub fn finite_difference_worst_error(
    net: &mut Network,
    batch: &Array2<f64>,
    labels: &[u8],
    grads: &Gradients,
) -> f64 {
    let h = 1e-4;
    let mut worst = 0.0_f64;
    let mut compare = |numeric: f64, analytic: f64| {
        let denom = numeric.abs().max(analytic.abs()).max(1e-2);
        (numeric - analytic).abs() / denom
    };
    let mut loss_at = |net: &mut Network| net.loss_and_grads(batch, labels).unwrap().0;
    for l in 0..net.weights.len() {
        let dims = net.weights[l].dim();
        for probe in 0..12 {
            let i = probe % dims.0;
            let j = (probe * 3) % dims.1;
            let orig = net.weights[l][(i, j)];
            net.weights[l][(i, j)] = orig + h;
            let lp = loss_at(net);
            net.weights[l][(i, j)] = orig - h;
            let lm = loss_at(net);
            net.weights[l][(i, j)] = orig;
            worst = worst.max(compare((lp - lm) / (2.0 * h), grads.weights[l][(i, j)]));
        }
        for i in 0..net.biases[l].len() {
            let orig = net.biases[l][i];
            net.biases[l][i] = orig + h;
            let lp = loss_at(net);
            net.biases[l][i] = orig - h;
            let lm = loss_at(net);
            net.biases[l][i] = orig;
            worst = worst.max(compare((lp - lm) / (2.0 * h), grads.biases[l][i]));
        }
    }
    for l in 0..net.bn.len() {
        for i in 0..net.bn[l].gamma.len() {
            let orig = net.bn[l].gamma[i];
            net.bn[l].gamma[i] = orig + h;
            let lp = loss_at(net);
            net.bn[l].gamma[i] = orig - h;
            let lm = loss_at(net);
            net.bn[l].gamma[i] = orig;
            worst = worst.max(compare((lp - lm) / (2.0 * h), grads.bn_gamma[l][i]));
        }
    }
    worst
}

/// Mean cross-entropy, correct-prediction count, and `d loss / d logits`.
fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[u8]) -> (f64, usize, Array2<f64>) {
    let b = logits.nrows();
    let mut d = logits.clone();
    let mut loss = 0.0;
    let mut correct = 0;
    for (i, mut row) in d.axis_iter_mut(Axis(0)).enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut argmax = 0;
        for (j, v) in row.iter().enumerate() {
            if *v == max {
                argmax = j;
                break;
            }
        }
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let label = labels[i] as usize;
        loss += log_sum + max - row[label];
        if argmax == label {
            correct += 1;
        }
        for (j, v) in row.iter_mut().enumerate() {
            let p = (*v - max - log_sum).exp();
            *v = (p - f64::from(j == label)) / b as f64;
        }
    }
    (loss / b as f64, correct, d)
}

/// First and second moment accumulators for Adam, one pair per tensor.
pub struct AdamState {
    t: u64,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    m_g: Vec<Array1<f64>>,
    v_g: Vec<Array1<f64>>,
    m_beta: Vec<Array1<f64>>,
    v_beta: Vec<Array1<f64>>,
}

impl AdamState {
    pub fn new(net: &Network) -> Self {
        let zeros2 = |src: &Vec<Array2<f64>>| src.iter().map(|a| Array2::zeros(a.dim())).collect();
        let zeros1g = |net: &Network| {
            net.bn.iter().map(|p| Array1::zeros(p.gamma.len())).collect::<Vec<_>>()
        };
        Self {
            t: 0,
            m_w: zeros2(&net.weights),
            v_w: zeros2(&net.weights),
            m_b: net.biases.iter().map(|a| Array1::zeros(a.len())).collect(),
            v_b: net.biases.iter().map(|a| Array1::zeros(a.len())).collect(),
            m_g: zeros1g(net),
            v_g: zeros1g(net),
            m_beta: zeros1g(net),
            v_beta: zeros1g(net),
        }
    }
}

/// One bias-corrected Adam update on a flat parameter slice.
pub fn adam_update_slice(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..param.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Applies one Adam step to every parameter tensor of the network.
pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut AdamState, cfg: &TrainConfig) {
    state.t += 1;
    let t = state.t;
    for l in 0..net.weights.len() {
        adam_update_slice(
            net.weights[l].as_slice_mut().expect("standard layout"),
            grads.weights[l].as_slice().expect("standard layout"),
            state.m_w[l].as_slice_mut().expect("standard layout"),
            state.v_w[l].as_slice_mut().expect("standard layout"),
            t,
            cfg.lr,
            cfg.beta1,
            cfg.beta2,
            cfg.eps,
        );
        adam_update_slice(
            net.biases[l].as_slice_mut().expect("contiguous"),
            grads.biases[l].as_slice().expect("contiguous"),
            state.m_b[l].as_slice_mut().expect("contiguous"),
            state.v_b[l].as_slice_mut().expect("contiguous"),
            t,
            cfg.lr,
            cfg.beta1,
            cfg.beta2,
            cfg.eps,
        );
    }
    for l in 0..net.bn.len() {
        adam_update_slice(
            net.bn[l].gamma.as_slice_mut().expect("contiguous"),
            grads.bn_gamma[l].as_slice().expect("contiguous"),
            state.m_g[l].as_slice_mut().expect("contiguous"),
            state.v_g[l].as_slice_mut().expect("contiguous"),
            t,
            cfg.lr,
            cfg.beta1,
            cfg.beta2,
            cfg.eps,
        );
        adam_update_slice(
            net.bn[l].beta.as_slice_mut().expect("contiguous"),
            grads.bn_beta[l].as_slice().expect("contiguous"),
            state.m_beta[l].as_slice_mut().expect("contiguous"),
            state.v_beta[l].as_slice_mut().expect("contiguous"),
            t,
            cfg.lr,
            cfg.beta1,
            cfg.beta2,
            cfg.eps,
        );
    }
}

/// Splits the dataset (85/15 by default), trains for the configured
/// epochs with per-epoch seeded shuffles, and reports per-epoch metrics.
/// `learned` is `best_val_acc >= chance + 0.05`.
pub fn train(
    net_config: &NetworkConfig,
    train_config: &TrainConfig,
    dataset: &Dataset,
) -> Result<TrainReport, NetworkError> {
    let (train_set, val_set) =
        data::split_validation(dataset, train_config.val_fraction, net_config.seed)?;
    train_on_split(net_config, train_config, &train_set, &val_set)
}

/// Training loop over an explicit train/validation pair.
pub fn train_on_split(
    net_config: &NetworkConfig,
    train_config: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
) -> Result<TrainReport, NetworkError> {
    train_returning_network(net_config, train_config, train_set, val_set).map(|(r, _)| r)
}

/// Like [`train_on_split`], also handing back the trained network (for
/// checkpoint dumps).
pub fn train_returning_network(
    net_config: &NetworkConfig,
    train_config: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
) -> Result<(TrainReport, Network), NetworkError> {
    let mut net = Network::new(net_config.clone())?;
    let mut state = AdamState::new(&net);
    let mut epochs = Vec::with_capacity(train_config.epochs);
    let n = train_set.len();
    let classes = *net_config.layer_widths.last().expect("validated") as f64;
    let chance = 1.0 / classes;

    for epoch in 0..train_config.epochs {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..n).collect();
        // Epoch shuffles live in their own substream range, away from the
        // split stream at index 1.
        let mut rng = substream(net_config.seed, 1000 + epoch as u64);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut start = 0;
        while start < n {
            let end = (start + train_config.batch_size).min(n);
            let idx = &order[start..end];
            let batch = train_set.select(idx);
            let (loss, c, grads) = net.loss_grads_counting(&batch.images, &batch.labels)?;
            adam_step(&mut net, &grads, &mut state, train_config);
            loss_sum += loss * idx.len() as f64;
            correct += c;
            start = end;
        }
        let (val_loss, val_acc) =
            net.evaluate(&val_set.images, &val_set.labels, train_config.batch_size)?;
        epochs.push(EpochMetrics {
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            val_loss,
            val_acc,
        });
    }

    let best_val_acc = epochs.iter().map(|e| e.val_acc).fold(0.0, f64::max);
    let report = TrainReport {
        best_val_acc,
        chance,
        learned: best_val_acc >= chance + LEARNED_MARGIN,
        epochs,
    };
    Ok((report, net))
}
