//! Dense multilayer perceptron with ReLU hidden layers, cross-entropy heads
//! and an Adam optimizer, written against plain `Vec<f64>` buffers.
//!
//! Weights of a layer are stored `out x in`, row-major. Losses take raw
//! logits and return the mean loss together with its gradient with respect
//! to the logits, so `backward` only has to push that gradient through the
//! affine/ReLU stack.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::SampleSet;
use crate::error::{Error, Result};
use crate::metrics::{confusion, task_scores, Confusion, Section, Stopwatch};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MLP1";

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Validation(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Gathers the given rows into a new matrix.
    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// One affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn weight_row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }

    fn apply(&self, x: &Matrix, relu: bool) -> Matrix {
        let mut out = Matrix::zeros(x.rows, self.outputs);
        for n in 0..x.rows {
            let xr = x.row(n);
            let yr = out.row_mut(n);
            for (o, y) in yr.iter_mut().enumerate() {
                let z = self.bias[o] + dot(xr, self.weight_row(o));
                *y = if relu && z <= 0.0 { 0.0 } else { z };
            }
        }
        out
    }
}

/// Feed-forward network: ReLU after every layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Layer outputs kept from a forward pass for backpropagation.
#[derive(Debug)]
pub struct Trace<'a> {
    input: &'a Matrix,
    /// Output of each layer; hidden ones after ReLU, the last is the logits.
    outputs: Vec<Matrix>,
}

impl Trace<'_> {
    pub fn logits(&self) -> &Matrix {
        self.outputs.last().expect("network has at least one layer")
    }
}

/// Parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &Mlp) -> Self {
        Self {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    /// All entries flattened in checkpoint order (per layer: weights then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Validation("network needs at least one layer".into()));
        }
        for (n, l) in layers.iter().enumerate() {
            if l.inputs == 0 || l.outputs == 0 {
                return Err(Error::Validation(format!("layer {n} has a zero width")));
            }
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Validation(format!("layer {n} parameter shapes do not match its widths")));
            }
            if l.weights.iter().chain(&l.bias).any(|p| !p.is_finite()) {
                return Err(Error::Validation(format!("layer {n} has non-finite parameters")));
            }
        }
        for (n, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Validation(format!(
                    "layer {n} outputs {} but layer {} expects {}",
                    pair[0].outputs,
                    n + 1,
                    pair[1].inputs
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        Self::from_layers(widths.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].inputs];
        w.extend(self.layers.iter().map(|l| l.outputs));
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters flattened per layer: weights then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Validation(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, r) = rest.split_at(l.weights.len());
            let (b, r) = r.split_at(l.bias.len());
            l.weights.copy_from_slice(w);
            l.bias.copy_from_slice(b);
            rest = r;
        }
        Ok(())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols != self.input_width() {
            return Err(Error::Validation(format!(
                "input has {} features, network expects {}",
                x.cols,
                self.input_width()
            )));
        }
        Ok(())
    }

    pub fn forward_trace<'a>(&self, input: &'a Matrix) -> Result<Trace<'a>> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut outputs: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for (n, layer) in self.layers.iter().enumerate() {
            let x = if n == 0 { input } else { &outputs[n - 1] };
            let y = layer.apply(x, n != last);
            outputs.push(y);
        }
        Ok(Trace { input, outputs })
    }

    /// Raw logits for a batch.
    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        Ok(self.forward_trace(input)?.outputs.pop().unwrap())
    }

    /// Gradients of the loss with respect to every parameter, given the loss
    /// gradient with respect to the logits of `trace`.
    pub fn backward(&self, trace: &Trace<'_>, dlogits: &Matrix) -> Result<Gradients> {
        let logits = trace.logits();
        if dlogits.rows != logits.rows || dlogits.cols != logits.cols {
            return Err(Error::Validation(format!(
                "logit gradient is {}x{}, logits are {}x{}",
                dlogits.rows, dlogits.cols, logits.rows, logits.cols
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = dlogits.clone();
        for n in (0..self.layers.len()).rev() {
            let layer = &self.layers[n];
            let x = if n == 0 { trace.input } else { &trace.outputs[n - 1] };
            let (gw, gb) = (&mut grads.weights[n], &mut grads.biases[n]);
            for r in 0..x.rows {
                let xr = x.row(r);
                for (o, &d) in delta.row(r).iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, xr, &mut gw[o * layer.inputs..(o + 1) * layer.inputs]);
                        gb[o] += d;
                    }
                }
            }
            if n == 0 {
                break;
            }
            let mut prev = Matrix::zeros(x.rows, layer.inputs);
            for r in 0..x.rows {
                let pr = prev.row_mut(r);
                for (o, &d) in delta.row(r).iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, layer.weight_row(o), pr);
                    }
                }
                // ReLU: output > 0 exactly where the pre-activation is > 0;
                // the subgradient at 0 is taken as 0.
                for (p, &a) in pr.iter_mut().zip(x.row(r)) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        Ok(grads)
    }

    /// Predicted class per row: argmax, or `logit > 0` for a single output.
    pub fn predict(&self, input: &Matrix) -> Result<Vec<usize>> {
        Ok(predict_from_logits(&self.forward(input)?))
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::Validation(format!(
            "layer widths must list at least input and output, all positive; got {widths:?}"
        )));
    }
    Ok(())
}

pub fn predict_from_logits(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows)
        .map(|r| {
            let row = logits.row(r);
            if row.len() == 1 {
                usize::from(row[0] > 0.0)
            } else {
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            }
        })
        .collect()
}

/// Uniform initialization: weights in `(-sqrt(3/l), sqrt(3/l))` and biases in
/// `(-sqrt(1/l), sqrt(1/l))`, with `l` the layer's input width.
pub fn init_uniform(widths: &[usize], seed: u64) -> Result<Mlp> {
    check_widths(widths)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = widths
        .windows(2)
        .map(|w| {
            let (l, out) = (w[0], w[1]);
            let wb = (3.0 / l as f64).sqrt();
            let bb = (1.0 / l as f64).sqrt();
            let weights = (0..l * out).map(|_| rng.gen_range(-wb..wb)).collect();
            let bias = (0..out).map(|_| rng.gen_range(-bb..bb)).collect();
            Layer {
                inputs: l,
                outputs: out,
                weights,
                bias,
            }
        })
        .collect();
    Mlp::from_layers(layers)
}

pub fn forward(model: &Mlp, batch: &Matrix) -> Result<Matrix> {
    model.forward(batch)
}

/// Parameter gradients for `batch` given the loss gradient at the logits.
pub fn backward(model: &Mlp, batch: &Matrix, dlogits: &Matrix) -> Result<Gradients> {
    let trace = model.forward_trace(batch)?;
    model.backward(&trace, dlogits)
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

fn check_targets(logits: &Matrix, targets: &[usize], classes: usize) -> Result<()> {
    if logits.rows != targets.len() {
        return Err(Error::Validation(format!(
            "{} logit rows but {} targets",
            logits.rows,
            targets.len()
        )));
    }
    if logits.rows == 0 {
        return Err(Error::Validation("loss of an empty batch".into()));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::Validation(format!("target {bad} outside 0..{classes}")));
    }
    Ok(())
}

/// Mean softmax cross-entropy over `M` classes and its gradient `(p - y) / N`.
pub fn ce_loss(logits: &Matrix, targets: &[usize]) -> Result<(f64, Matrix)> {
    check_targets(logits, targets, logits.cols)?;
    let n = logits.rows as f64;
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    let mut total = 0.0;
    for (r, &y) in targets.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[y];
        let g = grad.row_mut(r);
        for (c, gv) in g.iter_mut().enumerate() {
            let p = (row[c] - log_z).exp();
            *gv = (p - if c == y { 1.0 } else { 0.0 }) / n;
        }
    }
    Ok((total / n, grad))
}

/// Mean binary cross-entropy of the vortex probability.
///
/// With one logit column the probability is its sigmoid; with two it is the
/// softmax weight of column 1, which makes this the two-class cross-entropy.
pub fn bce_loss(logits: &Matrix, targets: &[usize]) -> Result<(f64, Matrix)> {
    match logits.cols {
        2 => ce_loss(logits, targets),
        1 => {
            check_targets(logits, targets, 2)?;
            let n = logits.rows as f64;
            let mut grad = Matrix::zeros(logits.rows, 1);
            let mut total = 0.0;
            for (r, &y) in targets.iter().enumerate() {
                let z = logits.data[r];
                let y = y as f64;
                // -[y ln s(z) + (1-y) ln(1-s(z))] = softplus(z) - y z
                total += z.max(0.0) - y * z + (-z.abs()).exp().ln_1p();
                let s = 1.0 / (1.0 + (-z).exp());
                grad.data[r] = (s - y) / n;
            }
            Ok((total / n, grad))
        }
        c => Err(Error::Validation(format!("binary cross-entropy needs 1 or 2 logits, got {c}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    Ce,
}

impl LossKind {
    pub fn eval(self, logits: &Matrix, targets: &[usize]) -> Result<(f64, Matrix)> {
        match self {
            LossKind::Bce => bce_loss(logits, targets),
            LossKind::Ce => ce_loss(logits, targets),
        }
    }
}

/// Largest relative error between `backward` and central finite differences
/// of the loss, measured as `|g - fd|_2 / max(|g|_2, |fd|_2)`.
pub fn grad_check(model: &Mlp, batch: &Matrix, targets: &[usize], loss: LossKind, h: f64) -> Result<f64> {
    let trace = model.forward_trace(batch)?;
    let (_, dlogits) = loss.eval(trace.logits(), targets)?;
    let analytic = model.backward(&trace, &dlogits)?.flatten();
    let base = model.params();
    let mut probe = model.clone();
    let mut numeric = Vec::with_capacity(base.len());
    let mut p = base.clone();
    for n in 0..base.len() {
        p[n] = base[n] + h;
        probe.set_params(&p)?;
        let plus = loss.eval(&probe.forward(batch)?, targets)?.0;
        p[n] = base[n] - h;
        probe.set_params(&p)?;
        let minus = loss.eval(&probe.forward(batch)?, targets)?.0;
        p[n] = base[n];
        numeric.push((plus - minus) / (2.0 * h));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    let scale = norm(&analytic).max(norm(&numeric));
    Ok(if scale == 0.0 { 0.0 } else { norm(&diff) / scale })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub step: u64,
}

impl AdamState {
    pub fn new(model: &Mlp) -> Self {
        Self {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(model: &mut Mlp, grads: &Gradients, state: &mut AdamState, lr: f64, params: &AdamParams) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - params.beta1.powi(t);
    let c2 = 1.0 - params.beta2.powi(t);
    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = params.beta1 * *m + (1.0 - params.beta1) * g;
            *v = params.beta2 * *v + (1.0 - params.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + params.eps);
        }
    };
    for (n, layer) in model.layers.iter_mut().enumerate() {
        update(&mut layer.weights, &grads.weights[n], &mut state.m.weights[n], &mut state.v.weights[n]);
        update(&mut layer.bias, &grads.biases[n], &mut state.m.biases[n], &mut state.v.biases[n]);
    }
}

/// Plain gradient descent.
pub fn sgd_step(model: &mut Mlp, grads: &Gradients, lr: f64) {
    for (n, layer) in model.layers.iter_mut().enumerate() {
        axpy(-lr, &grads.weights[n], &mut layer.weights);
        axpy(-lr, &grads.biases[n], &mut layer.bias);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

fn default_lr() -> f64 {
    0.005
}

fn default_epochs() -> usize {
    500
}

fn default_batch_train() -> usize {
    128
}

fn default_batch_test() -> usize {
    1024
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Input, hidden and output widths.
    pub widths: Vec<usize>,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_train")]
    pub batch_train: usize,
    /// Evaluation chunk size; does not affect results.
    #[serde(default = "default_batch_test")]
    pub batch_test: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamParams,
    pub loss: LossKind,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
}

impl TrainConfig {
    /// 15 -> 64 -> 64 -> 2 segmentation network, learning rate 0.005, 500
    /// epochs, batches of 4225.
    pub fn segmentation_3d() -> Self {
        Self {
            widths: vec![15, 64, 64, 2],
            learning_rate: 0.005,
            epochs: 500,
            batch_train: 4225,
            batch_test: 4225,
            seed: 0,
            adam: AdamParams::default(),
            loss: LossKind::Bce,
            optimizer: OptimizerKind::Adam,
        }
    }

    /// The 2D segmentation column: 6 -> 128 -> 128 -> 2, batches 128 / 1024.
    pub fn segmentation_2d() -> Self {
        Self {
            widths: vec![6, 128, 128, 2],
            batch_train: 128,
            batch_test: 1024,
            ..Self::segmentation_3d()
        }
    }

    /// Classification network for series of `input` values over `classes` classes.
    pub fn classification(input: usize, classes: usize) -> Self {
        Self {
            widths: vec![input, 64, 64, classes],
            batch_train: 128,
            batch_test: 1024,
            loss: LossKind::Ce,
            ..Self::segmentation_3d()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_widths(&self.widths)?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Validation("epochs must be >= 1".into()));
        }
        if self.batch_train == 0 || self.batch_test == 0 {
            return Err(Error::Validation("batch sizes must be >= 1".into()));
        }
        if self.loss == LossKind::Bce && !matches!(self.widths.last(), Some(1 | 2)) {
            return Err(Error::Validation("binary cross-entropy needs 1 or 2 outputs".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Metrics of a model on one sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub train_samples: usize,
    pub test_samples: usize,
    pub history: Vec<EpochRecord>,
    /// Test-set metrics after the last epoch.
    pub final_metrics: Evaluation,
    /// Wall-clock seconds spent in the training loop.
    pub wall_clock_seconds: f64,
    pub timings: Vec<Section>,
}

impl TrainReport {
    /// Equality of everything except wall-clock measurements.
    pub fn same_outcome(&self, other: &TrainReport) -> bool {
        self.config == other.config
            && self.train_samples == other.train_samples
            && self.test_samples == other.test_samples
            && self.history == other.history
            && self.final_metrics == other.final_metrics
    }
}

fn labels_matrix(set: &SampleSet) -> Result<(Matrix, Vec<usize>)> {
    Ok((Matrix::from_vec(set.len(), set.width(), set.feature_matrix())?, set.labels()))
}

/// Evaluates `model` on `set` in chunks of `chunk` rows.
pub fn evaluate(model: &Mlp, set: &SampleSet, loss: LossKind, chunk: usize) -> Result<Evaluation> {
    let (x, y) = labels_matrix(set)?;
    evaluate_matrix(model, &x, &y, loss, chunk)
}

fn evaluate_matrix(model: &Mlp, x: &Matrix, y: &[usize], loss: LossKind, chunk: usize) -> Result<Evaluation> {
    let classes = model.output_width().max(2);
    if x.rows == 0 {
        let confusion = Confusion::new(classes);
        return Ok(Evaluation {
            loss: 0.0,
            accuracy: 0.0,
            precision: 0.0,
            recall: 0.0,
            precision_undefined: true,
            recall_undefined: true,
            confusion,
        });
    }
    // logits are row-wise, so chunking cannot change them; the loss is taken
    // over the assembled matrix to keep it independent of the chunk size
    let mut logits = Matrix::zeros(0, model.output_width());
    let idx: Vec<usize> = (0..x.rows).collect();
    for rows in idx.chunks(chunk.max(1)) {
        let out = model.forward(&x.select_rows(rows))?;
        logits.rows += out.rows;
        logits.data.extend(out.data);
    }
    let mean_loss = loss.eval(&logits, y)?.0;
    let preds = predict_from_logits(&logits);
    let conf = confusion(y, &preds, classes)?;
    let s = task_scores(&conf);
    Ok(Evaluation {
        loss: mean_loss,
        accuracy: s.accuracy,
        precision: s.precision,
        recall: s.recall,
        precision_undefined: s.precision_undefined,
        recall_undefined: s.recall_undefined,
        confusion: conf,
    })
}

/// Trains `model` in place and evaluates on `test` after every epoch.
pub fn train(model: &mut Mlp, train_set: &SampleSet, test_set: &SampleSet, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if model.widths() != config.widths {
        return Err(Error::Validation(format!(
            "model widths {:?} differ from config widths {:?}",
            model.widths(),
            config.widths
        )));
    }
    if train_set.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    for set in [train_set, test_set] {
        if set.width() != model.input_width() {
            return Err(Error::Validation(format!(
                "samples have {} features, network expects {}",
                set.width(),
                model.input_width()
            )));
        }
    }
    let classes = model.output_width().max(2);
    if let Some(bad) = train_set.labels().into_iter().chain(test_set.labels()).find(|&l| l >= classes) {
        return Err(Error::Validation(format!("label {bad} outside 0..{classes}")));
    }

    let (x, y) = labels_matrix(train_set)?;
    let (xt, yt) = labels_matrix(test_set)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(model);
    let mut order: Vec<usize> = (0..x.rows).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut sw = Stopwatch::new();
    let started = Instant::now();
    sw.start("train");
    for epoch in 1..=config.epochs {
        sw.start("epochs");
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for rows in order.chunks(config.batch_train) {
            let xb = x.select_rows(rows);
            let yb: Vec<usize> = rows.iter().map(|&r| y[r]).collect();
            let trace = model.forward_trace(&xb)?;
            let (loss, dlogits) = config.loss.eval(trace.logits(), &yb)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            total += loss * rows.len() as f64;
            let grads = model.backward(&trace, &dlogits)?;
            match config.optimizer {
                OptimizerKind::Adam => adam_step(model, &grads, &mut adam, config.learning_rate, &config.adam),
                OptimizerKind::Sgd => sgd_step(model, &grads, config.learning_rate),
            }
        }
        sw.stop();
        if model.layers.iter().any(|l| l.weights.iter().chain(&l.bias).any(|p| !p.is_finite())) {
            return Err(Error::Diverged { epoch });
        }
        sw.start("eval");
        let eval = evaluate_matrix(model, &xt, &yt, config.loss, config.batch_test)?;
        sw.stop();
        history.push(EpochRecord {
            epoch,
            train_loss: total / x.rows as f64,
            test_loss: eval.loss,
            accuracy: eval.accuracy,
            precision: eval.precision,
            recall: eval.recall,
        });
    }
    sw.stop();
    let wall_clock_seconds = started.elapsed().as_secs_f64();
    let final_metrics = evaluate_matrix(model, &xt, &yt, config.loss, config.batch_test)?;
    Ok(TrainReport {
        config: config.clone(),
        train_samples: x.rows,
        test_samples: xt.rows,
        history,
        final_metrics,
        wall_clock_seconds,
        timings: merge_sections(sw.into_sections()),
    })
}

/// Sums repeated sections by name, keeping first-seen order.
fn merge_sections(sections: Vec<Section>) -> Vec<Section> {
    let mut out: Vec<Section> = Vec::new();
    for s in sections {
        match out.iter_mut().find(|o| o.name == s.name) {
            Some(o) => o.seconds += s.seconds,
            None => out.push(s),
        }
    }
    out
}

/// Serializes a model as `"MLP1" | n u32 | widths u32 x n | per layer W then b`.
pub fn encode_checkpoint(model: &Mlp) -> Vec<u8> {
    let widths = model.widths();
    let mut buf = Vec::with_capacity(8 + 4 * widths.len() + 8 * model.param_count());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(widths.len() as u32).to_le_bytes());
    for w in &widths {
        buf.extend_from_slice(&(*w as u32).to_le_bytes());
    }
    for p in model.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Mlp> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic, expected \"MLP1\"".into()));
    }
    if bytes.len() < 8 {
        return Err(Error::Length {
            expected: 8,
            actual: bytes.len(),
        });
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header = 8usize
        .checked_add(count.checked_mul(4).ok_or_else(|| Error::Format("width count overflows".into()))?)
        .ok_or_else(|| Error::Format("width count overflows".into()))?;
    if bytes.len() < header {
        return Err(Error::Length {
            expected: header,
            actual: bytes.len(),
        });
    }
    let widths: Vec<usize> = bytes[8..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let mut model = Mlp::zeros(&widths)?;
    let expected = header + 8 * model.param_count();
    if bytes.len() != expected {
        return Err(Error::Length {
            expected,
            actual: bytes.len(),
        });
    }
    let params: Vec<f64> = bytes[header..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Validation("checkpoint holds non-finite parameters".into()));
    }
    model.set_params(&params)?;
    Ok(model)
}

pub fn save_checkpoint(model: &Mlp, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Mlp> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
