//! The trainable classifier: a one-hidden-layer ReLU perceptron with a softmax
//! output, its proximal training objective and analytic gradients.
//!
//! Parameters live in a single flat [`ParamVector`] laid out as
//! `[W1 (input x hidden), b1 (hidden), W2 (hidden x output), b2 (output)]`,
//! row-major with the fan-in index outermost. Inputs are stored as `f32`
//! (pixel intensities); all arithmetic on parameters is `f64`.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{LabeledDataset, Partition};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid architecture {0}: every dimension must be at least 1")]
    InvalidArchitecture(String),
    #[error("parameter length {found} does not match architecture size {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("parameter layouts differ: {left} vs {right}")]
    LayoutMismatch { left: String, right: String },
    #[error("batch feature dimension {found} does not match model input {expected}")]
    InputDimMismatch { expected: usize, found: usize },
    #[error("batch has {inputs} input rows but {labels} labels")]
    RowCountMismatch { inputs: usize, labels: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("label {label} outside [0, {classes})")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("agent shard is empty; agents without data must be excluded upstream")]
    EmptyShard,
    #[error("learning rate must be finite and non-negative, got {0}")]
    InvalidLearningRate(f64),
    #[error("batch size must be at least 1")]
    InvalidBatchSize,
    #[error("proximal weights must be finite and non-negative, got ({0}, {1})")]
    InvalidProximal(f64, f64),
}

/// Layer sizes of the perceptron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArchitecture {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
}

impl Default for ModelArchitecture {
    fn default() -> Self {
        Self::mnist()
    }
}

impl std::fmt::Display for ModelArchitecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}-{}", self.input_dim, self.hidden_dim, self.output_dim)
    }
}

impl ModelArchitecture {
    pub fn new(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Result<Self, ModelError> {
        let arch = Self { input_dim, hidden_dim, output_dim };
        arch.validate()?;
        Ok(arch)
    }

    /// 784-40-10, 31,810 parameters.
    pub fn mnist() -> Self {
        Self { input_dim: 784, hidden_dim: 40, output_dim: 10 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(ModelError::InvalidArchitecture(self.to_string()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.input_dim * self.hidden_dim + self.hidden_dim + self.hidden_dim * self.output_dim + self.output_dim
    }

    /// Model size in bytes when each parameter is stored as a 32-bit float.
    pub fn size_bytes(&self) -> usize {
        self.param_count() * 4
    }

    pub fn w1_range(&self) -> Range<usize> {
        0..self.input_dim * self.hidden_dim
    }

    pub fn b1_range(&self) -> Range<usize> {
        let start = self.w1_range().end;
        start..start + self.hidden_dim
    }

    pub fn w2_range(&self) -> Range<usize> {
        let start = self.b1_range().end;
        start..start + self.hidden_dim * self.output_dim
    }

    pub fn b2_range(&self) -> Range<usize> {
        let start = self.w2_range().end;
        start..start + self.output_dim
    }
}

/// Flat model parameters tied to the architecture that gives them meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    arch: ModelArchitecture,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(arch: ModelArchitecture) -> Self {
        Self { arch, values: vec![0.0; arch.param_count()] }
    }

    pub fn from_values(arch: ModelArchitecture, values: Vec<f64>) -> Result<Self, ModelError> {
        arch.validate()?;
        if values.len() != arch.param_count() {
            return Err(ModelError::LengthMismatch { expected: arch.param_count(), found: values.len() });
        }
        Ok(Self { arch, values })
    }

    pub fn arch(&self) -> ModelArchitecture {
        self.arch
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to the values. The length cannot change through a slice.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn ensure_same_layout(&self, other: &ParamVector) -> Result<(), ModelError> {
        if self.arch != other.arch {
            return Err(ModelError::LayoutMismatch { left: self.arch.to_string(), right: other.arch.to_string() });
        }
        Ok(())
    }

    /// Squared Euclidean distance.
    pub fn distance_sq(&self, other: &ParamVector) -> Result<f64, ModelError> {
        self.ensure_same_layout(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    pub fn copy_from(&mut self, other: &ParamVector) -> Result<(), ModelError> {
        self.ensure_same_layout(other)?;
        self.values.copy_from_slice(&other.values);
        Ok(())
    }

    pub fn w1(&self) -> &[f64] {
        &self.values[self.arch.w1_range()]
    }

    pub fn b1(&self) -> &[f64] {
        &self.values[self.arch.b1_range()]
    }

    pub fn w2(&self) -> &[f64] {
        &self.values[self.arch.w2_range()]
    }

    pub fn b2(&self) -> &[f64] {
        &self.values[self.arch.b2_range()]
    }
}

/// Proximal weights of the two-anchor local objective: `mu1` pins agents to
/// their roadside model, `mu2` to the global model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProximalSpec {
    pub mu1: f64,
    pub mu2: f64,
}

impl ProximalSpec {
    pub fn new(mu1: f64, mu2: f64) -> Result<Self, ModelError> {
        let spec = Self { mu1, mu2 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn none() -> Self {
        Self { mu1: 0.0, mu2: 0.0 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = |m: f64| m.is_finite() && m >= 0.0;
        if !ok(self.mu1) || !ok(self.mu2) {
            return Err(ModelError::InvalidProximal(self.mu1, self.mu2));
        }
        Ok(())
    }
}

/// The two models an agent is pinned to during local training.
#[derive(Debug, Clone, Copy)]
pub struct Anchors<'a> {
    pub rsu: &'a ParamVector,
    pub cloud: &'a ParamVector,
}

/// A borrowed row-major block of examples.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    inputs: &'a [f32],
    labels: &'a [u8],
    dim: usize,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: &'a [f32], labels: &'a [u8], dim: usize) -> Result<Self, ModelError> {
        if labels.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        if dim == 0 || inputs.len() % dim != 0 {
            return Err(ModelError::InputDimMismatch { expected: dim, found: inputs.len() });
        }
        if inputs.len() / dim != labels.len() {
            return Err(ModelError::RowCountMismatch { inputs: inputs.len() / dim, labels: labels.len() });
        }
        Ok(Self { inputs, labels, dim })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &'a [f32] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &'a [u8] {
        self.labels
    }

    fn check(&self, arch: &ModelArchitecture) -> Result<(), ModelError> {
        if self.dim != arch.input_dim {
            return Err(ModelError::InputDimMismatch { expected: arch.input_dim, found: self.dim });
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l as usize >= arch.output_dim) {
            return Err(ModelError::LabelOutOfRange { label: bad as usize, classes: arch.output_dim });
        }
        Ok(())
    }
}

/// Row-major `examples x classes` softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities {
    pub classes: usize,
    pub data: Vec<f64>,
}

impl ClassProbabilities {
    pub fn rows(&self) -> usize {
        self.data.len() / self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(arch: ModelArchitecture, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamVector::zeros(arch);
    let limit1 = (6.0 / (arch.input_dim + arch.hidden_dim) as f64).sqrt();
    let limit2 = (6.0 / (arch.hidden_dim + arch.output_dim) as f64).sqrt();
    let values = params.as_mut_slice();
    for v in &mut values[arch.w1_range()] {
        *v = rng.gen_range(-limit1..=limit1);
    }
    for v in &mut values[arch.w2_range()] {
        *v = rng.gen_range(-limit2..=limit2);
    }
    params
}

/// Scratch buffers for one example's pass through the network.
struct Activations {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

impl Activations {
    fn new(arch: &ModelArchitecture) -> Self {
        Self {
            pre: vec![0.0; arch.hidden_dim],
            hidden: vec![0.0; arch.hidden_dim],
            logits: vec![0.0; arch.output_dim],
        }
    }

    fn run(&mut self, params: &ParamVector, x: &[f32]) {
        let arch = params.arch;
        let h = arch.hidden_dim;
        let w1 = params.w1();
        self.pre.copy_from_slice(params.b1());
        for (i, &xi) in x.iter().enumerate() {
            // MNIST rows are mostly background pixels.
            if xi == 0.0 {
                continue;
            }
            let xi = xi as f64;
            let row = &w1[i * h..(i + 1) * h];
            for (p, w) in self.pre.iter_mut().zip(row) {
                *p += xi * w;
            }
        }
        for (a, &p) in self.hidden.iter_mut().zip(&self.pre) {
            *a = p.max(0.0);
        }
        let o = arch.output_dim;
        let w2 = params.w2();
        self.logits.copy_from_slice(params.b2());
        for (j, &a) in self.hidden.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let row = &w2[j * o..(j + 1) * o];
            for (z, w) in self.logits.iter_mut().zip(row) {
                *z += a * w;
            }
        }
    }
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let lse = log_sum_exp(logits);
    for (p, z) in out.iter_mut().zip(logits) {
        *p = (z - lse).exp();
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn forward(params: &ParamVector, batch: &Batch<'_>) -> Result<ClassProbabilities, ModelError> {
    batch.check(&params.arch)?;
    let classes = params.arch.output_dim;
    let mut act = Activations::new(&params.arch);
    let mut data = vec![0.0; batch.len() * classes];
    for (i, out) in data.chunks_exact_mut(classes).enumerate() {
        act.run(params, batch.row(i));
        softmax_into(&act.logits, out);
    }
    Ok(ClassProbabilities { classes, data })
}

/// Adds the gradient of the mean cross-entropy over `batch` into `grad` and
/// returns that mean cross-entropy. Assumes the batch was checked.
fn accumulate_cross_entropy(params: &ParamVector, batch: &Batch<'_>, grad: &mut [f64], act: &mut Activations) -> f64 {
    let arch = params.arch;
    let (h, o) = (arch.hidden_dim, arch.output_dim);
    let scale = 1.0 / batch.len() as f64;
    let w2 = params.w2();
    let (w1_r, b1_r, w2_r, b2_r) = (arch.w1_range(), arch.b1_range(), arch.w2_range(), arch.b2_range());
    let mut delta_out = vec![0.0; o];
    let mut delta_hidden = vec![0.0; h];
    let mut loss = 0.0;

    for n in 0..batch.len() {
        let x = batch.row(n);
        let label = batch.labels[n] as usize;
        act.run(params, x);
        let lse = log_sum_exp(&act.logits);
        loss += lse - act.logits[label];

        for (d, z) in delta_out.iter_mut().zip(&act.logits) {
            *d = (z - lse).exp() * scale;
        }
        delta_out[label] -= scale;

        for (g, d) in grad[b2_r.clone()].iter_mut().zip(&delta_out) {
            *g += d;
        }
        let g_w2 = &mut grad[w2_r.clone()];
        for j in 0..h {
            let a = act.hidden[j];
            let row = &w2[j * o..(j + 1) * o];
            let mut back = 0.0;
            for c in 0..o {
                back += row[c] * delta_out[c];
            }
            delta_hidden[j] = if act.pre[j] > 0.0 { back } else { 0.0 };
            if a != 0.0 {
                for (g, d) in g_w2[j * o..(j + 1) * o].iter_mut().zip(&delta_out) {
                    *g += a * d;
                }
            }
        }

        for (g, d) in grad[b1_r.clone()].iter_mut().zip(&delta_hidden) {
            *g += d;
        }
        let g_w1 = &mut grad[w1_r.clone()];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let xi = xi as f64;
            for (g, d) in g_w1[i * h..(i + 1) * h].iter_mut().zip(&delta_hidden) {
                *g += xi * d;
            }
        }
    }
    loss * scale
}

fn proximal_penalty(params: &ParamVector, anchors: Anchors<'_>, prox: ProximalSpec) -> f64 {
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    for ((w, a1), a2) in params.values.iter().zip(&anchors.rsu.values).zip(&anchors.cloud.values) {
        d1 += (w - a1) * (w - a1);
        d2 += (w - a2) * (w - a2);
    }
    0.5 * prox.mu1 * d1 + 0.5 * prox.mu2 * d2
}

fn check_anchors(params: &ParamVector, anchors: Anchors<'_>) -> Result<(), ModelError> {
    params.ensure_same_layout(anchors.rsu)?;
    params.ensure_same_layout(anchors.cloud)
}

/// Mean cross-entropy plus `mu1/2 |w - w_rsu|^2 + mu2/2 |w - w_cloud|^2`, and
/// its exact gradient.
pub fn loss_and_grad(
    params: &ParamVector,
    batch: &Batch<'_>,
    anchors: Anchors<'_>,
    prox: ProximalSpec,
) -> Result<(f64, ParamVector), ModelError> {
    batch.check(&params.arch)?;
    check_anchors(params, anchors)?;
    prox.validate()?;
    let mut grad = ParamVector::zeros(params.arch);
    let mut act = Activations::new(&params.arch);
    let ce = accumulate_cross_entropy(params, batch, &mut grad.values, &mut act);
    for (((g, w), a1), a2) in grad.values.iter_mut().zip(&params.values).zip(&anchors.rsu.values).zip(&anchors.cloud.values) {
        *g += prox.mu1 * (w - a1) + prox.mu2 * (w - a2);
    }
    Ok((ce + proximal_penalty(params, anchors, prox), grad))
}

/// Loss value only; same objective as [`loss_and_grad`].
pub fn loss(params: &ParamVector, batch: &Batch<'_>, anchors: Anchors<'_>, prox: ProximalSpec) -> Result<f64, ModelError> {
    batch.check(&params.arch)?;
    check_anchors(params, anchors)?;
    let mut act = Activations::new(&params.arch);
    let mut ce = 0.0;
    for n in 0..batch.len() {
        act.run(params, batch.row(n));
        ce += log_sum_exp(&act.logits) - act.logits[batch.labels[n] as usize];
    }
    Ok(ce / batch.len() as f64 + proximal_penalty(params, anchors, prox))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdOptions {
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for SgdOptions {
    fn default() -> Self {
        Self { lr: 0.1, batch_size: 10 }
    }
}

impl SgdOptions {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(ModelError::InvalidLearningRate(self.lr));
        }
        if self.batch_size == 0 {
            return Err(ModelError::InvalidBatchSize);
        }
        Ok(())
    }
}

/// One shuffled pass over `examples`, applying `w <- w - lr * grad` per
/// mini-batch. The anchors stay fixed for the whole epoch.
pub fn sgd_epoch_indices<R: Rng + ?Sized>(
    params: &mut ParamVector,
    data: &LabeledDataset,
    examples: &[usize],
    anchors: Anchors<'_>,
    prox: ProximalSpec,
    opts: SgdOptions,
    rng: &mut R,
) -> Result<(), ModelError> {
    if examples.is_empty() {
        return Err(ModelError::EmptyShard);
    }
    opts.validate()?;
    prox.validate()?;
    check_anchors(params, anchors)?;
    let arch = params.arch;
    if data.dim() != arch.input_dim {
        return Err(ModelError::InputDimMismatch { expected: arch.input_dim, found: data.dim() });
    }

    let mut order = examples.to_vec();
    order.shuffle(rng);

    let dim = data.dim();
    let mut xs = Vec::with_capacity(opts.batch_size * dim);
    let mut ys = Vec::with_capacity(opts.batch_size);
    let mut grad = vec![0.0; arch.param_count()];
    let mut act = Activations::new(&arch);
    for chunk in order.chunks(opts.batch_size) {
        xs.clear();
        ys.clear();
        for &idx in chunk {
            xs.extend_from_slice(data.features(idx));
            ys.push(data.label(idx));
        }
        let batch = Batch::new(&xs, &ys, dim)?;
        batch.check(&arch)?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        accumulate_cross_entropy(params, &batch, &mut grad, &mut act);
        let lr = opts.lr;
        let (mu1, mu2) = (prox.mu1, prox.mu2);
        for (((w, g), a1), a2) in params.values.iter_mut().zip(&grad).zip(&anchors.rsu.values).zip(&anchors.cloud.values) {
            *w -= lr * (g + mu1 * (*w - a1) + mu2 * (*w - a2));
        }
    }
    Ok(())
}

/// [`sgd_epoch_indices`] over an agent's shard, returning the updated vector.
pub fn sgd_epoch<R: Rng + ?Sized>(
    params: &ParamVector,
    data: &LabeledDataset,
    shard: &Partition,
    anchors: Anchors<'_>,
    prox: ProximalSpec,
    opts: SgdOptions,
    rng: &mut R,
) -> Result<ParamVector, ModelError> {
    let mut next = params.clone();
    sgd_epoch_indices(&mut next, data, &shard.example_indices, anchors, prox, opts, rng)?;
    Ok(next)
}

/// Fraction of argmax predictions that hit the label. Ties go to the lowest
/// class index.
pub fn evaluate(params: &ParamVector, test: &Batch<'_>) -> Result<f64, ModelError> {
    test.check(&params.arch)?;
    let mut act = Activations::new(&params.arch);
    let mut hits = 0usize;
    for n in 0..test.len() {
        act.run(params, test.row(n));
        if argmax(&act.logits) == test.labels[n] as usize {
            hits += 1;
        }
    }
    Ok(hits as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelArchitecture {
        ModelArchitecture::new(2, 2, 2).unwrap()
    }

    #[test]
    fn param_counts() {
        // 784*40 + 40 + 40*10 + 10, counted layer by layer.
        let shapes = [(784usize, 40usize), (40, 10)];
        let by_hand: usize = shapes.iter().map(|(i, o)| i * o + o).sum();
        assert_eq!(by_hand, 31_810);
        assert_eq!(ModelArchitecture::mnist().param_count(), 31_810);
        assert_eq!(init_params(ModelArchitecture::mnist(), 7).len(), 31_810);
        assert_eq!(ModelArchitecture::mnist().size_bytes(), 127_240);
        assert_eq!(init_params(tiny(), 0).len(), 12);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(ModelArchitecture::new(0, 2, 2).is_err());
        assert!(ModelArchitecture::new(2, 0, 2).is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let arch = ModelArchitecture::mnist();
        let a = init_params(arch, 7);
        let b = init_params(arch, 7);
        assert_eq!(a, b);
        assert_ne!(a, init_params(arch, 8));
        assert!(a.b1().iter().chain(a.b2()).all(|&b| b == 0.0));
        let limit = (6.0f64 / 824.0).sqrt();
        assert!(a.w1().iter().all(|w| w.abs() <= limit));
        let mean: f64 = a.w1().iter().sum::<f64>() / a.w1().len() as f64;
        assert!(mean.abs() < 0.01);
    }

    #[test]
    fn zero_params_give_uniform_probabilities() {
        let arch = ModelArchitecture::new(3, 4, 5).unwrap();
        let params = ParamVector::zeros(arch);
        let x = [0.3f32, 0.9, 0.1, 1.0, 0.0, 0.5];
        let y = [0u8, 4];
        let probs = forward(&params, &Batch::new(&x, &y, 3).unwrap()).unwrap();
        for p in &probs.data {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_computed_forward_pass() {
        // W1 = [[1, -1], [0.5, 2]] (input-major), b1 = [0, 0.5]
        // W2 = [[1, 0], [-1, 1]] (hidden-major), b2 = [0.1, -0.1]
        let arch = tiny();
        let params = ParamVector::from_values(arch, vec![1.0, -1.0, 0.5, 2.0, 0.0, 0.5, 1.0, 0.0, -1.0, 1.0, 0.1, -0.1]).unwrap();
        let x = [1.0f32, 0.5];
        let y = [0u8];
        // pre = [1*1 + 0.5*0.5 + 0, 1*-1 + 0.5*2 + 0.5] = [1.25, 0.5]
        // hidden = [1.25, 0.5]
        // logits = [1.25*1 + 0.5*-1 + 0.1, 1.25*0 + 0.5*1 - 0.1] = [0.85, 0.4]
        let e0 = 0.85f64.exp();
        let e1 = 0.4f64.exp();
        let expected = [e0 / (e0 + e1), e1 / (e0 + e1)];
        let probs = forward(&params, &Batch::new(&x, &y, 2).unwrap()).unwrap();
        assert!((probs.row(0)[0] - expected[0]).abs() < 1e-12);
        assert!((probs.row(0)[1] - expected[1]).abs() < 1e-12);
    }

    #[test]
    fn forward_rows_sum_to_one() {
        let arch = ModelArchitecture::new(6, 5, 4).unwrap();
        let params = init_params(arch, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f32> = (0..6 * 20).map(|_| rng.gen()).collect();
        let y: Vec<u8> = (0..20).map(|i| (i % 4) as u8).collect();
        let probs = forward(&params, &Batch::new(&x, &y, 6).unwrap()).unwrap();
        for r in 0..probs.rows() {
            let s: f64 = probs.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(probs.row(r).iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let params = ParamVector::zeros(tiny());
        let x = [0.0f32; 3];
        let y = [0u8];
        assert!(matches!(forward(&params, &Batch::new(&x, &y, 3).unwrap()), Err(ModelError::InputDimMismatch { .. })));
        assert!(matches!(Batch::new(&x, &[0, 1], 3), Err(ModelError::RowCountMismatch { .. })));
        assert!(matches!(Batch::new(&[], &[], 3), Err(ModelError::EmptyBatch)));
        let bad_label = [7u8];
        let x2 = [0.0f32; 2];
        assert!(matches!(forward(&params, &Batch::new(&x2, &bad_label, 2).unwrap()), Err(ModelError::LabelOutOfRange { .. })));
    }

    #[test]
    fn layout_mismatch_is_an_error() {
        let p = ParamVector::zeros(tiny());
        let other = ParamVector::zeros(ModelArchitecture::new(2, 3, 2).unwrap());
        let x = [0.5f32, 0.5];
        let y = [1u8];
        let batch = Batch::new(&x, &y, 2).unwrap();
        let anchors = Anchors { rsu: &other, cloud: &p };
        assert!(matches!(loss_and_grad(&p, &batch, anchors, ProximalSpec::none()), Err(ModelError::LayoutMismatch { .. })));
        assert!(ParamVector::from_values(tiny(), vec![0.0; 11]).is_err());
    }

    #[test]
    fn zero_prox_matches_plain_cross_entropy() {
        let arch = ModelArchitecture::new(3, 4, 3).unwrap();
        let params = init_params(arch, 11);
        let far = init_params(arch, 12);
        let x = [0.2f32, 0.4, 0.9, 1.0, 0.0, 0.3];
        let y = [2u8, 0];
        let batch = Batch::new(&x, &y, 3).unwrap();
        let (l0, g0) = loss_and_grad(&params, &batch, Anchors { rsu: &far, cloud: &far }, ProximalSpec::none()).unwrap();
        let (l1, g1) = loss_and_grad(&params, &batch, Anchors { rsu: &params, cloud: &params }, ProximalSpec::new(5.0, 5.0).unwrap()).unwrap();
        assert_eq!(l0, l1);
        assert_eq!(g0, g1);
        let probs = forward(&params, &batch).unwrap();
        let ce = -(probs.row(0)[2].ln() + probs.row(1)[0].ln()) / 2.0;
        assert!((l0 - ce).abs() < 1e-12);
    }

    #[test]
    fn negative_mu_rejected() {
        assert!(ProximalSpec::new(-1.0, 0.0).is_err());
        assert!(ProximalSpec::new(0.0, f64::NAN).is_err());
        assert!(ProximalSpec::new(0.0, 0.0).is_ok());
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[0.1, 0.3, 0.3]), 1);
    }

    #[test]
    fn perfect_logits_score_one() {
        // Identity-like network on one-hot inputs: W1 = I, W2 = I.
        let arch = ModelArchitecture::new(3, 3, 3).unwrap();
        let mut values = vec![0.0; arch.param_count()];
        for i in 0..3 {
            values[i * 3 + i] = 1.0;
            values[arch.w2_range().start + i * 3 + i] = 1.0;
        }
        let params = ParamVector::from_values(arch, values).unwrap();
        let x = [1.0f32, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let y = [0u8, 1, 2];
        let before = params.clone();
        assert_eq!(evaluate(&params, &Batch::new(&x, &y, 3).unwrap()).unwrap(), 1.0);
        assert_eq!(params, before);
    }
}
