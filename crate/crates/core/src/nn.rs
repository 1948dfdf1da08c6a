//! Multilayer perceptron with hand-written backpropagation and Adam.
//!
//! All hidden layers use `tanh`, the output layer is linear. Every dense
//! product goes through the same fixed-lane dot kernel, so a batch forward
//! pass is bit-identical to forwarding each row on its own.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{ACTION_DIM, OBS_DIM};

pub const HIDDEN: usize = 256;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite loss in term `{term}`")]
    NonFiniteLoss { term: String },
    #[error("non-finite gradient in tensor {tensor}")]
    NonFiniteGradient { tensor: usize },
    #[error("parameter/state shape mismatch")]
    ShapeMismatch,
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Dot product with eight fixed accumulation lanes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Fully connected layer; `weights` is `outputs × inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn forward_row(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot(x, &self.weights[j * self.inputs..(j + 1) * self.inputs]) + self.bias[j];
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-layer inputs and the final output of a batch forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input fed to layer `l`; hidden ones are post-tanh.
    inputs: Vec<Matrix>,
    pub output: Matrix,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(seed: u64, sizes: &[usize]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(&mut rng, sizes)
    }

    pub fn init_with(rng: &mut impl Rng, sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit);
                let mut layer = Dense::zeros(fan_in, fan_out);
                for wgt in layer.weights.iter_mut() {
                    *wgt = dist.sample(rng);
                }
                layer
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect() }
    }

    fn check_dim(&self, got: usize) -> Result<(), NnError> {
        let expected = self.input_dim();
        if got != expected {
            return Err(NnError::DimensionMismatch { expected, got });
        }
        Ok(())
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_dim(x.len())?;
        let last = self.layers.len() - 1;
        let mut cur = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.outputs];
            layer.forward_row(&cur, &mut out);
            if l < last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            cur = out;
        }
        Ok(cur)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix, NnError> {
        Ok(self.forward_cached(x)?.output)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache, NnError> {
        self.check_dim(x.cols)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = Matrix::zeros(cur.rows, layer.outputs);
            for i in 0..cur.rows {
                layer.forward_row(cur.row(i), out.row_mut(i));
            }
            if l < last {
                out.data.iter_mut().for_each(|v| *v = v.tanh());
            }
            inputs.push(cur);
            cur = out;
        }
        Ok(ForwardCache { inputs, output: cur })
    }

    /// Reverse-mode gradient given `d_output = ∂loss/∂output` for every row.
    pub fn backward(&self, cache: &ForwardCache, d_output: &Matrix) -> Mlp {
        let mut grads = self.zeros_like();
        let mut delta = d_output.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.inputs[l];
            let g = &mut grads.layers[l];
            for i in 0..delta.rows {
                let d = delta.row(i);
                let x = input.row(i);
                for (j, &dj) in d.iter().enumerate() {
                    if dj != 0.0 {
                        axpy(dj, x, &mut g.weights[j * layer.inputs..(j + 1) * layer.inputs]);
                    }
                    g.bias[j] += dj;
                }
            }
            if l == 0 {
                break;
            }
            // Propagate to the previous layer's post-tanh output.
            let mut prev = Matrix::zeros(delta.rows, layer.inputs);
            for i in 0..delta.rows {
                let d = delta.row(i);
                let p = prev.row_mut(i);
                for (j, &dj) in d.iter().enumerate() {
                    if dj != 0.0 {
                        axpy(dj, &layer.weights[j * layer.inputs..(j + 1) * layer.inputs], p);
                    }
                }
                for (pv, h) in p.iter_mut().zip(input.row(i)) {
                    *pv *= 1.0 - h * h;
                }
            }
            delta = prev;
        }
        grads
    }

    /// Loss and parameter gradients for a batch. `loss` maps the network
    /// output to `(loss, ∂loss/∂output)`.
    pub fn backprop<F>(&self, inputs: &Matrix, loss: F) -> Result<(f64, Mlp), NnError>
    where
        F: FnOnce(&Matrix) -> Result<(f64, Matrix), NnError>,
    {
        let cache = self.forward_cached(inputs)?;
        let (value, d_out) = loss(&cache.output)?;
        if !value.is_finite() {
            return Err(NnError::NonFiniteLoss { term: "total".into() });
        }
        Ok((value, self.backward(&cache, &d_out)))
    }
}

/// Flat access to every parameter tensor, in a fixed order.
pub trait ParamTensors {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
    /// Re-imposes parameter constraints after an update.
    fn project(&mut self) {}
}

impl ParamTensors for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()]).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

/// Gaussian policy: MLP mean head plus state-independent log standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub net: Mlp,
    pub log_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub net: Mlp,
}

impl ParamTensors for Actor {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.net.tensors();
        t.push(&self.log_std);
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.net.tensors_mut();
        t.push(&mut self.log_std);
        t
    }

    fn project(&mut self) {
        for s in self.log_std.iter_mut() {
            *s = s.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }
}

impl ParamTensors for Critic {
    fn tensors(&self) -> Vec<&[f64]> {
        self.net.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.net.tensors_mut()
    }
}

/// Diagonal-Gaussian log-density.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], x: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(x)
        .map(|((m, s), a)| {
            let z = (a - m) * (-s).exp();
            -0.5 * z * z - s - HALF_LN_2PI
        })
        .sum()
}

/// Entropy of a diagonal Gaussian.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|s| s + 0.5 + HALF_LN_2PI).sum()
}

impl Actor {
    pub fn init(seed: u64) -> Self {
        Self::with_sizes(seed, &[OBS_DIM, HIDDEN, HIDDEN, ACTION_DIM])
    }

    pub fn with_sizes(seed: u64, sizes: &[usize]) -> Self {
        let net = Mlp::init(seed, sizes);
        let log_std = vec![0.0; net.output_dim()];
        Self { net, log_std }
    }

    pub fn zeros_like(&self) -> Self {
        Self { net: self.net.zeros_like(), log_std: vec![0.0; self.log_std.len()] }
    }

    pub fn mean(&self, obs: &[f64]) -> Result<Vec<f64>, NnError> {
        self.net.forward_one(obs)
    }

    pub fn log_prob(&self, mean: &[f64], action: &[f64]) -> f64 {
        gaussian_log_prob(mean, &self.log_std, action)
    }

    pub fn entropy(&self) -> f64 {
        gaussian_entropy(&self.log_std)
    }

    /// Draws `n` independent actions at `obs`; each comes with its log-density.
    /// Dimension `d` of sample `k` consumes the `(k * dim + d)`-th normal
    /// variate, so `n = 1` matches [`Actor::sample_and_logprob`].
    pub fn sample_n(
        &self,
        obs: &[f64],
        n: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<(Vec<f64>, f64)>, NnError> {
        let mean = self.mean(obs)?;
        Ok((0..n).map(|_| self.sample_at(&mean, rng)).collect())
    }

    pub fn sample_and_logprob(
        &self,
        obs: &[f64],
        rng: &mut impl Rng,
    ) -> Result<(Vec<f64>, f64), NnError> {
        let mean = self.mean(obs)?;
        Ok(self.sample_at(&mean, rng))
    }

    fn sample_at(&self, mean: &[f64], rng: &mut impl Rng) -> (Vec<f64>, f64) {
        let action: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, s)| {
                let eps: f64 = rng.sample(StandardNormal);
                m + s.exp() * eps
            })
            .collect();
        let lp = self.log_prob(mean, &action);
        (action, lp)
    }
}

impl Critic {
    pub fn init(seed: u64) -> Self {
        Self::with_sizes(seed, &[OBS_DIM, HIDDEN, HIDDEN, 1])
    }

    pub fn with_sizes(seed: u64, sizes: &[usize]) -> Self {
        Self { net: Mlp::init(seed, sizes) }
    }

    pub fn zeros_like(&self) -> Self {
        Self { net: self.net.zeros_like() }
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64, NnError> {
        Ok(self.net.forward_one(obs)?[0])
    }
}

/// Adam moments congruent with a [`ParamTensors`] value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(params: &impl ParamTensors) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }
}

/// One bias-corrected Adam update. Gradients are checked for finiteness
/// before anything is written.
pub fn adam_step<P: ParamTensors>(
    params: &mut P,
    state: &mut AdamState,
    grads: &P,
    lr: f64,
) -> Result<(), NnError> {
    let g = grads.tensors();
    {
        let p = params.tensors();
        if p.len() != g.len()
            || p.len() != state.m.len()
            || p.iter().zip(&g).zip(&state.m).any(|((a, b), c)| a.len() != b.len() || a.len() != c.len())
        {
            return Err(NnError::ShapeMismatch);
        }
    }
    if let Some(tensor) = g.iter().position(|t| t.iter().any(|x| !x.is_finite())) {
        return Err(NnError::NonFiniteGradient { tensor });
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(g).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..p.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    params.project();
    debug_assert!(params.tensors().iter().all(|t| t.iter().all(|x| x.is_finite())));
    Ok(())
}
