//! Dense numeric primitives: a row-major matrix, the two-layer perceptron used
//! for every encoder/decoder/head, l2 normalization, cosine similarity and the
//! AdaGrad optimizer.
//!
//! Everything runs in `f64` and every backward pass is exact, so the gradient
//! checks in the test suite can use tight tolerances.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, HscError, Result};

/// Norms below this are treated as degenerate by normalization and cosine similarity.
pub const NORM_FLOOR: f64 = 1e-12;

/// Default AdaGrad epsilon.
pub const ADAGRAD_EPS: f64 = 1e-8;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("matrix data length", rows * cols, data.len())?;
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim("matrix row length", cols, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Uniform Glorot initialization in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// `self · x`
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("matvec input", self.cols, x.len())?;
        Ok(self.iter_rows().map(|row| dot(row, x)).collect())
    }

    /// `selfᵀ · y`
    pub fn matvec_t(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim("transposed matvec input", self.rows, y.len())?;
        let mut out = vec![0.0; self.cols];
        for (row, &yr) in self.iter_rows().zip(y) {
            if yr != 0.0 {
                axpy(yr, row, &mut out);
            }
        }
        Ok(out)
    }

    /// `self += scale · u vᵀ`
    pub fn add_outer(&mut self, scale: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        let cols = self.cols;
        for (r, &ur) in u.iter().enumerate() {
            let s = scale * ur;
            if s != 0.0 {
                axpy(s, v, &mut self.data[r * cols..(r + 1) * cols]);
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha · x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// `log Σ exp(z)` without overflow.
pub fn log_sum_exp(logits: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = logits.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + logits.into_iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

pub(crate) fn ensure_finite(context: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(HscError::NonFinite(context))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[default]
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
        }
    }

    /// Subgradient; 0 at the kink.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Hidden width used when none is configured: mean of input and output dims, rounded up.
pub fn default_hidden(input: usize, output: usize) -> usize {
    (input + output).div_ceil(2)
}

/// Parameters of `y = W2 · act(W1 · x + b1) + b2`.
///
/// The same type doubles as the gradient container, since gradients share the
/// parameter shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp2Params {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub activation: Activation,
}

/// Intermediates kept by [`Mlp2Params::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct Mlp2Cache {
    input: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
}

impl Mlp2Params {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        Mlp2Params {
            w1: Matrix::glorot(hidden, input, rng),
            b1: vec![0.0; hidden],
            w2: Matrix::glorot(output, hidden, rng),
            b2: vec![0.0; output],
            activation: Activation::Relu,
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Mlp2Params {
            w1: Matrix::zeros(hidden, input),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(output, hidden),
            b2: vec![0.0; output],
            activation: Activation::Relu,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden_dim(), self.output_dim())
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows()
    }

    /// Checks that the four blocks agree with each other.
    pub fn validate(&self) -> Result<()> {
        check_dim("mlp b1", self.w1.rows(), self.b1.len())?;
        check_dim("mlp w2 cols", self.w1.rows(), self.w2.cols())?;
        check_dim("mlp b2", self.w2.rows(), self.b2.len())?;
        if self.input_dim() == 0 || self.hidden_dim() == 0 || self.output_dim() == 0 {
            return Err(HscError::Usage("mlp dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Mlp2Cache)> {
        check_dim("mlp input", self.input_dim(), x.len())?;
        let mut pre = self.w1.matvec(x)?;
        for (p, b) in pre.iter_mut().zip(&self.b1) {
            *p += b;
        }
        let hidden: Vec<f64> = pre.iter().map(|&z| self.activation.apply(z)).collect();
        let mut y = self.w2.matvec(&hidden)?;
        for (v, b) in y.iter_mut().zip(&self.b2) {
            *v += b;
        }
        ensure_finite("mlp forward", &y)?;
        Ok((
            y,
            Mlp2Cache {
                input: x.to_vec(),
                pre,
                hidden,
            },
        ))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Gradients of `⟨dy, y(x)⟩` w.r.t. the input and every parameter.
    pub fn backward(&self, cache: &Mlp2Cache, dy: &[f64]) -> Result<(Vec<f64>, Mlp2Params)> {
        let mut grads = self.zeros_like();
        let dx = self.backward_into(cache, dy, &mut grads)?;
        Ok((dx, grads))
    }

    /// Like [`backward`](Self::backward) but adds the parameter gradients into `grads`.
    pub fn backward_into(
        &self,
        cache: &Mlp2Cache,
        dy: &[f64],
        grads: &mut Mlp2Params,
    ) -> Result<Vec<f64>> {
        if cache.input.len() != self.input_dim() || cache.pre.len() != self.hidden_dim() {
            return Err(HscError::Usage(format!(
                "cache from a {}→{} network used with a {}→{} network",
                cache.input.len(),
                cache.pre.len(),
                self.input_dim(),
                self.hidden_dim()
            )));
        }
        check_dim("mlp cotangent", self.output_dim(), dy.len())?;
        check_dim("mlp grads", self.hidden_dim(), grads.hidden_dim())?;

        axpy(1.0, dy, &mut grads.b2);
        grads.w2.add_outer(1.0, dy, &cache.hidden);
        let mut dpre = self.w2.matvec_t(dy)?;
        for (d, &z) in dpre.iter_mut().zip(&cache.pre) {
            *d *= self.activation.derivative(z);
        }
        axpy(1.0, &dpre, &mut grads.b1);
        grads.w1.add_outer(1.0, &dpre, &cache.input);
        self.w1.matvec_t(&dpre)
    }
}

/// Forward pass of a two-layer perceptron.
pub fn mlp2_apply(params: &Mlp2Params, x: &[f64]) -> Result<(Vec<f64>, Mlp2Cache)> {
    params.forward(x)
}

/// Backward pass of a two-layer perceptron.
pub fn mlp2_backward(
    params: &Mlp2Params,
    cache: &Mlp2Cache,
    dy: &[f64],
) -> Result<(Vec<f64>, Mlp2Params)> {
    params.backward(cache, dy)
}

/// Anything the optimizer can update: an ordered list of flat parameter slices.
pub trait Params {
    fn blocks(&self) -> Vec<&[f64]>;
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;
}

impl Params for Matrix {
    fn blocks(&self) -> Vec<&[f64]> {
        vec![&self.data]
    }
    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.data]
    }
}

impl Params for Mlp2Params {
    fn blocks(&self) -> Vec<&[f64]> {
        vec![
            self.w1.as_slice(),
            &self.b1,
            self.w2.as_slice(),
            &self.b2,
        ]
    }
    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }
}

/// Accumulated squared gradients, one buffer per parameter block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaGradState {
    pub accum: Vec<Vec<f64>>,
    pub eps: f64,
}

impl AdaGradState {
    pub fn new(params: &impl Params, eps: f64) -> Self {
        AdaGradState {
            accum: params.blocks().iter().map(|b| vec![0.0; b.len()]).collect(),
            eps,
        }
    }

    /// `accum += g²; p -= lr · g / (sqrt(accum) + eps)`.
    pub fn step<P: Params>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        if !(lr >= 0.0) {
            return Err(HscError::Config(format!("learning rate must be ≥ 0, got {lr}")));
        }
        let grads = grads.blocks();
        let mut params = params.blocks_mut();
        check_dim("adagrad blocks", self.accum.len(), params.len())?;
        check_dim("adagrad grad blocks", self.accum.len(), grads.len())?;
        for ((p, g), acc) in params.iter_mut().zip(&grads).zip(&mut self.accum) {
            check_dim("adagrad block", acc.len(), p.len())?;
            check_dim("adagrad grad block", acc.len(), g.len())?;
            for ((pi, &gi), ai) in p.iter_mut().zip(g.iter()).zip(acc.iter_mut()) {
                *ai += gi * gi;
                *pi -= lr * gi / (ai.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdaGradState::step`].
pub fn adagrad_step<P: Params>(
    params: &mut P,
    grads: &P,
    state: &mut AdaGradState,
    lr: f64,
) -> Result<()> {
    state.step(params, grads, lr)
}

/// Cache for the backward pass of [`l2_normalize`].
#[derive(Clone, Debug)]
pub struct NormCache {
    output: Vec<f64>,
    norm: f64,
}

impl NormCache {
    /// Jacobian-vector product `(dy − y ⟨y, dy⟩) / ‖x‖`.
    pub fn backward(&self, dy: &[f64]) -> Result<Vec<f64>> {
        check_dim("l2 normalize cotangent", self.output.len(), dy.len())?;
        let proj = dot(&self.output, dy);
        Ok(dy
            .iter()
            .zip(&self.output)
            .map(|(d, y)| (d - y * proj) / self.norm)
            .collect())
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }
}

pub fn l2_normalize(x: &[f64]) -> Result<(Vec<f64>, NormCache)> {
    let n = norm(x);
    if !(n > NORM_FLOOR) {
        return Err(HscError::Degenerate(format!(
            "cannot normalize vector with norm {n:e}"
        )));
    }
    let output: Vec<f64> = x.iter().map(|v| v / n).collect();
    Ok((output.clone(), NormCache { output, norm: n }))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim("cosine similarity", a.len(), b.len())?;
    let (na, nb) = (norm(a), norm(b));
    if !(na > NORM_FLOOR && nb > NORM_FLOOR) {
        return Err(HscError::Degenerate(
            "cosine similarity of a zero vector".into(),
        ));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}
