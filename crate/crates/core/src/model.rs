//! Reference softmax classifiers with exact gradients.
//!
//! Two architectures are provided: a linear map (`Linear`) and a single
//! hidden layer with `tanh` activation (`Mlp1`). Parameters live in one flat
//! buffer; [`TensorShape`] describes how that buffer is cut into weight
//! matrices and bias vectors. Gradients of any scalar batch loss that is a
//! function of the per-row softmax outputs are computed by [`grad`], given
//! the loss's gradient with respect to those probabilities ([`BatchLoss`]).

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{check_index, input_err, numeric_err, shape_err, Result};
use crate::rng::{self, Stream};

/// Guard added inside every logarithm of a probability.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "lowercase")
)]
pub enum Arch {
    Linear,
    Mlp1,
}

/// Input width `d`, hidden width `h` (zero for `Linear`) and class count `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dims {
    pub d: usize,
    pub h: usize,
    pub c: usize,
}

impl Dims {
    pub fn linear(d: usize, c: usize) -> Self {
        Dims { d, h: 0, c }
    }

    pub fn mlp1(d: usize, h: usize, c: usize) -> Self {
        Dims { d, h, c }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorShape {
    /// Row-major `rows × cols` matrix.
    Matrix { rows: usize, cols: usize },
    Vector(usize),
}

impl TensorShape {
    pub fn len(&self) -> usize {
        match *self {
            TensorShape::Matrix { rows, cols } => rows * cols,
            TensorShape::Vector(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn layout(arch: Arch, dims: Dims) -> Vec<TensorShape> {
    let Dims { d, h, c } = dims;
    match arch {
        Arch::Linear => vec![TensorShape::Matrix { rows: c, cols: d }, TensorShape::Vector(c)],
        Arch::Mlp1 => vec![
            TensorShape::Matrix { rows: h, cols: d },
            TensorShape::Vector(h),
            TensorShape::Matrix { rows: c, cols: h },
            TensorShape::Vector(c),
        ],
    }
}

fn validate_dims(arch: Arch, dims: Dims) -> Result<()> {
    if dims.d == 0 || dims.c == 0 {
        return Err(shape_err!("input width and class count must be positive, got {dims:?}"));
    }
    match arch {
        Arch::Linear if dims.h != 0 => Err(shape_err!("linear model has no hidden layer, got h = {}", dims.h)),
        Arch::Mlp1 if dims.h == 0 => Err(shape_err!("mlp1 requires a positive hidden width")),
        _ => Ok(()),
    }
}

/// Model parameters: architecture, dimensions and a flat weight buffer laid
/// out tensor after tensor as given by [`Parameters::shapes`].
///
/// Linear: `W [c×d]`, `b [c]`. Mlp1: `W1 [h×d]`, `b1 [h]`, `W2 [c×h]`, `b2 [c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    arch: Arch,
    dims: Dims,
    data: Vec<f64>,
}

impl Parameters {
    pub fn zeros(arch: Arch, dims: Dims) -> Result<Self> {
        validate_dims(arch, dims)?;
        let len = layout(arch, dims).iter().map(TensorShape::len).sum();
        Ok(Parameters { arch, dims, data: vec![0.0; len] })
    }

    /// Seeded initialization: every weight matrix uniform in `(-a, a)` with
    /// `a = sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(arch: Arch, dims: Dims, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(arch, dims)?;
        let mut rng = rng::stream(seed, Stream::Init);
        let mut offset = 0;
        for shape in layout(arch, dims) {
            if let TensorShape::Matrix { rows, cols } = shape {
                let a = libm::sqrt(6.0 / (rows + cols) as f64);
                for w in &mut params.data[offset..offset + shape.len()] {
                    *w = rng.random_range(-a..a);
                }
            }
            offset += shape.len();
        }
        Ok(params)
    }

    /// Builds parameters from per-tensor buffers in layout order.
    pub fn from_tensors(arch: Arch, dims: Dims, tensors: &[Vec<f64>]) -> Result<Self> {
        validate_dims(arch, dims)?;
        let shapes = layout(arch, dims);
        if tensors.len() != shapes.len() {
            return Err(shape_err!("{arch:?} expects {} tensors, got {}", shapes.len(), tensors.len()));
        }
        let mut data = Vec::with_capacity(shapes.iter().map(TensorShape::len).sum());
        for (k, (shape, t)) in shapes.iter().zip(tensors).enumerate() {
            if t.len() != shape.len() {
                return Err(shape_err!("tensor {k}: expected {} values for {shape:?}, got {}", shape.len(), t.len()));
            }
            if let Some(pos) = t.iter().position(|v| !v.is_finite()) {
                return Err(numeric_err!("tensor {k} entry {pos}"));
            }
            data.extend_from_slice(t);
        }
        Ok(Parameters { arch, dims, data })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn shapes(&self) -> Vec<TensorShape> {
        layout(self.arch, self.dims)
    }

    /// Per-tensor views in layout order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        split_tensors(&self.data, &self.shapes())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn trace(&self, x: &[f64]) -> Result<Trace> {
        let Dims { d, h, c } = self.dims;
        if x.len() != d {
            return Err(shape_err!("feature vector has length {}, model expects {d}", x.len()));
        }
        let w = &self.data;
        match self.arch {
            Arch::Linear => {
                let (wm, b) = w.split_at(c * d);
                Ok(Trace { hidden: Vec::new(), logits: affine(wm, b, x) })
            }
            Arch::Mlp1 => {
                let (w1, rest) = w.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(c * h);
                let mut hidden = affine(w1, b1, x);
                for a in &mut hidden {
                    *a = libm::tanh(*a);
                }
                let logits = affine(w2, b2, &hidden);
                Ok(Trace { hidden, logits })
            }
        }
    }
}

fn split_tensors<'a>(data: &'a [f64], shapes: &[TensorShape]) -> Vec<&'a [f64]> {
    let mut out = Vec::with_capacity(shapes.len());
    let mut rest = data;
    for shape in shapes {
        let (head, tail) = rest.split_at(shape.len());
        out.push(head);
        rest = tail;
    }
    out
}

/// `W x + b` for row-major `W`.
fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(r, &bias)| {
            let row = &w[r * cols..(r + 1) * cols];
            row.iter().zip(x).fold(bias, |acc, (wi, xi)| acc + wi * xi)
        })
        .collect()
}

struct Trace {
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

/// Gradient buffer congruent with a [`Parameters`] value.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    arch: Arch,
    dims: Dims,
    data: Vec<f64>,
}

impl GradientSet {
    pub fn zeros_like(params: &Parameters) -> Self {
        GradientSet { arch: params.arch, dims: params.dims, data: vec![0.0; params.len()] }
    }

    pub fn from_vec(params: &Parameters, data: Vec<f64>) -> Result<Self> {
        if data.len() != params.len() {
            return Err(shape_err!("gradient has {} entries, parameters have {}", data.len(), params.len()));
        }
        Ok(GradientSet { arch: params.arch, dims: params.dims, data })
    }

    pub fn is_congruent(&self, params: &Parameters) -> bool {
        self.arch == params.arch && self.dims == params.dims && self.data.len() == params.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        split_tensors(&self.data, &layout(self.arch, self.dims))
    }
}

/// A probability vector: entries in `[0, 1]` summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Tolerance on the sum of entries accepted by [`ProbVector::new`].
    pub const SUM_TOL: f64 = 1e-9;

    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(input_err!("empty probability vector"));
        }
        if let Some(k) = p.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(input_err!("probability entry {k} = {} outside [0, 1]", p[k]));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOL {
            return Err(input_err!("probabilities sum to {sum}"));
        }
        Ok(ProbVector(p))
    }

    pub fn uniform(c: usize) -> Self {
        ProbVector(vec![1.0 / c as f64; c])
    }

    pub fn one_hot(c: usize, k: usize) -> Self {
        let mut p = vec![0.0; c];
        p[k] = 1.0;
        ProbVector(p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl core::ops::Index<usize> for ProbVector {
    type Output = f64;

    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

pub fn forward(params: &Parameters, x: &[f64]) -> Result<Vec<f64>> {
    Ok(params.trace(x)?.logits)
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> ProbVector {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|z| libm::exp(z - max)).collect();
    let sum: f64 = p.iter().sum();
    for v in &mut p {
        *v /= sum;
    }
    ProbVector(p)
}

/// `-ln(p_y + LOG_EPS)`.
pub fn cross_entropy(p: &ProbVector, y: usize) -> Result<f64> {
    check_index(y, p.len())?;
    Ok(-libm::log(p[y] + LOG_EPS))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

pub fn predict(params: &Parameters, x: &[f64]) -> Result<usize> {
    Ok(argmax(&forward(params, x)?))
}

pub fn predict_proba(params: &Parameters, x: &[f64]) -> Result<ProbVector> {
    Ok(softmax(&forward(params, x)?))
}

/// Softmax outputs for every row.
pub fn probabilities(params: &Parameters, rows: &[&[f64]]) -> Result<Vec<ProbVector>> {
    rows.iter().map(|x| predict_proba(params, x)).collect()
}

/// A scalar loss over a batch of softmax outputs.
pub trait BatchLoss {
    /// Loss value and its gradient with respect to each row's probability vector.
    fn value_and_grad(&self, probs: &[ProbVector]) -> Result<(f64, Vec<Vec<f64>>)>;

    fn value(&self, probs: &[ProbVector]) -> Result<f64> {
        Ok(self.value_and_grad(probs)?.0)
    }
}

/// Mean cross-entropy against integer labels, one per row.
#[derive(Debug, Clone, Copy)]
pub struct MeanCrossEntropy<'a> {
    pub labels: &'a [usize],
}

impl BatchLoss for MeanCrossEntropy<'_> {
    fn value_and_grad(&self, probs: &[ProbVector]) -> Result<(f64, Vec<Vec<f64>>)> {
        if probs.len() != self.labels.len() {
            return Err(shape_err!("{} rows but {} labels", probs.len(), self.labels.len()));
        }
        if probs.is_empty() {
            return Err(input_err!("cross-entropy over an empty batch"));
        }
        let scale = 1.0 / probs.len() as f64;
        let mut total = 0.0;
        let mut grads = Vec::with_capacity(probs.len());
        for (p, &y) in probs.iter().zip(self.labels) {
            total += cross_entropy(p, y)?;
            let mut g = vec![0.0; p.len()];
            g[y] = -scale / (p[y] + LOG_EPS);
            grads.push(g);
        }
        Ok((total * scale, grads))
    }
}

/// Evaluates `loss` on the softmax outputs of `rows`.
pub fn batch_loss(params: &Parameters, rows: &[&[f64]], loss: &dyn BatchLoss) -> Result<f64> {
    let probs = probabilities(params, rows)?;
    loss.value(&probs)
}

/// Exact gradient of `loss` with respect to every parameter.
///
/// Returns the loss value alongside the gradient. Rows are reduced in index
/// order, so the result is bit-stable for fixed inputs.
pub fn grad(params: &Parameters, rows: &[&[f64]], loss: &dyn BatchLoss) -> Result<(f64, GradientSet)> {
    let mut traces = Vec::with_capacity(rows.len());
    let mut probs = Vec::with_capacity(rows.len());
    for (n, x) in rows.iter().enumerate() {
        let t = params.trace(x)?;
        if t.logits.iter().any(|z| !z.is_finite()) {
            return Err(numeric_err!("logits of row {n}"));
        }
        probs.push(softmax(&t.logits));
        traces.push(t);
    }
    let (value, row_grads) = loss.value_and_grad(&probs)?;
    if !value.is_finite() {
        return Err(numeric_err!("loss value"));
    }
    if row_grads.len() != rows.len() {
        return Err(shape_err!("loss returned {} row gradients for {} rows", row_grads.len(), rows.len()));
    }

    let Dims { d, h, c } = params.dims;
    let mut out = GradientSet::zeros_like(params);
    let mut dz = vec![0.0; c];
    let mut dh = vec![0.0; h];
    for (n, ((x, t), (p, g))) in rows.iter().zip(&traces).zip(probs.iter().zip(&row_grads)).enumerate() {
        if g.len() != c {
            return Err(shape_err!("row {n} gradient has length {}, expected {c}", g.len()));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(numeric_err!("loss gradient of row {n}"));
        }
        if g.iter().all(|v| *v == 0.0) {
            continue;
        }
        // Softmax Jacobian-vector product: dz = p ⊙ (g - <g, p>).
        let dot: f64 = g.iter().zip(p.as_slice()).map(|(a, b)| a * b).sum();
        for k in 0..c {
            dz[k] = p[k] * (g[k] - dot);
        }
        match params.arch {
            Arch::Linear => {
                let (gw, gb) = out.data.split_at_mut(c * d);
                outer_acc(gw, gb, &dz, x);
            }
            Arch::Mlp1 => {
                let (gw1, rest) = out.data.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(c * h);
                outer_acc(gw2, gb2, &dz, &t.hidden);
                let w2 = &params.data[h * d + h..h * d + h + c * h];
                for j in 0..h {
                    let back: f64 = (0..c).map(|k| w2[k * h + j] * dz[k]).sum();
                    let a = t.hidden[j];
                    dh[j] = back * (1.0 - a * a);
                }
                outer_acc(gw1, gb1, &dh, x);
            }
        }
    }
    Ok((value, out))
}

/// `gw += delta xᵀ`, `gb += delta`.
fn outer_acc(gw: &mut [f64], gb: &mut [f64], delta: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &dr) in delta.iter().enumerate() {
        gb[r] += dr;
        for (w, xi) in gw[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *w += dr * xi;
        }
    }
}
