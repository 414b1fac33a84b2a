//! Independent oracles shared by the integration suites. Nothing here calls
//! into the loss or gradient code it is used to check.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transboost_core::model::{self, Arch, Dims, MeanCrossEntropy, Parameters, LOG_EPS};
use transboost_core::transloss::{Combined, Snapshot, TransBoostMinibatch, TransLossConfig, Variant};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random probability vector of length `c` via normalized exponentials.
pub fn random_probs(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..c).map(|_| (rng.random_range(-3.0..3.0f64)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

/// Straight-line softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Logits of a linear or one-hidden-layer tanh network from a flat buffer
/// laid out as W [c×d], b [c] or W1 [h×d], b1 [h], W2 [c×h], b2 [c].
pub fn logits(flat: &[f64], d: usize, h: usize, c: usize, x: &[f64]) -> Vec<f64> {
    let mat = |w: &[f64], b: &[f64], v: &[f64], rows: usize| -> Vec<f64> {
        (0..rows)
            .map(|r| b[r] + (0..v.len()).map(|k| w[r * v.len() + k] * v[k]).sum::<f64>())
            .collect()
    };
    if h == 0 {
        mat(&flat[..c * d], &flat[c * d..c * d + c], x, c)
    } else {
        let w1 = &flat[..h * d];
        let b1 = &flat[h * d..h * d + h];
        let w2 = &flat[h * d + h..h * d + h + c * h];
        let b2 = &flat[h * d + h + c * h..];
        let hidden: Vec<f64> = mat(w1, b1, x, h).into_iter().map(f64::tanh).collect();
        mat(w2, b2, &hidden, c)
    }
}

/// `√2 − sqrt(‖p − q‖² + eps²)`, written out directly.
pub fn sim(p: &[f64], q: &[f64], eps: f64) -> f64 {
    let mut s = 0.0;
    for k in 0..p.len() {
        s += (p[k] - q[k]).powi(2);
    }
    2f64.sqrt() - (s + eps * eps).sqrt()
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Var {
    Separate,
    Attract,
    Both,
}

/// Brute-force pair enumeration of the exact loss.
pub fn brute_exact(probs: &[Vec<f64>], labels: &[usize], conf: &[f64], eps: f64, var: Var) -> f64 {
    let n = probs.len();
    let mut sep = (0.0, 0usize);
    let mut att = (0.0, 0usize);
    for i in 0..n {
        for j in 0..n {
            if i >= j {
                continue;
            }
            let w = conf[i] * conf[j];
            let s = sim(&probs[i], &probs[j], eps);
            if labels[i] != labels[j] {
                sep.0 += w * s;
                sep.1 += 1;
            } else {
                att.0 += w * (2f64.sqrt() - s);
                att.1 += 1;
            }
        }
    }
    let norm = |(v, k): (f64, usize)| if k == 0 { 0.0 } else { v / k as f64 };
    match var {
        Var::Separate => norm(sep),
        Var::Attract => norm(att),
        Var::Both => norm(sep) + norm(att),
    }
}

/// Direct evaluation of the sampled pairs `(i, perm[i])`.
pub fn brute_minibatch(probs: &[Vec<f64>], labels: &[usize], conf: &[f64], perm: &[usize], eps: f64, var: Var) -> f64 {
    let mut sep = (0.0, 0.0);
    let mut att = (0.0, 0.0);
    for (i, &j) in perm.iter().enumerate() {
        let w = conf[i] * conf[j];
        let s = sim(&probs[i], &probs[j], eps);
        if labels[i] != labels[j] {
            sep.0 += w * s;
            sep.1 += 1.0;
        } else if i != j {
            att.0 += w * (2f64.sqrt() - s);
            att.1 += 1.0;
        }
    }
    let norm = |(v, k): (f64, f64)| if k == 0.0 { 0.0 } else { v / k };
    match var {
        Var::Separate => norm(sep),
        Var::Attract => norm(att),
        Var::Both => norm(sep) + norm(att),
    }
}

/// Central finite differences of `f` at `x` with step `h`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|k| {
            work[k] = x[k] + h;
            let up = f(&work);
            work[k] = x[k] - h;
            let down = f(&work);
            work[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Elementwise relative error `|a − n| / max(|a|, |n|, floor)`, maximized.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Uniform random derangement by rejection.
pub fn derangement(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().all(|(i, &j)| i != j) {
            return p;
        }
    }
}

// Gradient-check instances.

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Denominator floor for the elementwise relative error; below it the
/// comparison is effectively absolute.
pub const FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
pub enum Kind {
    Ce,
    Separate,
    Attract,
    Combined,
}

pub struct Case {
    pub params: Parameters,
    pub labeled: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub unlabeled: Vec<Vec<f64>>,
    pub pseudo: Vec<usize>,
    pub conf: Vec<f64>,
    pub perm: Vec<usize>,
}

pub fn case(arch: Arch, seed: u64) -> Case {
    let mut r = rng(seed);
    let (d, c) = (4, 3);
    let dims = match arch {
        Arch::Linear => Dims::linear(d, c),
        Arch::Mlp1 => Dims::mlp1(d, 5, c),
    };
    let mut params = Parameters::init(arch, dims, seed).unwrap();
    for w in params.as_mut_slice() {
        *w += r.random_range(-0.5..0.5);
    }
    let row = |r: &mut rand_chacha::ChaCha8Rng| (0..d).map(|_| r.random_range(-2.0..2.0)).collect::<Vec<f64>>();
    let nl = r.random_range(1..6);
    let nu = r.random_range(2..9);
    let labeled = (0..nl).map(|_| row(&mut r)).collect();
    let labels = (0..nl).map(|_| r.random_range(0..c)).collect();
    let unlabeled = (0..nu).map(|_| row(&mut r)).collect();
    let pseudo = (0..nu).map(|_| r.random_range(0..c)).collect();
    let conf = (0..nu).map(|_| r.random_range(0.34..1.0)).collect();
    let mut perm: Vec<usize> = (0..nu).collect();
    perm.shuffle(&mut r);
    Case { params, labeled, labels, unlabeled, pseudo, conf, perm }
}

pub fn oracle_loss(c: &Case, kind: Kind, flat: &[f64], lambda: f64) -> f64 {
    let Dims { d, h, c: classes } = c.params.dims();
    let probs = |rows: &[Vec<f64>]| rows.iter().map(|x| softmax(&logits(flat, d, h, classes, x))).collect::<Vec<_>>();
    let ce = || {
        let p = probs(&c.labeled);
        p.iter().zip(&c.labels).map(|(p, &y)| -(p[y] + LOG_EPS).ln()).sum::<f64>() / p.len() as f64
    };
    let trans = |var| brute_minibatch(&probs(&c.unlabeled), &c.pseudo, &c.conf, &c.perm, 1e-12, var);
    match kind {
        Kind::Ce => ce(),
        Kind::Separate => trans(Var::Separate),
        Kind::Attract => trans(Var::Attract),
        Kind::Combined => ce() + lambda * trans(Var::Separate),
    }
}

pub fn analytic(c: &Case, kind: Kind, lambda: f64) -> Vec<f64> {
    let snapshot = Snapshot::new(c.pseudo.clone(), c.conf.clone(), 3, "t".into()).unwrap();
    let cfg = |variant| TransLossConfig { lambda, variant, eps_norm: 1e-12 };
    let lrows: Vec<&[f64]> = c.labeled.iter().map(|v| v.as_slice()).collect();
    let urows: Vec<&[f64]> = c.unlabeled.iter().map(|v| v.as_slice()).collect();
    let ce = MeanCrossEntropy { labels: &c.labels };
    let mb = |variant| TransBoostMinibatch { snapshot: &snapshot, perm: &c.perm, config: cfg(variant) };
    let g = match kind {
        Kind::Ce => model::grad(&c.params, &lrows, &ce),
        Kind::Separate => model::grad(&c.params, &urows, &mb(Variant::Separate)),
        Kind::Attract => model::grad(&c.params, &urows, &mb(Variant::Attract)),
        Kind::Combined => {
            let trans = mb(Variant::Separate);
            let all: Vec<&[f64]> = lrows.iter().chain(&urows).copied().collect();
            let obj = Combined { labeled: lrows.len(), supervised: &ce, regularizer: &trans, lambda };
            model::grad(&c.params, &all, &obj)
        }
    };
    g.unwrap().1.as_slice().to_vec()
}

/// Worst elementwise relative error over seeded instances `seeds`, with the
/// seed that produced it.
pub fn gradient_error(arch: Arch, kind: Kind, seeds: std::ops::Range<u64>) -> (f64, u64) {
    let mut worst = (0.0, 0);
    for seed in seeds {
        let c = case(arch, seed);
        let a = analytic(&c, kind, 2.0);
        let n = central_diff(|w| oracle_loss(&c, kind, w, 2.0), c.params.as_slice(), STEP);
        let err = max_rel_err(&a, &n, FLOOR);
        if err > worst.0 {
            worst = (err, seed);
        }
    }
    worst
}
