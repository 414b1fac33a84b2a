//! Pairwise transductive loss.
//!
//! Test instances are compared through their softmax outputs. A pair whose
//! frozen pseudo-labels differ is *selected*; for selected pairs the loss
//! charges the similarity of their probability vectors, weighted by the
//! product of the frozen confidences. Minimizing it pushes apart pairs the
//! pretrained model believes belong to different classes, which moves the
//! decision boundary away from dense regions of the test set.
//!
//! Pseudo-labels and confidences come from the pretrained parameters and are
//! held in an immutable [`Snapshot`]; gradients flow only through the
//! current model's probability vectors.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_index, input_err, shape_err, Result};
use crate::model::{BatchLoss, MeanCrossEntropy, ProbVector};

pub const SQRT_2: f64 = core::f64::consts::SQRT_2;

/// Default smoothing inside the L2 norm.
pub const DEFAULT_EPS_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "lowercase")
)]
pub enum Variant {
    /// Push apart pairs with different pseudo-labels.
    Separate,
    /// Pull together pairs with equal pseudo-labels.
    Attract,
    /// Sum of the two, each with its own normalizer.
    Both,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Separate, Variant::Attract, Variant::Both];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Separate => "separate",
            Variant::Attract => "attract",
            Variant::Both => "both",
        }
    }

    fn sides(self) -> &'static [Side] {
        match self {
            Variant::Separate => &[Side::Separate],
            Variant::Attract => &[Side::Attract],
            Variant::Both => &[Side::Separate, Side::Attract],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default))]
pub struct TransLossConfig {
    pub lambda: f64,
    pub variant: Variant,
    pub eps_norm: f64,
}

impl Default for TransLossConfig {
    fn default() -> Self {
        TransLossConfig { lambda: 2.0, variant: Variant::Separate, eps_norm: DEFAULT_EPS_NORM }
    }
}

impl TransLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(input_err!("lambda must be finite and nonnegative, got {}", self.lambda));
        }
        if !(self.eps_norm > 0.0 && self.eps_norm.is_finite()) {
            return Err(input_err!("eps_norm must be positive, got {}", self.eps_norm));
        }
        Ok(())
    }
}

/// Pseudo-labels and confidences of the frozen pretrained model, one entry
/// per test instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pseudo_labels: Vec<usize>,
    confidences: Vec<f64>,
    source_tag: String,
}

impl Snapshot {
    pub fn new(pseudo_labels: Vec<usize>, confidences: Vec<f64>, classes: usize, source_tag: String) -> Result<Self> {
        if pseudo_labels.len() != confidences.len() {
            return Err(shape_err!("{} pseudo-labels but {} confidences", pseudo_labels.len(), confidences.len()));
        }
        if let Some(i) = pseudo_labels.iter().position(|&y| y >= classes) {
            return Err(input_err!("pseudo-label {} at {i} outside [0, {classes})", pseudo_labels[i]));
        }
        if let Some(i) = confidences.iter().position(|k| !(*k > 0.0 && *k <= 1.0)) {
            return Err(input_err!("confidence {} at {i} outside (0, 1]", confidences[i]));
        }
        Ok(Snapshot { pseudo_labels, confidences, source_tag })
    }

    pub fn len(&self) -> usize {
        self.pseudo_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pseudo_labels.is_empty()
    }

    pub fn pseudo_labels(&self) -> &[usize] {
        &self.pseudo_labels
    }

    pub fn confidences(&self) -> &[f64] {
        &self.confidences
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    /// Entries at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Snapshot> {
        let mut pseudo_labels = Vec::with_capacity(indices.len());
        let mut confidences = Vec::with_capacity(indices.len());
        for &i in indices {
            check_index(i, self.len())?;
            pseudo_labels.push(self.pseudo_labels[i]);
            confidences.push(self.confidences[i]);
        }
        Ok(Snapshot { pseudo_labels, confidences, source_tag: self.source_tag.clone() })
    }
}

/// `√2 − sqrt(‖p − q‖² + eps²)`.
pub fn similarity(p: &ProbVector, q: &ProbVector, eps_norm: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(shape_err!("probability vectors of length {} and {}", p.len(), q.len()));
    }
    Ok(SQRT_2 - smoothed_distance(p.as_slice(), q.as_slice(), eps_norm))
}

fn smoothed_distance(p: &[f64], q: &[f64], eps_norm: f64) -> f64 {
    let sq: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
    libm::sqrt(sq + eps_norm * eps_norm)
}

/// 1 iff the pseudo-labels of `i` and `j` differ.
pub fn delta(snapshot: &Snapshot, i: usize, j: usize) -> Result<u8> {
    check_index(i, snapshot.len())?;
    check_index(j, snapshot.len())?;
    Ok(u8::from(snapshot.pseudo_labels[i] != snapshot.pseudo_labels[j]))
}

/// Softmax response: the largest class probability.
pub fn kappa(p: &ProbVector) -> f64 {
    p.as_slice().iter().copied().fold(0.0, f64::max)
}

/// One summand of the exact loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTerm {
    pub i: usize,
    pub j: usize,
    pub selected: u8,
    pub weight: f64,
    pub similarity: f64,
}

/// All pairs `i < j` with their selection bit, weight and similarity.
pub fn pair_terms(probs: &[ProbVector], snapshot: &Snapshot, eps_norm: f64) -> Result<Vec<PairTerm>> {
    check_lengths(probs, snapshot)?;
    let n = probs.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(PairTerm {
                i,
                j,
                selected: delta(snapshot, i, j)?,
                weight: snapshot.confidences[i] * snapshot.confidences[j],
                similarity: similarity(&probs[i], &probs[j], eps_norm)?,
            });
        }
    }
    Ok(out)
}

fn check_lengths(probs: &[ProbVector], snapshot: &Snapshot) -> Result<()> {
    if probs.len() != snapshot.len() {
        return Err(shape_err!("{} probability vectors for a snapshot of {}", probs.len(), snapshot.len()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Separate,
    Attract,
}

impl Side {
    fn selects(self, i: usize, j: usize, snapshot: &Snapshot) -> bool {
        let differ = snapshot.pseudo_labels[i] != snapshot.pseudo_labels[j];
        match self {
            Side::Separate => differ,
            // A self-pair is never a pair of distinct test instances.
            Side::Attract => !differ && i != j,
        }
    }
}

/// Value and per-row probability gradients of the loss restricted to `pairs`.
fn pair_loss(
    probs: &[ProbVector],
    snapshot: &Snapshot,
    pairs: &[(usize, usize)],
    config: &TransLossConfig,
    want_grad: bool,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let c = probs.first().map_or(0, ProbVector::len);
    if let Some(n) = probs.iter().position(|p| p.len() != c) {
        return Err(shape_err!("row {n} has {} classes, expected {c}", probs[n].len()));
    }
    let mut grads = if want_grad { vec![vec![0.0; c]; probs.len()] } else { Vec::new() };
    let mut total = 0.0;
    let mut side_grad = vec![vec![0.0; c]; if want_grad { probs.len() } else { 0 }];
    for &side in config.variant.sides() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for row in &mut side_grad {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
        for &(i, j) in pairs {
            if !side.selects(i, j, snapshot) {
                continue;
            }
            count += 1;
            let (pi, pj) = (probs[i].as_slice(), probs[j].as_slice());
            let w = snapshot.confidences[i] * snapshot.confidences[j];
            let r = smoothed_distance(pi, pj, config.eps_norm);
            // Separate charges S = √2 − r, Attract charges √2 − S = r.
            let (term, sign) = match side {
                Side::Separate => (SQRT_2 - r, -1.0),
                Side::Attract => (r, 1.0),
            };
            sum += w * term;
            if want_grad {
                let scale = sign * w / r;
                for k in 0..c {
                    let g = scale * (pi[k] - pj[k]);
                    side_grad[i][k] += g;
                    side_grad[j][k] -= g;
                }
            }
        }
        if count == 0 {
            continue;
        }
        let norm = 1.0 / count as f64;
        total += sum * norm;
        if want_grad {
            for (acc, g) in grads.iter_mut().zip(&side_grad) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b * norm;
                }
            }
        }
    }
    Ok((total, grads))
}

/// Result of [`exact_loss`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactLoss {
    pub value: f64,
    /// Fewer than two instances: no pairs exist and the value is 0.
    pub too_few_instances: bool,
}

fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// The loss over all pairs `i < j` of the test set.
pub fn exact_loss(probs: &[ProbVector], snapshot: &Snapshot, config: &TransLossConfig) -> Result<ExactLoss> {
    check_lengths(probs, snapshot)?;
    if probs.len() < 2 {
        log::warn!("exact loss over {} instance(s) has no pairs; reporting 0", probs.len());
        return Ok(ExactLoss { value: 0.0, too_few_instances: true });
    }
    let (value, _) = pair_loss(probs, snapshot, &all_pairs(probs.len()), config, false)?;
    Ok(ExactLoss { value, too_few_instances: false })
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(input_err!("permutation of length {} for a batch of {n}", perm.len()));
    }
    let mut seen = vec![false; n];
    for &k in perm {
        if k >= n || seen[k] {
            return Err(input_err!("not a permutation of 0..{n}"));
        }
        seen[k] = true;
    }
    Ok(())
}

/// Minibatch estimate over the pairs `(i, perm[i])`, normalized by the
/// number of selected pairs; zero when no pair is selected.
pub fn minibatch_loss(
    batch_probs: &[ProbVector],
    batch_snapshot: &Snapshot,
    perm: &[usize],
    config: &TransLossConfig,
) -> Result<f64> {
    TransBoostMinibatch { snapshot: batch_snapshot, perm, config: *config }.value(batch_probs)
}

/// `mean CE(labeled) + λ · minibatch_loss(unlabeled)`.
pub fn combined_objective(
    labeled_probs: &[ProbVector],
    labels: &[usize],
    unlabeled_probs: &[ProbVector],
    batch_snapshot: &Snapshot,
    perm: &[usize],
    config: &TransLossConfig,
) -> Result<f64> {
    let ce = MeanCrossEntropy { labels }.value(labeled_probs)?;
    if config.lambda == 0.0 {
        return Ok(ce);
    }
    Ok(ce + config.lambda * minibatch_loss(unlabeled_probs, batch_snapshot, perm, config)?)
}

/// Exact transductive loss as a [`BatchLoss`] over the whole test set.
#[derive(Debug, Clone, Copy)]
pub struct TransBoostExact<'a> {
    pub snapshot: &'a Snapshot,
    pub config: TransLossConfig,
}

impl BatchLoss for TransBoostExact<'_> {
    fn value_and_grad(&self, probs: &[ProbVector]) -> Result<(f64, Vec<Vec<f64>>)> {
        check_lengths(probs, self.snapshot)?;
        pair_loss(probs, self.snapshot, &all_pairs(probs.len()), &self.config, true)
    }

    fn value(&self, probs: &[ProbVector]) -> Result<f64> {
        Ok(exact_loss(probs, self.snapshot, &self.config)?.value)
    }
}

/// Minibatch transductive loss as a [`BatchLoss`] over one unlabeled batch.
#[derive(Debug, Clone, Copy)]
pub struct TransBoostMinibatch<'a> {
    pub snapshot: &'a Snapshot,
    pub perm: &'a [usize],
    pub config: TransLossConfig,
}

impl TransBoostMinibatch<'_> {
    fn pairs(&self, probs: &[ProbVector]) -> Result<Vec<(usize, usize)>> {
        check_lengths(probs, self.snapshot)?;
        check_permutation(self.perm, probs.len())?;
        Ok(self.perm.iter().enumerate().map(|(i, &j)| (i, j)).collect())
    }
}

impl BatchLoss for TransBoostMinibatch<'_> {
    fn value_and_grad(&self, probs: &[ProbVector]) -> Result<(f64, Vec<Vec<f64>>)> {
        let pairs = self.pairs(probs)?;
        pair_loss(probs, self.snapshot, &pairs, &self.config, true)
    }

    fn value(&self, probs: &[ProbVector]) -> Result<f64> {
        let pairs = self.pairs(probs)?;
        Ok(pair_loss(probs, self.snapshot, &pairs, &self.config, false)?.0)
    }
}

/// `supervised(rows[..labeled]) + λ · regularizer(rows[labeled..])`.
///
/// With `λ = 0` the regularizer is not evaluated at all.
pub struct Combined<'a> {
    pub labeled: usize,
    pub supervised: &'a dyn BatchLoss,
    pub regularizer: &'a dyn BatchLoss,
    pub lambda: f64,
}

impl Combined<'_> {
    /// Value of the supervised and regularizer parts separately.
    pub fn parts(&self, probs: &[ProbVector]) -> Result<(f64, f64)> {
        let (l, u) = self.split(probs)?;
        let sup = self.supervised.value(l)?;
        let reg = if self.lambda == 0.0 { 0.0 } else { self.regularizer.value(u)? };
        Ok((sup, reg))
    }

    fn split<'p>(&self, probs: &'p [ProbVector]) -> Result<(&'p [ProbVector], &'p [ProbVector])> {
        if self.labeled > probs.len() {
            return Err(shape_err!("{} labeled rows requested from a batch of {}", self.labeled, probs.len()));
        }
        Ok(probs.split_at(self.labeled))
    }
}

impl BatchLoss for Combined<'_> {
    fn value_and_grad(&self, probs: &[ProbVector]) -> Result<(f64, Vec<Vec<f64>>)> {
        let (l, u) = self.split(probs)?;
        let (mut value, mut grads) = self.supervised.value_and_grad(l)?;
        if self.lambda == 0.0 {
            grads.extend(u.iter().map(|p| vec![0.0; p.len()]));
            return Ok((value, grads));
        }
        let (reg, reg_grads) = self.regularizer.value_and_grad(u)?;
        value += self.lambda * reg;
        grads.extend(reg_grads.into_iter().map(|mut g| {
            g.iter_mut().for_each(|v| *v *= self.lambda);
            g
        }));
        Ok((value, grads))
    }

    fn value(&self, probs: &[ProbVector]) -> Result<f64> {
        let (sup, reg) = self.parts(probs)?;
        Ok(if self.lambda == 0.0 { sup } else { sup + self.lambda * reg })
    }
}
