//! Pretraining, snapshot construction and transductive fine-tuning.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::{LabeledSet, Matrix, UnlabeledSet};
use crate::error::{input_err, numeric_err, shape_err, Result};
use crate::model::{self, Arch, BatchLoss, Dims, GradientSet, MeanCrossEntropy, Parameters, ProbVector, LOG_EPS};
use crate::rng::{self, Stream};
use crate::transloss::{self, Combined, Snapshot, TransBoostMinibatch, TransLossConfig};

/// SGD with (optionally Nesterov) momentum and coupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default))]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { lr: 1e-3, momentum: 0.9, nesterov: true, weight_decay: 1e-4 }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(input_err!("learning rate must be finite and nonnegative, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(input_err!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(input_err!("weight decay must be nonnegative, got {}", self.weight_decay));
        }
        Ok(())
    }
}

/// Velocity buffer, zero at start.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    velocity: Vec<f64>,
}

impl OptimizerState {
    pub fn new(params: &Parameters) -> Self {
        OptimizerState { velocity: vec![0.0; params.len()] }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }
}

/// One optimizer step:
///
/// ```text
/// g ← grad + weight_decay·θ
/// v ← momentum·v + g
/// θ ← θ − lr·(g + momentum·v)   (Nesterov)
/// θ ← θ − lr·v                  (classic)
/// ```
///
/// On a non-finite update nothing is modified.
pub fn sgd_step(params: &mut Parameters, grads: &GradientSet, state: &mut OptimizerState, config: &SgdConfig) -> Result<()> {
    if !grads.is_congruent(params) || state.velocity.len() != params.len() {
        return Err(shape_err!("gradient or optimizer state does not match the parameters"));
    }
    let mu = config.momentum;
    let mut velocity = Vec::with_capacity(params.len());
    let mut updated = Vec::with_capacity(params.len());
    for ((&theta, &g), &v) in params.as_slice().iter().zip(grads.as_slice()).zip(&state.velocity) {
        let g = g + config.weight_decay * theta;
        let v = mu * v + g;
        let step = if config.nesterov { g + mu * v } else { v };
        let next = theta - config.lr * step;
        if !next.is_finite() || !v.is_finite() {
            return Err(numeric_err!("optimizer update of parameter {}", updated.len()));
        }
        velocity.push(v);
        updated.push(next);
    }
    params.as_mut_slice().copy_from_slice(&updated);
    state.velocity = velocity;
    Ok(())
}

/// Walks a shuffled index order in consecutive chunks; reshuffles each time
/// the order is exhausted.
#[derive(Debug, Clone)]
struct Cycler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    passes: usize,
}

impl Cycler {
    fn new(n: usize, batch: usize, rng: &mut rng::Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Cycler { order, pos: 0, batch: batch.clamp(1, n.max(1)), passes: 0 }
    }

    fn steps_per_pass(&self) -> usize {
        self.order.len().div_ceil(self.batch)
    }

    fn next(&mut self, rng: &mut rng::Rng) -> Vec<usize> {
        if self.order.is_empty() {
            return Vec::new();
        }
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        if end == self.order.len() {
            self.passes += 1;
        }
        out
    }
}

/// Paired labeled/unlabeled batch indices.
///
/// An epoch has `max(⌈L/L'⌉, ⌈U/U'⌉)` steps. Each side is traversed in a
/// seeded shuffled order, chunk by chunk (the last chunk of a pass may be
/// short), and reshuffled when it wraps. The side with more chunks per pass
/// therefore visits every element exactly once per epoch; the other side
/// cycles.
#[derive(Debug, Clone)]
pub struct CyclicalBatches {
    labeled: Cycler,
    unlabeled: Cycler,
    rng: rng::Rng,
}

/// Batch stream over `labeled_len` and `unlabeled_len` instances; batch sizes
/// are clamped to the set sizes.
pub fn cyclical_batches(
    labeled_len: usize,
    unlabeled_len: usize,
    labeled_batch: usize,
    unlabeled_batch: usize,
    seed: u64,
) -> CyclicalBatches {
    let mut rng = rng::stream(seed, Stream::Batching);
    let labeled = Cycler::new(labeled_len, labeled_batch, &mut rng);
    let unlabeled = Cycler::new(unlabeled_len, unlabeled_batch, &mut rng);
    CyclicalBatches { labeled, unlabeled, rng }
}

impl CyclicalBatches {
    pub fn steps_per_epoch(&self) -> usize {
        self.labeled.steps_per_pass().max(self.unlabeled.steps_per_pass())
    }

    /// Completed passes over the (labeled, unlabeled) sets so far.
    pub fn passes(&self) -> (usize, usize) {
        (self.labeled.passes, self.unlabeled.passes)
    }

    pub fn next_step(&mut self) -> (Vec<usize>, Vec<usize>) {
        let l = self.labeled.next(&mut self.rng);
        let u = self.unlabeled.next(&mut self.rng);
        (l, u)
    }

    pub fn epoch(&mut self) -> Vec<(Vec<usize>, Vec<usize>)> {
        (0..self.steps_per_epoch()).map(|_| self.next_step()).collect()
    }
}

/// Architecture choice for a fresh model.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default))]
pub struct ModelSpec {
    pub arch: Arch,
    /// Hidden width; ignored by `Linear`.
    pub hidden: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec { arch: Arch::Linear, hidden: 32 }
    }
}

impl ModelSpec {
    pub fn dims(&self, d: usize, c: usize) -> Dims {
        match self.arch {
            Arch::Linear => Dims::linear(d, c),
            Arch::Mlp1 => Dims::mlp1(d, self.hidden, c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default))]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub sgd: SgdConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 100,
            batch: 32,
            sgd: SgdConfig { lr: 0.05, momentum: 0.9, nesterov: true, weight_decay: 1e-4 },
            seed: 0,
        }
    }
}

/// Fine-tuning hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default))]
pub struct TrainConfig {
    pub epochs: usize,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub sgd: SgdConfig,
    pub seed: u64,
    pub loss: TransLossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 120,
            labeled_batch: 64,
            unlabeled_batch: 64,
            sgd: SgdConfig::default(),
            seed: 0,
            loss: TransLossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.labeled_batch == 0 || self.unlabeled_batch == 0 {
            return Err(input_err!("batch sizes must be positive"));
        }
        self.sgd.validate()?;
        self.loss.validate()
    }
}

/// Per-epoch training summary.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub steps: usize,
    /// Mean supervised cross-entropy over the epoch's steps.
    pub ce: f64,
    /// Mean unweighted transductive term over the epoch's steps.
    pub transductive: f64,
}

/// Receives one record per finished epoch.
pub trait Progress {
    fn epoch(&mut self, record: &EpochRecord);
}

impl Progress for () {
    fn epoch(&mut self, _: &EpochRecord) {}
}

impl<F: FnMut(&EpochRecord)> Progress for F {
    fn epoch(&mut self, record: &EpochRecord) {
        self(record)
    }
}

fn gather_rows<'a>(x: &'a Matrix, idx: &[usize]) -> Vec<&'a [f64]> {
    idx.iter().map(|&i| x.row(i)).collect()
}

/// Minibatch SGD on mean cross-entropy from a seeded initialization.
pub fn pretrain(data: &LabeledSet, spec: &ModelSpec, config: &PretrainConfig, progress: &mut dyn Progress) -> Result<Parameters> {
    if data.is_empty() {
        return Err(input_err!("cannot pretrain on an empty dataset"));
    }
    if config.batch == 0 {
        return Err(input_err!("batch size must be positive"));
    }
    config.sgd.validate()?;
    let dims = spec.dims(data.features.cols(), data.classes);
    let mut params = Parameters::init(spec.arch, dims, config.seed)?;
    let mut state = OptimizerState::new(&params);
    let mut rng = rng::stream(config.seed, Stream::Batching);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut ce_sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(config.batch) {
            let rows = gather_rows(&data.features, chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let (ce, g) = model::grad(&params, &rows, &MeanCrossEntropy { labels: &labels })?;
            sgd_step(&mut params, &g, &mut state, &config.sgd)?;
            ce_sum += ce;
            steps += 1;
        }
        progress.epoch(&EpochRecord { epoch, steps, ce: ce_sum / steps as f64, transductive: 0.0 });
    }
    Ok(params)
}

/// Pseudo-labels and confidences of `theta0` on every test instance.
pub fn build_snapshot(theta0: &Parameters, unlabeled: &UnlabeledSet, source_tag: &str) -> Result<Snapshot> {
    let mut labels = Vec::with_capacity(unlabeled.len());
    let mut conf = Vec::with_capacity(unlabeled.len());
    for i in 0..unlabeled.len() {
        let p = model::predict_proba(theta0, unlabeled.features.row(i))?;
        labels.push(model::argmax(p.as_slice()));
        conf.push(transloss::kappa(&p));
    }
    Snapshot::new(labels, conf, theta0.dims().c, String::from(source_tag))
}

/// Mean Shannon entropy (natural log) of the rows' softmax outputs, with
/// the same log guard as cross-entropy.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanEntropy;

impl BatchLoss for MeanEntropy {
    fn value_and_grad(&self, probs: &[ProbVector]) -> Result<(f64, Vec<Vec<f64>>)> {
        if probs.is_empty() {
            return Ok((0.0, Vec::new()));
        }
        let scale = 1.0 / probs.len() as f64;
        let mut total = 0.0;
        let mut grads = Vec::with_capacity(probs.len());
        for p in probs {
            let mut g = Vec::with_capacity(p.len());
            for &pk in p.as_slice() {
                let log = libm::log(pk + LOG_EPS);
                total -= pk * log;
                g.push(-scale * (log + pk / (pk + LOG_EPS)));
            }
            grads.push(g);
        }
        Ok((total * scale, grads))
    }
}

/// What the unlabeled half of each step optimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    /// Cross-entropy only; the unlabeled batches are drawn but unused.
    None,
    /// Pairwise transductive loss against the frozen snapshot.
    TransBoost,
    /// Mean prediction entropy, weighted by `config.loss.lambda`.
    Entropy,
}

/// Common fine-tuning loop. `snapshot` must have been built from `theta0`
/// on `unlabeled` and is required for [`Regularizer::TransBoost`].
///
/// Every step draws a labeled and an unlabeled batch from
/// [`cyclical_batches`], a uniform permutation of the unlabeled batch from
/// the permutation stream, and applies one [`sgd_step`] on
/// `mean CE + λ · regularizer`.
pub fn finetune(
    theta0: &Parameters,
    labeled: &LabeledSet,
    unlabeled: &UnlabeledSet,
    snapshot: Option<&Snapshot>,
    config: &TrainConfig,
    mut regularizer: Regularizer,
    progress: &mut dyn Progress,
) -> Result<Parameters> {
    config.validate()?;
    if labeled.is_empty() {
        return Err(input_err!("fine-tuning needs a nonempty labeled set"));
    }
    if regularizer == Regularizer::TransBoost {
        match snapshot {
            Some(s) if s.len() == unlabeled.len() => {}
            Some(s) => return Err(shape_err!("snapshot covers {} instances, test set has {}", s.len(), unlabeled.len())),
            None => return Err(input_err!("transductive fine-tuning needs a snapshot")),
        }
    }
    if regularizer != Regularizer::None && unlabeled.len() < 2 {
        log::warn!("only {} unlabeled instance(s); falling back to cross-entropy fine-tuning", unlabeled.len());
        regularizer = Regularizer::None;
    }
    let lambda = if regularizer == Regularizer::None { 0.0 } else { config.loss.lambda };

    let mut params = theta0.clone();
    let mut state = OptimizerState::new(&params);
    let mut batches = cyclical_batches(labeled.len(), unlabeled.len(), config.labeled_batch, config.unlabeled_batch, config.seed);
    let mut perm_rng = rng::stream(config.seed, Stream::Permutation);
    let steps = batches.steps_per_epoch();

    for epoch in 1..=config.epochs {
        let mut ce_sum = 0.0;
        let mut reg_sum = 0.0;
        for _ in 0..steps {
            let (li, ui) = batches.next_step();
            let mut perm: Vec<usize> = (0..ui.len()).collect();
            perm.shuffle(&mut perm_rng);

            let mut rows = gather_rows(&labeled.features, &li);
            let labels: Vec<usize> = li.iter().map(|&i| labeled.labels[i]).collect();
            let supervised = MeanCrossEntropy { labels: &labels };

            let (ce, reg, g) = match regularizer {
                Regularizer::None => {
                    let (ce, g) = model::grad(&params, &rows, &supervised)?;
                    (ce, 0.0, g)
                }
                Regularizer::TransBoost => {
                    let batch_snapshot = snapshot.expect("checked above").subset(&ui)?;
                    let trans = TransBoostMinibatch { snapshot: &batch_snapshot, perm: &perm, config: config.loss };
                    rows.extend(gather_rows(&unlabeled.features, &ui));
                    step_grad(&params, &rows, labels.len(), &supervised, &trans, lambda)?
                }
                Regularizer::Entropy => {
                    rows.extend(gather_rows(&unlabeled.features, &ui));
                    step_grad(&params, &rows, labels.len(), &supervised, &MeanEntropy, lambda)?
                }
            };
            sgd_step(&mut params, &g, &mut state, &config.sgd)?;
            ce_sum += ce;
            reg_sum += reg;
        }
        let n = steps as f64;
        progress.epoch(&EpochRecord { epoch, steps, ce: ce_sum / n, transductive: reg_sum / n });
    }
    Ok(params)
}

fn step_grad(
    params: &Parameters,
    rows: &[&[f64]],
    labeled: usize,
    supervised: &dyn BatchLoss,
    regularizer: &dyn BatchLoss,
    lambda: f64,
) -> Result<(f64, f64, GradientSet)> {
    let objective = Combined { labeled, supervised, regularizer, lambda };
    let (_, g) = model::grad(params, rows, &objective)?;
    // Report the parts at the pre-step parameters.
    let probs = model::probabilities(params, rows)?;
    let (ce, reg) = objective.parts(&probs)?;
    Ok((ce, reg, g))
}

/// Algorithm entry point: builds the frozen snapshot from `theta0`, then
/// fine-tunes on `mean CE + λ · transductive loss`.
pub fn transboost_finetune(theta0: &Parameters, labeled: &LabeledSet, unlabeled: &UnlabeledSet, config: &TrainConfig) -> Result<Parameters> {
    let snapshot = build_snapshot(theta0, unlabeled, "theta0")?;
    finetune(theta0, labeled, unlabeled, Some(&snapshot), config, Regularizer::TransBoost, &mut ())
}

/// Entropy-minimization baseline.
pub fn entmin_finetune(theta0: &Parameters, labeled: &LabeledSet, unlabeled: &UnlabeledSet, config: &TrainConfig) -> Result<Parameters> {
    finetune(theta0, labeled, unlabeled, None, config, Regularizer::Entropy, &mut ())
}

/// Cross-entropy-only fine-tuning with the same batch schedule.
pub fn ce_finetune(theta0: &Parameters, labeled: &LabeledSet, unlabeled: &UnlabeledSet, config: &TrainConfig) -> Result<Parameters> {
    finetune(theta0, labeled, unlabeled, None, config, Regularizer::None, &mut ())
}

impl core::fmt::Display for Regularizer {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Regularizer::None => "ce",
            Regularizer::TransBoost => "transboost",
            Regularizer::Entropy => "entmin",
        })
    }
}
