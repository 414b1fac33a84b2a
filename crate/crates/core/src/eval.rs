//! Scoring, end-to-end experiment runs, fraction sweeps and loss-variant
//! ablations.
//!
//! This is the only module that reads [`HiddenLabels`].

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{transductive_split, Dataset, SplitSpec, HiddenLabels, Matrix, TransductiveSplit, UnlabeledSet};
use crate::error::{input_err, shape_err, Result};
use crate::model::{self, Parameters};
use crate::trainer::{self, ModelSpec, PretrainConfig, Regularizer, TrainConfig};
use crate::transloss::{self, Snapshot, TransLossConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    ZeroOne,
    CrossEntropy,
}

/// Average pointwise loss of `params` over `(x, y)`.
pub fn risk(params: &Parameters, x: &Matrix, y: &[usize], kind: LossKind) -> Result<f64> {
    if x.rows() != y.len() {
        return Err(shape_err!("{} rows but {} labels", x.rows(), y.len()));
    }
    if y.is_empty() {
        return Err(input_err!("risk over an empty set"));
    }
    let mut total = 0.0;
    for (i, &label) in y.iter().enumerate() {
        let logits = model::forward(params, x.row(i))?;
        total += match kind {
            LossKind::ZeroOne => f64::from(u8::from(model::argmax(&logits) != label)),
            LossKind::CrossEntropy => model::cross_entropy(&model::softmax(&logits), label)?,
        };
    }
    Ok(total / y.len() as f64)
}

/// Top-1 accuracy, `1 − zero-one risk`.
pub fn top1(params: &Parameters, x: &Matrix, y: &[usize]) -> Result<f64> {
    Ok(1.0 - risk(params, x, y, LossKind::ZeroOne)?)
}

/// `transductive − inductive` in percentage points, from fractions in `[0, 1]`.
pub fn improvement_pp(inductive_top1: f64, transductive_top1: f64) -> f64 {
    100.0 * (transductive_top1 - inductive_top1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "lowercase")
)]
pub enum Method {
    #[default]
    TransBoost,
    EntMin,
    /// Cross-entropy fine-tuning only.
    Ce,
}

impl Method {
    fn regularizer(self) -> Regularizer {
        match self {
            Method::TransBoost => Regularizer::TransBoost,
            Method::EntMin => Regularizer::Entropy,
            Method::Ce => Regularizer::None,
        }
    }
}

/// Everything a single split → pretrain → fine-tune → score run needs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default))]
pub struct ExperimentConfig {
    pub method: Method,
    pub model: ModelSpec,
    pub pretrain: PretrainConfig,
    pub finetune: TrainConfig,
    pub split: SplitSpec,
}

impl ExperimentConfig {
    /// Uses `seed` for the split, the pretraining run and fine-tuning.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.split.seed = seed;
        self.pretrain.seed = seed;
        self.finetune.seed = seed;
        self
    }

    pub fn with_fractions(mut self, train_fraction: f64, test_fraction: f64) -> Self {
        self.split.train_fraction = train_fraction;
        self.split.test_fraction = test_fraction;
        self
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.finetune.loss.variant = variant;
        self
    }
}

/// Scores of one run. Accuracies are fractions; `improvement` is in
/// percentage points and always equals
/// `improvement_pp(inductive_top1, transductive_top1)`.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default))]
pub struct RunReport {
    pub method: String,
    pub variant: Option<Variant>,
    pub seed: u64,
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub inductive_top1: f64,
    pub transductive_top1: f64,
    pub improvement: f64,
    /// Exact transductive loss at the pretrained and the fine-tuned parameters.
    pub loss_before: Option<f64>,
    pub loss_after: Option<f64>,
    /// Percent; absent when `loss_before` is zero.
    pub loss_rel_improvement: Option<f64>,
    /// Accuracy on test-pool instances left out of the transductive set.
    pub heldout_inductive_top1: Option<f64>,
    pub heldout_transductive_top1: Option<f64>,
    pub wall_time_secs: Option<f64>,
    pub config: Option<ExperimentConfig>,
}

/// Inductive (`theta0`) versus transductive (`theta`) accuracy on the test set.
pub fn compare(theta0: &Parameters, theta: &Parameters, x_u: &UnlabeledSet, y_u: &HiddenLabels) -> Result<RunReport> {
    let inductive_top1 = top1(theta0, &x_u.features, y_u.reveal())?;
    let transductive_top1 = top1(theta, &x_u.features, y_u.reveal())?;
    Ok(RunReport {
        n_unlabeled: x_u.len(),
        inductive_top1,
        transductive_top1,
        improvement: improvement_pp(inductive_top1, transductive_top1),
        ..RunReport::default()
    })
}

/// Exact transductive loss before and after fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossComparison {
    pub before: f64,
    pub after: f64,
    pub relative: Option<f64>,
}

pub fn loss_comparison(
    theta0: &Parameters,
    theta: &Parameters,
    x_u: &UnlabeledSet,
    snapshot: &Snapshot,
    config: &TransLossConfig,
) -> Result<LossComparison> {
    if x_u.len() < 2 {
        return Err(input_err!("loss improvement needs at least two test instances"));
    }
    let rows = x_u.features.row_refs();
    let before = transloss::exact_loss(&model::probabilities(theta0, &rows)?, snapshot, config)?.value;
    let after = transloss::exact_loss(&model::probabilities(theta, &rows)?, snapshot, config)?.value;
    Ok(LossComparison { before, after, relative: relative_improvement(before, after) })
}

/// `(before − after) / before × 100`, or `None` when `before` is zero.
pub fn relative_improvement(before: f64, after: f64) -> Option<f64> {
    (before > 0.0).then(|| (before - after) / before * 100.0)
}

/// Relative improvement (percent) of the exact transductive loss, both
/// sides evaluated against the same frozen snapshot.
pub fn loss_improvement(
    theta0: &Parameters,
    theta: &Parameters,
    x_u: &UnlabeledSet,
    snapshot: &Snapshot,
    config: &TransLossConfig,
) -> Result<Option<f64>> {
    Ok(loss_comparison(theta0, theta, x_u, snapshot, config)?.relative)
}

/// Split and pretrained model shared by runs that differ only in fine-tuning.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub split: TransductiveSplit,
    pub theta0: Parameters,
    pub snapshot: Snapshot,
}

/// Splits `dataset` and pretrains on the labeled part.
pub fn prepare(dataset: &Dataset, config: &ExperimentConfig) -> Result<Prepared> {
    let split = transductive_split(dataset, &config.split)?;
    let theta0 = trainer::pretrain(&split.labeled, &config.model, &config.pretrain, &mut ())?;
    let snapshot = trainer::build_snapshot(&theta0, &split.unlabeled, "theta0")?;
    Ok(Prepared { split, theta0, snapshot })
}

/// Outcome of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: RunReport,
    pub theta0: Parameters,
    pub theta: Parameters,
}

/// Fine-tunes a prepared model with `config` and scores it.
pub fn finish(prepared: &Prepared, config: &ExperimentConfig, progress: &mut dyn trainer::Progress) -> Result<Experiment> {
    let Prepared { split, theta0, snapshot } = prepared;
    let theta = trainer::finetune(
        theta0,
        &split.labeled,
        &split.unlabeled,
        Some(snapshot),
        &config.finetune,
        config.method.regularizer(),
        progress,
    )?;
    let report = score(prepared, &theta, config)?;
    Ok(Experiment { report, theta0: theta0.clone(), theta })
}

/// Builds the full report for fine-tuned parameters `theta`.
pub fn score(prepared: &Prepared, theta: &Parameters, config: &ExperimentConfig) -> Result<RunReport> {
    let Prepared { split, theta0, snapshot } = prepared;
    let mut report = compare(theta0, theta, &split.unlabeled, &split.hidden)?;
    if split.unlabeled.len() >= 2 {
        let losses = loss_comparison(theta0, theta, &split.unlabeled, snapshot, &config.finetune.loss)?;
        report.loss_before = Some(losses.before);
        report.loss_after = Some(losses.after);
        report.loss_rel_improvement = losses.relative;
    }
    if let Some((hx, hy)) = &split.heldout {
        report.heldout_inductive_top1 = Some(top1(theta0, &hx.features, hy.reveal())?);
        report.heldout_transductive_top1 = Some(top1(theta, &hx.features, hy.reveal())?);
    }
    report.method = String::from(match config.method {
        Method::TransBoost => "transboost",
        Method::EntMin => "entmin",
        Method::Ce => "ce",
    });
    report.variant = (config.method == Method::TransBoost).then_some(config.finetune.loss.variant);
    report.seed = config.finetune.seed;
    report.train_fraction = config.split.train_fraction;
    report.test_fraction = config.split.test_fraction;
    report.n_labeled = split.labeled.len();
    report.config = Some(*config);
    Ok(report)
}

/// Split, pretrain, fine-tune and score in one go.
pub fn run_experiment(dataset: &Dataset, config: &ExperimentConfig) -> Result<Experiment> {
    finish(&prepare(dataset, config)?, config, &mut ())
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            libm::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64)
        } else {
            0.0
        };
        Stat { mean, std, n }
    }

    /// Standard error of the mean.
    pub fn sem(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.std / libm::sqrt(self.n as f64)
        }
    }
}

/// Aggregate over the runs sharing a configuration.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Summary {
    pub inductive_top1: Stat,
    pub transductive_top1: Stat,
    pub improvement: Stat,
    pub loss_rel_improvement: Stat,
    pub heldout_inductive_top1: Option<Stat>,
    pub heldout_transductive_top1: Option<Stat>,
}

impl Summary {
    pub fn of(runs: &[&RunReport]) -> Summary {
        let col = |f: fn(&RunReport) -> f64| -> Stat { Stat::of(&runs.iter().map(|r| f(r)).collect::<Vec<_>>()) };
        let opt = |f: fn(&RunReport) -> Option<f64>| -> Option<Stat> {
            let v: Vec<f64> = runs.iter().filter_map(|r| f(r)).collect();
            (!v.is_empty()).then(|| Stat::of(&v))
        };
        Summary {
            inductive_top1: col(|r| r.inductive_top1),
            transductive_top1: col(|r| r.transductive_top1),
            improvement: col(|r| r.improvement),
            loss_rel_improvement: opt(|r| r.loss_rel_improvement).unwrap_or_default(),
            heldout_inductive_top1: opt(|r| r.heldout_inductive_top1),
            heldout_transductive_top1: opt(|r| r.heldout_transductive_top1),
        }
    }
}

/// Default train fractions of the sweep grid.
pub const TRAIN_FRACTIONS: [f64; 4] = [0.05, 0.10, 0.20, 1.0];
/// Default test fractions of the sweep grid.
pub const TEST_FRACTIONS: [f64; 4] = [0.10, 0.25, 0.50, 1.0];

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepCell {
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub summary: Summary,
}

/// Runs of a train-fraction × test-fraction × seed grid.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepGrid {
    pub train_fractions: Vec<f64>,
    pub test_fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Ordered by train fraction, then test fraction, then seed.
    pub runs: Vec<RunReport>,
    /// One per (train, test) fraction pair, in the same order.
    pub cells: Vec<SweepCell>,
}

/// The `(train_fraction, test_fraction, seed)` triples of a grid, in run order.
pub fn sweep_plan(train_fractions: &[f64], test_fractions: &[f64], seeds: &[u64]) -> Vec<(f64, f64, u64)> {
    let mut plan = Vec::with_capacity(train_fractions.len() * test_fractions.len() * seeds.len());
    for &tf in train_fractions {
        for &uf in test_fractions {
            for &seed in seeds {
                plan.push((tf, uf, seed));
            }
        }
    }
    plan
}

/// One grid run.
pub fn run_cell(dataset: &Dataset, config: &ExperimentConfig, train_fraction: f64, test_fraction: f64, seed: u64) -> Result<RunReport> {
    let cfg = config.with_fractions(train_fraction, test_fraction).with_seed(seed);
    Ok(run_experiment(dataset, &cfg)?.report)
}

impl SweepGrid {
    /// Groups `runs`, given in [`sweep_plan`] order, into cells.
    pub fn assemble(train_fractions: &[f64], test_fractions: &[f64], seeds: &[u64], runs: Vec<RunReport>) -> Result<SweepGrid> {
        let expected = train_fractions.len() * test_fractions.len() * seeds.len();
        if runs.len() != expected {
            return Err(shape_err!("{} runs for a grid of {expected}", runs.len()));
        }
        let n = seeds.len();
        let mut cells = Vec::with_capacity(train_fractions.len() * test_fractions.len());
        for (k, (tf, uf)) in train_fractions
            .iter()
            .flat_map(|&tf| test_fractions.iter().map(move |&uf| (tf, uf)))
            .enumerate()
        {
            let members: Vec<&RunReport> = runs[k * n..(k + 1) * n].iter().collect();
            cells.push(SweepCell { train_fraction: tf, test_fraction: uf, summary: Summary::of(&members) });
        }
        Ok(SweepGrid {
            train_fractions: train_fractions.to_vec(),
            test_fractions: test_fractions.to_vec(),
            seeds: seeds.to_vec(),
            runs,
            cells,
        })
    }

    pub fn cell(&self, train_fraction: f64, test_fraction: f64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.train_fraction == train_fraction && c.test_fraction == test_fraction)
    }
}

/// Every grid cell for every seed, run sequentially.
pub fn sweep(
    dataset: &Dataset,
    train_fractions: &[f64],
    test_fractions: &[f64],
    seeds: &[u64],
    config: &ExperimentConfig,
) -> Result<SweepGrid> {
    for &f in train_fractions.iter().chain(test_fractions) {
        if !(f > 0.0 && f <= 1.0) {
            return Err(input_err!("fraction {f} outside (0, 1]"));
        }
    }
    let runs = sweep_plan(train_fractions, test_fractions, seeds)
        .into_iter()
        .map(|(tf, uf, seed)| run_cell(dataset, config, tf, uf, seed))
        .collect::<Result<Vec<_>>>()?;
    SweepGrid::assemble(train_fractions, test_fractions, seeds, runs)
}

/// Reference top-1 numbers for the three loss variants on a large-scale
/// benchmark (ResNet50 on ImageNet, percent). Recorded for comparison only.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReferenceRow {
    pub variant: Variant,
    pub inductive: f64,
    pub transductive: f64,
    pub improvement: f64,
}

pub const ABLATION_REFERENCE: [ReferenceRow; 3] = [
    ReferenceRow { variant: Variant::Separate, inductive: 76.15, transductive: 79.03, improvement: 2.88 },
    ReferenceRow { variant: Variant::Attract, inductive: 76.15, transductive: 74.64, improvement: -1.51 },
    ReferenceRow { variant: Variant::Both, inductive: 76.15, transductive: 79.00, improvement: 2.85 },
];

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VariantSummary {
    pub variant: Variant,
    pub summary: Summary,
    /// One per seed, in seed order.
    pub runs: Vec<RunReport>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantSummary>,
    pub reference: Vec<ReferenceRow>,
}

impl AblationReport {
    pub fn variant(&self, variant: Variant) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| v.variant == variant)
    }

    /// Per-seed `improvement(a) − improvement(b)`.
    pub fn paired_difference(&self, a: Variant, b: Variant) -> Option<Vec<f64>> {
        let (a, b) = (self.variant(a)?, self.variant(b)?);
        Some(a.runs.iter().zip(&b.runs).map(|(x, y)| x.improvement - y.improvement).collect())
    }
}

/// Fine-tunes each loss variant from the same split and pretrained model
/// for every seed.
pub fn ablation(dataset: &Dataset, seeds: &[u64], config: &ExperimentConfig) -> Result<AblationReport> {
    let mut per_variant: Vec<Vec<RunReport>> = Variant::ALL.iter().map(|_| Vec::with_capacity(seeds.len())).collect();
    let base = ExperimentConfig { method: Method::TransBoost, ..*config };
    for &seed in seeds {
        let seeded = base.with_seed(seed);
        let prepared = prepare(dataset, &seeded)?;
        for (runs, &variant) in per_variant.iter_mut().zip(&Variant::ALL) {
            runs.push(finish(&prepared, &seeded.with_variant(variant), &mut ())?.report);
        }
    }
    Ok(assemble_ablation(seeds, per_variant))
}

/// Builds the report from per-variant runs in [`Variant::ALL`] order.
pub fn assemble_ablation(seeds: &[u64], per_variant: Vec<Vec<RunReport>>) -> AblationReport {
    let variants = Variant::ALL
        .iter()
        .zip(per_variant)
        .map(|(&variant, runs)| {
            let refs: Vec<&RunReport> = runs.iter().collect();
            VariantSummary { variant, summary: Summary::of(&refs), runs }
        })
        .collect();
    AblationReport { seeds: seeds.to_vec(), variants, reference: ABLATION_REFERENCE.to_vec() }
}
