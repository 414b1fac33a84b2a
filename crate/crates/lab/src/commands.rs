//! The `transboost` subcommands. Each one resolves its config, writes the
//! resolved copy to the output directory and then its artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use transboost_core::data::{transductive_split, Dataset};
use transboost_core::eval::{self, assemble_ablation, finish, prepare, sweep_plan, AblationReport, Method, Prepared, RunReport, SweepGrid};
use transboost_core::trainer::{self, build_snapshot};
use transboost_core::transloss::Variant;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::output::{results_csv, write_atomic, write_json, JsonLinesLog};

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const PRETRAIN_LOG: &str = "pretrain.jsonl";
pub const FINETUNED_FILE: &str = "finetuned.json";
pub const FINETUNE_LOG: &str = "finetune.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const SWEEP_JSON: &str = "sweep.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const ABLATION_JSON: &str = "ablation.json";
pub const ABLATION_CSV: &str = "ablation.csv";

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub out: Option<PathBuf>,
}

/// A config ready to run: overrides applied, validated, dataset loaded.
pub struct Resolved {
    pub config: RunConfig,
    pub dataset: Dataset,
}

impl Resolved {
    /// `base` is the directory relative CSV paths are resolved against,
    /// normally the config file's directory.
    pub fn new(mut config: RunConfig, overrides: &Overrides, base: &Path) -> Result<Self> {
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(lambda) = overrides.lambda {
            config.experiment.finetune.loss.lambda = lambda;
        }
        if let Some(out) = &overrides.out {
            config.out = out.clone();
        }
        config.experiment = config.seeded_experiment();
        config.validate()?;
        let dataset = config.dataset.load(base)?;
        ensure!(dataset.labels().is_some(), "dataset '{}' has no labels; runs need labels for the split and scoring", dataset.name);
        Ok(Resolved { config, dataset })
    }

    pub fn from_file(path: &Path, overrides: &Overrides) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        Resolved::new(RunConfig::load(path)?, overrides, base)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.config.out.join(name)
    }

    fn echo_config(&self) -> Result<()> {
        write_json(&self.out(CONFIG_FILE), &self.config)
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?)
}

/// Pretrains on the labeled split and writes `checkpoint.json`.
pub fn cmd_pretrain(r: &Resolved) -> Result<PathBuf> {
    r.echo_config()?;
    let exp = &r.config.experiment;
    let split = transductive_split(&r.dataset, &exp.split)?;
    log::info!("pretraining on {} labeled instances", split.labeled.len());
    let mut progress = JsonLinesLog::create(&r.out(PRETRAIN_LOG), "pretrain")?;
    let theta0 = trainer::pretrain(&split.labeled, &exp.model, &exp.pretrain, &mut progress)?;
    progress.finish()?;
    let path = r.out(CHECKPOINT_FILE);
    Checkpoint::new(&theta0, r.config.seed, &format!("pretrain-seed{}", r.config.seed))?.save(&path)?;
    log::info!("wrote {}", path.display());
    Ok(path)
}

/// Fine-tunes the checkpoint with `method` on the run's test set and writes
/// the fine-tuned checkpoint plus a report.
pub fn cmd_finetune(r: &Resolved, checkpoint: &Path, method: Method) -> Result<RunReport> {
    let start = Instant::now();
    let ckpt = Checkpoint::load(checkpoint)?;
    let theta0 = ckpt.to_params().with_context(|| format!("checkpoint {}", checkpoint.display()))?;
    let mut exp = r.config.experiment;
    exp.method = method;
    let split = transductive_split(&r.dataset, &exp.split)?;
    let dims = theta0.dims();
    ensure!(
        dims.d == r.dataset.dim() && dims.c == r.dataset.classes(),
        "checkpoint expects {} features and {} classes, dataset has {} and {}",
        dims.d,
        dims.c,
        r.dataset.dim(),
        r.dataset.classes()
    );
    r.echo_config()?;
    let snapshot = build_snapshot(&theta0, &split.unlabeled, &ckpt.tag)?;
    let prepared = Prepared { split, theta0, snapshot };
    log::info!("fine-tuning with {method:?} on {} test instances", prepared.split.unlabeled.len());
    let mut progress = JsonLinesLog::create(&r.out(FINETUNE_LOG), "finetune")?;
    let run = finish(&prepared, &exp, &mut progress)?;
    progress.finish()?;
    let tag = format!("{}-seed{}", run.report.method, r.config.seed);
    Checkpoint::new(&run.theta, r.config.seed, &tag)?.save(&r.out(FINETUNED_FILE))?;
    let mut report = run.report;
    report.wall_time_secs = Some(start.elapsed().as_secs_f64());
    write_json(&r.out(REPORT_JSON), &report)?;
    write_atomic(&r.out(REPORT_CSV), &results_csv([&report])?)?;
    log::info!(
        "inductive {:.2}% → transductive {:.2}% ({:+.2} pp)",
        100.0 * report.inductive_top1,
        100.0 * report.transductive_top1,
        report.improvement
    );
    Ok(report)
}

fn timed_run(dataset: &Dataset, exp: &eval::ExperimentConfig, tf: f64, uf: f64, seed: u64) -> Result<RunReport> {
    let start = Instant::now();
    let mut report = eval::run_cell(dataset, exp, tf, uf, seed).with_context(|| format!("cell ({tf}, {uf}) seed {seed}"))?;
    report.wall_time_secs = Some(start.elapsed().as_secs_f64());
    log::debug!("cell ({tf}, {uf}) seed {seed}: {:+.2} pp", report.improvement);
    Ok(report)
}

/// Runs the fraction grid, `jobs` cells at a time.
pub fn cmd_sweep(r: &Resolved, jobs: usize) -> Result<SweepGrid> {
    r.echo_config()?;
    let opts = &r.config.sweep;
    for &f in opts.train_fractions.iter().chain(&opts.test_fractions) {
        ensure!(f > 0.0 && f <= 1.0, "fraction {f} outside (0, 1]");
    }
    let plan = sweep_plan(&opts.train_fractions, &opts.test_fractions, &opts.seeds);
    log::info!("sweep: {} runs on {} worker(s)", plan.len(), jobs.max(1));
    let exp = r.config.experiment;
    let runs = pool(jobs)?.install(|| {
        plan.par_iter().map(|&(tf, uf, seed)| timed_run(&r.dataset, &exp, tf, uf, seed)).collect::<Result<Vec<_>>>()
    })?;
    let grid = SweepGrid::assemble(&opts.train_fractions, &opts.test_fractions, &opts.seeds, runs)?;
    write_json(&r.out(SWEEP_JSON), &grid)?;
    write_atomic(&r.out(SWEEP_CSV), &results_csv(&grid.runs)?)?;
    for cell in &grid.cells {
        let s = &cell.summary.improvement;
        log::info!("train {:.2} test {:.2}: {:+.2} ± {:.2} pp", cell.train_fraction, cell.test_fraction, s.mean, s.std);
    }
    Ok(grid)
}

#[derive(Serialize)]
struct AblationRow {
    variant: &'static str,
    seed: u64,
    inductive_top1: f64,
    transductive_top1: f64,
    improvement: f64,
    loss_rel_improvement: Option<f64>,
}

fn ablation_csv(report: &AblationReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for v in &report.variants {
        for run in &v.runs {
            w.serialize(AblationRow {
                variant: v.variant.name(),
                seed: run.seed,
                inductive_top1: run.inductive_top1,
                transductive_top1: run.transductive_top1,
                improvement: run.improvement,
                loss_rel_improvement: run.loss_rel_improvement,
            })?;
        }
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

/// Fine-tunes all three loss variants from a shared split and pretrained
/// model per seed.
pub fn cmd_ablate(r: &Resolved, jobs: usize) -> Result<AblationReport> {
    r.echo_config()?;
    let seeds = &r.config.ablation.seeds;
    let base = eval::ExperimentConfig { method: Method::TransBoost, ..r.config.experiment };
    let per_seed: Vec<Vec<RunReport>> = pool(jobs)?.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let seeded = base.with_seed(seed);
                let prepared = prepare(&r.dataset, &seeded)?;
                Variant::ALL
                    .iter()
                    .map(|&v| {
                        let start = Instant::now();
                        let mut report = finish(&prepared, &seeded.with_variant(v), &mut ())?.report;
                        report.wall_time_secs = Some(start.elapsed().as_secs_f64());
                        Ok(report)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let per_variant = (0..Variant::ALL.len()).map(|k| per_seed.iter().map(|runs| runs[k].clone()).collect()).collect();
    let report = assemble_ablation(seeds, per_variant);
    write_json(&r.out(ABLATION_JSON), &report)?;
    write_atomic(&r.out(ABLATION_CSV), &ablation_csv(&report)?)?;
    for v in &report.variants {
        log::info!("{}: {:+.2} ± {:.2} pp", v.variant.name(), v.summary.improvement.mean, v.summary.improvement.std);
    }
    Ok(report)
}
