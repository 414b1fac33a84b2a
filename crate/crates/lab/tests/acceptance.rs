//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each, and exits non-zero if any failed.
//!
//! The desk-scale task shared by criteria 5–8 is the default run config:
//! two overlapping 16-dimensional Gaussian blobs, 200 labeled training
//! instances (10% of the training pool) and 400 test instances.

// `check!` negates comparisons on purpose so that NaN counts as a failure.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::*;
use rand::Rng;
use transboost_core::eval::{self, run_experiment, RunReport};
use transboost_core::model::{self, Arch, ProbVector};
use transboost_core::transloss::{exact_loss, minibatch_loss, similarity, Snapshot, TransLossConfig, Variant, SQRT_2};
use transboost_lab::commands::{Overrides, Resolved};
use transboost_lab::config::RunConfig;

const SEEDS: std::ops::Range<u64> = 0..10;

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}

fn timed(limit_secs: f64, start: Instant) -> Result<f64, String> {
    let t = start.elapsed().as_secs_f64();
    check!(t < limit_secs, "took {t:.2}s, limit {limit_secs}s");
    Ok(t)
}

fn similarity_bound() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for n in 0..10_000usize {
        let c = 2 + n % 49;
        let scale = [1.0, 10.0, 60.0][n % 3];
        let mut draw = || model::softmax(&(0..c).map(|_| scale * r.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let (p, q) = (draw(), draw());
        let s = similarity(&p, &q, 1e-12).map_err(|e| e.to_string())?;
        check!((-1e-12..=SQRT_2 + 1e-12).contains(&s), "C = {c}: similarity {s} out of bounds");
        lo = lo.min(s);
        hi = hi.max(s);
    }
    let t = timed(1.0, start)?;
    Ok(format!("10000 pairs, C in 2..=50, range [{lo:.3e}, {hi:.6}], {t:.3}s"))
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for arch in [Arch::Linear, Arch::Mlp1] {
        for kind in [Kind::Ce, Kind::Separate, Kind::Attract, Kind::Combined] {
            let (err, seed) = gradient_error(arch, kind, 0..100);
            check!(err < TOL, "{arch:?}/{kind:?} seed {seed}: relative error {err:.3e}");
            worst = worst.max(err);
        }
    }
    let t = timed(30.0, start)?;
    Ok(format!("2 archs x 4 losses x 100 instances, max relative error {worst:.2e}, {t:.2}s"))
}

fn exact_loss_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let mut r = rng(500 + seed);
        let u = r.random_range(2..=20);
        let c = r.random_range(2..=5);
        let probs: Vec<Vec<f64>> = (0..u).map(|_| random_probs(&mut r, c)).collect();
        let labels: Vec<usize> = (0..u).map(|_| r.random_range(0..c)).collect();
        let conf: Vec<f64> = (0..u).map(|_| r.random_range(1.0 / c as f64..=1.0)).collect();
        let snapshot = Snapshot::new(labels.clone(), conf.clone(), c, "oracle".into()).unwrap();
        let wrapped: Vec<ProbVector> = probs.iter().map(|p| ProbVector::new(p.clone()).unwrap()).collect();
        for (variant, var) in [(Variant::Separate, Var::Separate), (Variant::Attract, Var::Attract), (Variant::Both, Var::Both)] {
            let config = TransLossConfig { lambda: 1.0, variant, eps_norm: 1e-12 };
            let got = exact_loss(&wrapped, &snapshot, &config).map_err(|e| e.to_string())?.value;
            let want = brute_exact(&probs, &labels, &conf, 1e-12, var);
            check!((got - want).abs() <= 1e-12, "seed {seed} {variant:?}: {got} vs {want}");
            worst = worst.max((got - want).abs());
        }
    }
    let t = timed(5.0, start)?;
    Ok(format!("50 cases x 3 variants, max deviation {worst:.1e}, {t:.3}s"))
}

fn minibatch_estimator() -> Outcome {
    let mut r = rng(4);
    let u = 8;
    let probs: Vec<ProbVector> = (0..u).map(|_| ProbVector::new(random_probs(&mut r, u)).unwrap()).collect();
    let conf: Vec<f64> = (0..u).map(|_| r.random_range(0.2..=1.0)).collect();
    let snapshot = Snapshot::new((0..u).collect(), conf, u, "oracle".into()).unwrap();
    let config = TransLossConfig::default();
    let exact = exact_loss(&probs, &snapshot, &config).unwrap().value;
    let n = 10_000;
    let samples: Vec<f64> =
        (0..n).map(|_| minibatch_loss(&probs, &snapshot, &derangement(&mut r, u), &config).unwrap()).collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let sd = (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let se = sd / (n as f64).sqrt();
    let z = (mean - exact).abs() / se;
    check!(z <= 3.0, "Monte-Carlo mean {mean} vs exact {exact}: {z:.2} standard errors");

    let same = Snapshot::new(vec![3; u], vec![0.9; u], u, "oracle".into()).unwrap();
    let guarded = minibatch_loss(&probs, &same, &derangement(&mut r, u), &config).unwrap();
    check!(guarded == 0.0, "all-same pseudo-label batch gave {guarded}");
    Ok(format!("exact {exact:.6}, mean of 10000 derangements {mean:.6} ({z:.2} SE); zero guard exact"))
}

fn task() -> Resolved {
    Resolved::new(RunConfig::default(), &Overrides::default(), Path::new(".")).expect("default config resolves")
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn desk_scale_gain(runs: &[RunReport], secs: f64) -> Outcome {
    let r0 = &runs[0];
    check!(r0.n_labeled == 200 && r0.n_unlabeled == 400, "task has {} labeled / {} test instances", r0.n_labeled, r0.n_unlabeled);
    check!(secs < 300.0, "took {secs:.1}s, limit 300s");
    let ind = 100.0 * mean(runs.iter().map(|r| r.inductive_top1));
    let tra = 100.0 * mean(runs.iter().map(|r| r.transductive_top1));
    let gain = mean(runs.iter().map(|r| r.improvement));
    let per_seed: Vec<String> = runs.iter().map(|r| format!("{:+.2}", r.improvement)).collect();
    let detail = format!("inductive {ind:.2}% -> transductive {tra:.2}%, mean {gain:+.3} pp over 10 seeds [{}], {secs:.1}s", per_seed.join(" "));
    check!(gain >= 1.0, "{detail}; needs >= +1.0 pp");
    Ok(detail)
}

fn ablation_direction(report: &eval::AblationReport, separate_runs: &[RunReport]) -> Outcome {
    let imp = |v| report.variant(v).map(|s| s.summary.improvement.mean).ok_or("missing variant");
    let (sep, att, both) = (imp(Variant::Separate)?, imp(Variant::Attract)?, imp(Variant::Both)?);
    // Pairing: every variant of a seed starts from the same split and model.
    for k in 0..report.seeds.len() {
        let ind: Vec<f64> = report.variants.iter().map(|v| v.runs[k].inductive_top1).collect();
        check!(ind.iter().all(|&x| x == ind[0]), "seed {} not paired across variants", report.seeds[k]);
    }
    let sep_runs = &report.variant(Variant::Separate).unwrap().runs;
    check!(
        sep_runs.iter().zip(separate_runs).all(|(a, b)| a.transductive_top1 == b.transductive_top1),
        "ablation Separate runs differ from the criterion-5 runs"
    );
    let d_sa = mean(report.paired_difference(Variant::Separate, Variant::Attract).unwrap());
    let d_sb = mean(report.paired_difference(Variant::Separate, Variant::Both).unwrap());
    let detail = format!("separate {sep:+.3}, attract {att:+.3}, both {both:+.3} pp; paired sep-att {d_sa:+.3}, sep-both {d_sb:+.3}");
    check!(d_sa >= 0.0, "{detail}: separate below attract");
    check!(d_sb.abs() <= 0.5, "{detail}: both more than 0.5 pp from separate");
    Ok(detail)
}

fn loss_improvement(runs: &[RunReport]) -> Outcome {
    let rel: Vec<f64> = runs.iter().map(|r| r.loss_rel_improvement.unwrap_or(f64::NAN)).collect();
    for (r, v) in runs.iter().zip(&rel) {
        check!(*v > 0.0, "seed {}: loss improvement {v}", r.seed);
    }
    let min = rel.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(format!("relative loss improvement > 0 on all 10 seeds (min {min:.1}%, mean {:.1}%)", mean(rel.iter().copied())))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_transboost"))
        .args(args)
        .env("TRANSBOOST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    check!(out.status.success(), "transboost {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr));
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn sweep_fidelity(dir: &Path) -> Outcome {
    let config = dir.join("sweep-config.json");
    std::fs::write(&config, r#"{"sweep": {"seeds": [0, 1, 2]}}"#).map_err(|e| e.to_string())?;
    let (a, b) = (dir.join("sweep-a"), dir.join("sweep-b"));
    for out in [&a, &b] {
        cli(&["sweep", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", "4"])?;
    }
    let csv_a = read(&a.join("sweep.csv"))?;
    check!(csv_a == read(&b.join("sweep.csv"))?, "sweep CSV differs between reruns");
    let mut reader = csv::Reader::from_reader(csv_a.as_slice());
    let rows: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    check!(rows.len() == 48, "{} result rows, expected 48", rows.len());
    let grid: eval::SweepGrid = serde_json::from_slice(&read(&a.join("sweep.json"))?).map_err(|e| e.to_string())?;
    let full: Vec<(f64, f64)> = grid
        .cells
        .iter()
        .filter(|c| c.train_fraction == 1.0)
        .map(|c| (c.test_fraction, c.summary.improvement.mean))
        .collect();
    let row = full.iter().map(|(uf, m)| format!("{uf}: {m:+.2}")).collect::<Vec<_>>().join(", ");
    let detail = format!("48 rows, rerun byte-identical; full-train row [{row}] pp");
    check!(full.len() == 4 && full.iter().all(|&(_, m)| m > 0.0), "{detail}; every full-train cell must be positive");
    Ok(detail)
}

fn determinism(dir: &Path) -> Outcome {
    let config = dir.join("small.json");
    std::fs::write(&config, r#"{"sweep": {"train_fractions": [0.1, 1.0], "test_fractions": [0.5], "seeds": [0, 1]}, "ablation": {"seeds": [0, 1]}}"#)
        .map_err(|e| e.to_string())?;
    let cfg = config.to_str().unwrap();
    let mut compared = 0;
    for run in ["a", "b"] {
        let out = dir.join(run);
        let out = out.to_str().unwrap();
        let ckpt = format!("{out}/pre/checkpoint.json");
        cli(&["pretrain", "--config", cfg, "--seed", "3", "--out", &format!("{out}/pre")])?;
        cli(&["transboost", "--config", cfg, "--seed", "3", "--checkpoint", &ckpt, "--out", &format!("{out}/tb")])?;
        cli(&["entmin", "--config", cfg, "--seed", "3", "--checkpoint", &ckpt, "--out", &format!("{out}/em")])?;
        cli(&["sweep", "--config", cfg, "--out", &format!("{out}/sweep"), "--jobs", "2"])?;
        cli(&["ablate", "--config", cfg, "--out", &format!("{out}/ablate"), "--jobs", "2"])?;
    }
    for file in [
        "pre/checkpoint.json",
        "tb/finetuned.json",
        "tb/report.csv",
        "em/finetuned.json",
        "em/report.csv",
        "sweep/sweep.csv",
        "ablate/ablation.csv",
    ] {
        let (x, y) = (read(&dir.join("a").join(file))?, read(&dir.join("b").join(file))?);
        check!(x == y, "{file} differs between reruns");
        compared += 1;
    }
    Ok(format!("pretrain, transboost, entmin, sweep, ablate: {compared} checkpoint/CSV files byte-identical on rerun"))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    })
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 similarity bound", guarded(similarity_bound)),
        ("2 gradient correctness", guarded(gradient_correctness)),
        ("3 exact-loss oracle equivalence", guarded(exact_loss_oracle)),
        ("4 minibatch estimator", guarded(minibatch_estimator)),
    ];

    let resolved = task();
    let start = Instant::now();
    let runs: Result<Vec<RunReport>, String> = SEEDS
        .map(|seed| run_experiment(&resolved.dataset, &resolved.config.experiment.with_seed(seed)).map(|e| e.report))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string());
    let secs = start.elapsed().as_secs_f64();
    match &runs {
        Ok(runs) => {
            results.push(("5 desk-scale transductive gain", guarded(|| desk_scale_gain(runs, secs))));
            let seeds: Vec<u64> = SEEDS.collect();
            results.push((
                "6 ablation direction",
                guarded(|| {
                    let report = eval::ablation(&resolved.dataset, &seeds, &resolved.config.experiment).map_err(|e| e.to_string())?;
                    ablation_direction(&report, runs)
                }),
            ));
            results.push(("7 loss-improvement metric", guarded(|| loss_improvement(runs))));
        }
        Err(e) => {
            for name in ["5 desk-scale transductive gain", "6 ablation direction", "7 loss-improvement metric"] {
                results.push((name, Err(format!("experiment failed: {e}"))));
            }
        }
    }
    results.push(("8 sweep harness fidelity", guarded(|| sweep_fidelity(tmp.path()))));
    results.push(("9 determinism", guarded(|| determinism(tmp.path()))));

    println!();
    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {name}: {detail}");
            }
        }
    }
    println!("\nacceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
