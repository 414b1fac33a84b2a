mod common;

use std::time::Instant;

use common::*;
use rand::Rng;
use transboost_core::model::ProbVector;
use transboost_core::transloss::{exact_loss, minibatch_loss, Snapshot, TransLossConfig, Variant};

fn variant(v: Var) -> Variant {
    match v {
        Var::Separate => Variant::Separate,
        Var::Attract => Variant::Attract,
        Var::Both => Variant::Both,
    }
}

fn wrap(probs: &[Vec<f64>]) -> Vec<ProbVector> {
    probs.iter().map(|p| ProbVector::new(p.clone()).unwrap()).collect()
}

#[test]
fn exact_loss_matches_brute_force_enumeration() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let mut r = rng(seed);
        let u = r.random_range(2..=20);
        let c = r.random_range(2..=6);
        let probs: Vec<_> = (0..u).map(|_| random_probs(&mut r, c)).collect();
        let labels: Vec<usize> = (0..u).map(|_| r.random_range(0..c)).collect();
        let conf: Vec<f64> = (0..u).map(|_| r.random_range(1.0 / c as f64..=1.0)).collect();
        let snapshot = Snapshot::new(labels.clone(), conf.clone(), c, "oracle".into()).unwrap();
        for var in [Var::Separate, Var::Attract, Var::Both] {
            let config = TransLossConfig { lambda: 1.0, variant: variant(var), eps_norm: 1e-12 };
            let got = exact_loss(&wrap(&probs), &snapshot, &config).unwrap().value;
            let want = brute_exact(&probs, &labels, &conf, 1e-12, var);
            assert!((got - want).abs() <= 1e-12, "seed {seed} {var:?}: {got} vs {want}");
            worst = worst.max((got - want).abs());
        }
    }
    println!("max abs deviation {worst:.1e} in {:?}", start.elapsed());
}

#[test]
fn minibatch_mean_over_derangements_is_unbiased() {
    let mut r = rng(8);
    let u = 8;
    let probs: Vec<_> = (0..u).map(|_| random_probs(&mut r, u)).collect();
    let labels: Vec<usize> = (0..u).collect();
    let conf: Vec<f64> = (0..u).map(|_| r.random_range(0.2..=1.0)).collect();
    let snapshot = Snapshot::new(labels, conf, u, "oracle".into()).unwrap();
    let config = TransLossConfig::default();
    let wrapped = wrap(&probs);
    let exact = exact_loss(&wrapped, &snapshot, &config).unwrap().value;

    let n = 10_000;
    let samples: Vec<f64> = (0..n)
        .map(|_| minibatch_loss(&wrapped, &snapshot, &derangement(&mut r, u), &config).unwrap())
        .collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    println!("exact {exact:.6} mean {mean:.6} se {se:.2e}");
    assert!((mean - exact).abs() <= 3.0 * se);
}

#[test]
fn minibatch_matches_direct_pair_sum() {
    for seed in 0..50 {
        let mut r = rng(100 + seed);
        let u = r.random_range(2..=12);
        let c = r.random_range(2..=4);
        let probs: Vec<_> = (0..u).map(|_| random_probs(&mut r, c)).collect();
        let labels: Vec<usize> = (0..u).map(|_| r.random_range(0..c)).collect();
        let conf: Vec<f64> = (0..u).map(|_| r.random_range(0.25..=1.0)).collect();
        let perm = derangement(&mut r, u);
        let snapshot = Snapshot::new(labels.clone(), conf.clone(), c, "oracle".into()).unwrap();
        for var in [Var::Separate, Var::Attract, Var::Both] {
            let config = TransLossConfig { lambda: 1.0, variant: variant(var), eps_norm: 1e-12 };
            let got = minibatch_loss(&wrap(&probs), &snapshot, &perm, &config).unwrap();
            let want = brute_minibatch(&probs, &labels, &conf, &perm, 1e-12, var);
            assert!((got - want).abs() <= 1e-12, "seed {seed} {var:?}");
        }
    }
}

#[test]
fn all_same_pseudo_label_batch_is_exactly_zero() {
    let mut r = rng(5);
    let probs: Vec<_> = (0..6).map(|_| random_probs(&mut r, 3)).collect();
    let snapshot = Snapshot::new(vec![2; 6], vec![0.9; 6], 3, "oracle".into()).unwrap();
    let config = TransLossConfig::default();
    let perm = derangement(&mut r, 6);
    assert_eq!(minibatch_loss(&wrap(&probs), &snapshot, &perm, &config).unwrap(), 0.0);
    assert_eq!(exact_loss(&wrap(&probs), &snapshot, &config).unwrap().value, 0.0);
}
