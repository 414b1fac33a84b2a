//! Datasets, synthetic generators and transductive splits.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{input_err, shape_err, Result};
use crate::rng::{self, Stream};

/// Row-major `n × d` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Matrix {
    pub fn new(data: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err!("{} values do not form a {rows}×{cols} matrix", data.len()));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(input_err!("non-finite feature at row {}, column {}", k / cols.max(1), k % cols.max(1)));
        }
        Ok(Matrix { data, rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_refs(&self) -> Vec<&[f64]> {
        (0..self.rows).map(|i| self.row(i)).collect()
    }

    pub fn gather(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix { data, rows: indices.len(), cols: self.cols }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Features with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    features: Matrix,
    labels: Option<Vec<usize>>,
    classes: usize,
}

impl Dataset {
    pub fn new(name: String, features: Matrix, labels: Option<Vec<usize>>, classes: usize) -> Result<Self> {
        if let Some(y) = &labels {
            if y.len() != features.rows() {
                return Err(shape_err!("{} labels for {} rows", y.len(), features.rows()));
            }
            if let Some(i) = y.iter().position(|&k| k >= classes) {
                return Err(input_err!("label {} at row {i} outside [0, {classes})", y[i]));
            }
        }
        Ok(Dataset { name, features, labels, classes })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// Labeled training sample `(X_l, Y_l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl LabeledSet {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let d = Dataset::new(String::new(), features, Some(labels), classes)?;
        Ok(LabeledSet { features: d.features, labels: d.labels.unwrap_or_default(), classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledSet {
        LabeledSet {
            features: self.features.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }
}

/// Unlabeled test sample `X_u`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSet {
    pub features: Matrix,
    pub classes: usize,
}

impl UnlabeledSet {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// True test labels `Y_u`, kept apart from the unlabeled features so that
/// training code, which only accepts [`LabeledSet`] and [`UnlabeledSet`],
/// cannot see them. Read them only when scoring a run.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLabels(Vec<usize>);

impl HiddenLabels {
    pub fn new(labels: Vec<usize>) -> Self {
        HiddenLabels(labels)
    }

    pub fn reveal(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Gaussian blobs: `c` class centers drawn from `N(0, center_scale²)` per
/// coordinate, then `per_class` points around each from `N(0, noise_sigma²)`.
pub fn gen_blobs(c: usize, per_class: usize, d: usize, center_scale: f64, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if c < 2 || per_class == 0 || d < 2 {
        return Err(input_err!("blobs need C ≥ 2, per_class ≥ 1, D ≥ 2 (got {c}, {per_class}, {d})"));
    }
    check_scale("center_scale", center_scale)?;
    check_scale("noise_sigma", noise_sigma)?;
    let mut rng = rng::stream(seed, Stream::Data);
    let centers: Vec<f64> = (0..c * d).map(|_| center_scale * normal(&mut rng)).collect();
    let mut data = Vec::with_capacity(c * per_class * d);
    let mut labels = Vec::with_capacity(c * per_class);
    for k in 0..c {
        for _ in 0..per_class {
            for j in 0..d {
                data.push(centers[k * d + j] + noise_sigma * normal(&mut rng));
            }
            labels.push(k);
        }
    }
    Dataset::new(String::from("blobs"), Matrix::new(data, c * per_class, d)?, Some(labels), c)
}

/// Concentric rings in the plane: class `k` at radius `k + 1`, uniform
/// angle, isotropic Gaussian noise on both coordinates.
pub fn gen_rings(c: usize, per_class: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if c < 2 || per_class == 0 {
        return Err(input_err!("rings need C ≥ 2 and per_class ≥ 1 (got {c}, {per_class})"));
    }
    check_scale("noise_sigma", noise_sigma)?;
    let mut rng = rng::stream(seed, Stream::Data);
    let mut data = Vec::with_capacity(c * per_class * 2);
    let mut labels = Vec::with_capacity(c * per_class);
    for k in 0..c {
        let radius = (k + 1) as f64;
        for _ in 0..per_class {
            let angle = rng.random_range(0.0..core::f64::consts::TAU);
            data.push(radius * libm::cos(angle) + noise_sigma * normal(&mut rng));
            data.push(radius * libm::sin(angle) + noise_sigma * normal(&mut rng));
            labels.push(k);
        }
    }
    Dataset::new(String::from("rings"), Matrix::new(data, c * per_class, 2)?, Some(labels), c)
}

fn normal(rng: &mut rng::Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn check_scale(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(input_err!("{name} must be finite and nonnegative, got {v}"))
    }
}

/// Train/test partition and the fraction subsampling applied on top of it.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default))]
pub struct SplitSpec {
    /// Share of each class routed to the test pool before subsampling.
    pub test_share: f64,
    /// Fraction of the training pool kept as the labeled set.
    pub train_fraction: f64,
    /// Fraction of the test pool used as the transductive test set; the
    /// rest is held out for inductive evaluation.
    pub test_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { test_share: 0.2, train_fraction: 1.0, test_fraction: 1.0, stratified: true, seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("test_share", self.test_share), ("train_fraction", self.train_fraction), ("test_fraction", self.test_fraction)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(input_err!("{name} must lie in (0, 1], got {v}"));
            }
        }
        if self.test_share == 1.0 {
            return Err(input_err!("test_share of 1 leaves no training data"));
        }
        Ok(())
    }
}

/// Output of [`transductive_split`]. Index vectors refer to rows of the
/// source dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TransductiveSplit {
    pub labeled: LabeledSet,
    pub unlabeled: UnlabeledSet,
    pub hidden: HiddenLabels,
    /// Test-pool rows not drawn into the transductive set.
    pub heldout: Option<(UnlabeledSet, HiddenLabels)>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub heldout_indices: Vec<usize>,
}

fn take_count(n: usize, fraction: f64) -> usize {
    libm::round(n as f64 * fraction) as usize
}

/// Shuffles `group` and cuts off the first `round(len · fraction)` members.
fn cut(group: &mut [usize], fraction: f64, rng: &mut rng::Rng) -> usize {
    group.shuffle(rng);
    take_count(group.len(), fraction)
}

/// Stratified (or plain) partition into labeled train, transductive test
/// and held-out test sets.
pub fn transductive_split(dataset: &Dataset, spec: &SplitSpec) -> Result<TransductiveSplit> {
    spec.validate()?;
    let labels = dataset
        .labels()
        .ok_or_else(|| input_err!("dataset '{}' has no labels to split", dataset.name))?;
    let c = dataset.classes();
    let mut rng = rng::stream(spec.seed, Stream::Split);

    let groups: Vec<Vec<usize>> = if spec.stratified {
        let mut g = vec![Vec::new(); c];
        for (i, &y) in labels.iter().enumerate() {
            g[y].push(i);
        }
        g.retain(|v| !v.is_empty());
        g
    } else {
        vec![(0..labels.len()).collect()]
    };

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut heldout = Vec::new();
    for mut group in groups {
        let n_test = cut(&mut group, spec.test_share, &mut rng);
        let (test_pool, train_pool) = group.split_at_mut(n_test);
        let n_train = cut(train_pool, spec.train_fraction, &mut rng);
        let n_keep = cut(test_pool, spec.test_fraction, &mut rng);
        if spec.stratified && (n_train == 0 || n_keep == 0) {
            let class = labels[train_pool.first().or(test_pool.first()).copied().unwrap_or(0)];
            return Err(input_err!(
                "fractions leave class {class} with {n_train} training and {n_keep} test instances"
            ));
        }
        train.extend_from_slice(&train_pool[..n_train]);
        test.extend_from_slice(&test_pool[..n_keep]);
        heldout.extend_from_slice(&test_pool[n_keep..]);
    }
    if train.is_empty() || test.is_empty() {
        return Err(input_err!("split leaves {} training and {} test instances", train.len(), test.len()));
    }
    train.sort_unstable();
    test.sort_unstable();
    heldout.sort_unstable();

    let x = dataset.features();
    let pick = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<_>>();
    let labeled = LabeledSet { features: x.gather(&train), labels: pick(&train), classes: c };
    let unlabeled = UnlabeledSet { features: x.gather(&test), classes: c };
    let heldout_sets = if heldout.is_empty() {
        None
    } else {
        Some((UnlabeledSet { features: x.gather(&heldout), classes: c }, HiddenLabels(pick(&heldout))))
    };
    Ok(TransductiveSplit {
        labeled,
        unlabeled,
        hidden: HiddenLabels(pick(&test)),
        heldout: heldout_sets,
        train_indices: train,
        test_indices: test,
        heldout_indices: heldout,
    })
}
