//! Dataset sources: the synthetic generators and CSV files.
//!
//! CSV files are UTF-8, comma-separated, with a mandatory header naming the
//! feature columns `f0, f1, …` and optionally a `label` column. Labels are
//! all-or-nothing: either every row has one or the column is empty
//! throughout. Rows in error messages are numbered from 1, counting data
//! rows only (the header is not a row).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use transboost_core::data::{gen_blobs, gen_rings, Dataset, Matrix};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: header: {message}")]
    Header { path: PathBuf, message: String },
    #[error("{path}: row {row}: {message}")]
    Row { path: PathBuf, row: usize, message: String },
    #[error("{path}: {source}")]
    Dataset { path: PathBuf, source: transboost_core::Error },
}

/// Reads a dataset from CSV. `classes` overrides the class count, which is
/// otherwise `max label + 1`.
pub fn load_csv(path: &Path, classes: Option<usize>) -> Result<Dataset, LoadError> {
    let p = || path.to_path_buf();
    let file = std::fs::File::open(path).map_err(|source| LoadError::Io { path: p(), source })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
    let header = reader.headers().map_err(|e| LoadError::Header { path: p(), message: e.to_string() })?.clone();

    let mut feature_cols = Vec::new();
    let mut label_col = None;
    for (k, name) in header.iter().enumerate() {
        let name = name.trim();
        if name == "label" {
            if label_col.replace(k).is_some() {
                return Err(LoadError::Header { path: p(), message: "duplicate 'label' column".into() });
            }
        } else if let Some(idx) = name.strip_prefix('f').and_then(|s| s.parse::<usize>().ok()) {
            feature_cols.push((idx, k));
        } else {
            return Err(LoadError::Header { path: p(), message: format!("unexpected column '{name}'") });
        }
    }
    feature_cols.sort_unstable();
    if feature_cols.is_empty() {
        return Err(LoadError::Header { path: p(), message: "no feature columns f0..".into() });
    }
    if let Some(pos) = feature_cols.iter().enumerate().position(|(i, &(idx, _))| idx != i) {
        return Err(LoadError::Header { path: p(), message: format!("feature columns must be f0..f{}, missing f{pos}", feature_cols.len() - 1) });
    }
    let d = feature_cols.len();

    let mut features = Vec::new();
    let mut labels: Vec<Option<usize>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let err = |message: String| LoadError::Row { path: p(), row, message };
        let record = record.map_err(|e| err(e.to_string()))?;
        if record.len() != header.len() {
            return Err(err(format!("{} fields, expected {}", record.len(), header.len())));
        }
        for &(idx, k) in &feature_cols {
            let cell = record[k].trim();
            let v: f64 = cell.parse().map_err(|_| err(format!("f{idx}: '{cell}' is not a number")))?;
            if !v.is_finite() {
                return Err(err(format!("f{idx}: non-finite value")));
            }
            features.push(v);
        }
        let label = match label_col.map(|k| record[k].trim()) {
            None | Some("") => None,
            Some(cell) => Some(cell.parse::<usize>().map_err(|_| err(format!("label '{cell}' is not a class index")))?),
        };
        if let Some(first) = labels.first() {
            if first.is_some() != label.is_some() {
                return Err(err("mixed labeled and unlabeled rows".into()));
            }
        }
        labels.push(label);
    }
    let n = labels.len();
    if n == 0 {
        return Err(LoadError::Header { path: p(), message: "no data rows".into() });
    }
    let labels: Option<Vec<usize>> = labels.into_iter().collect();
    let inferred = labels.as_ref().map_or(0, |y| y.iter().max().map_or(0, |m| m + 1));
    let classes = classes.unwrap_or(inferred);
    let name = path.file_stem().map_or_else(|| "csv".into(), |s| s.to_string_lossy().into_owned());
    let wrap = |source| LoadError::Dataset { path: p(), source };
    let matrix = Matrix::new(features, n, d).map_err(wrap)?;
    Dataset::new(name, matrix, labels, classes).map_err(wrap)
}

/// Where a run's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    Blobs { classes: usize, per_class: usize, dim: usize, center_scale: f64, noise_sigma: f64, seed: u64 },
    Rings { classes: usize, per_class: usize, noise_sigma: f64, seed: u64 },
    Csv { path: PathBuf, classes: Option<usize> },
}

impl Default for DatasetSpec {
    /// Two overlapping 16-dimensional Gaussian blobs, 1200 points each.
    fn default() -> Self {
        DatasetSpec::Blobs { classes: 2, per_class: 1200, dim: 16, center_scale: 0.45, noise_sigma: 1.0, seed: 2024 }
    }
}

impl DatasetSpec {
    /// Builds the dataset; relative CSV paths resolve against `base`.
    pub fn load(&self, base: &Path) -> anyhow::Result<Dataset> {
        Ok(match self {
            &DatasetSpec::Blobs { classes, per_class, dim, center_scale, noise_sigma, seed } => {
                gen_blobs(classes, per_class, dim, center_scale, noise_sigma, seed)?
            }
            &DatasetSpec::Rings { classes, per_class, noise_sigma, seed } => gen_rings(classes, per_class, noise_sigma, seed)?,
            DatasetSpec::Csv { path, classes } => load_csv(&base.join(path), *classes)?,
        })
    }
}
