//! JSON checkpoints.
//!
//! ```json
//! { "arch": "linear", "dims": {"d": 16, "h": 0, "c": 2},
//!   "weights": [[[..], [..]], [..]], "seed": 7, "tag": "pretrain" }
//! ```
//!
//! Matrices are arrays of rows, vectors plain arrays, in the parameter
//! layout order. Floats are written in shortest round-trip form, so reading
//! a checkpoint back yields bit-identical parameters.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use transboost_core::model::{Arch, Dims, Parameters, TensorShape};

use crate::output::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Tensor {
    Matrix(Vec<Vec<f64>>),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub arch: Arch,
    pub dims: Dims,
    pub weights: Vec<Tensor>,
    pub seed: u64,
    pub tag: String,
}

impl Checkpoint {
    pub fn new(params: &Parameters, seed: u64, tag: &str) -> Result<Self> {
        if !params.is_finite() {
            bail!("refusing to checkpoint non-finite parameters");
        }
        let weights = params
            .shapes()
            .into_iter()
            .zip(params.tensors())
            .map(|(shape, data)| match shape {
                TensorShape::Matrix { cols, .. } => Tensor::Matrix(data.chunks(cols).map(<[f64]>::to_vec).collect()),
                TensorShape::Vector(_) => Tensor::Vector(data.to_vec()),
            })
            .collect();
        Ok(Checkpoint { arch: params.arch(), dims: params.dims(), weights, seed, tag: tag.to_owned() })
    }

    pub fn to_params(&self) -> Result<Parameters> {
        let probe = Parameters::zeros(self.arch, self.dims)?;
        let shapes = probe.shapes();
        if shapes.len() != self.weights.len() {
            bail!("expected {} weight tensors for {:?}, found {}", shapes.len(), self.arch, self.weights.len());
        }
        let mut flat = Vec::with_capacity(shapes.len());
        for (k, (shape, tensor)) in shapes.iter().zip(&self.weights).enumerate() {
            let data = match (shape, tensor) {
                (TensorShape::Matrix { rows, cols }, Tensor::Matrix(m)) => {
                    if m.len() != *rows || m.iter().any(|r| r.len() != *cols) {
                        bail!("tensor {k}: expected a {rows}×{cols} matrix");
                    }
                    m.concat()
                }
                (TensorShape::Vector(n), Tensor::Vector(v)) if v.len() == *n => v.clone(),
                (shape, _) => bail!("tensor {k}: expected {shape:?}"),
            };
            flat.push(data);
        }
        Ok(Parameters::from_tensors(self.arch, self.dims, &flat)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing checkpoint {}", path.display()))
    }
}
