//! Run configuration files.
//!
//! Every field has a default, so `{}` is a valid config describing the
//! standard two-blob task. The fully resolved config is written next to
//! every output.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use transboost_core::data::SplitSpec;
use transboost_core::eval::{ExperimentConfig, TEST_FRACTIONS, TRAIN_FRACTIONS};

use crate::dataset::DatasetSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub train_fractions: Vec<f64>,
    pub test_fractions: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { train_fractions: TRAIN_FRACTIONS.to_vec(), test_fractions: TEST_FRACTIONS.to_vec(), seeds: (0..10).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationOptions {
    pub seeds: Vec<u64>,
}

impl Default for AblationOptions {
    fn default() -> Self {
        AblationOptions { seeds: (0..10).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    /// Seed for the split, pretraining and fine-tuning of single runs.
    pub seed: u64,
    pub experiment: ExperimentConfig,
    pub out: PathBuf,
    pub sweep: SweepOptions,
    pub ablation: AblationOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        // 2000 training and 400 test instances; 10% of the training pool is labeled.
        let split = SplitSpec { test_share: 1.0 / 6.0, train_fraction: 0.1, ..SplitSpec::default() };
        let experiment = ExperimentConfig { split, ..ExperimentConfig::default() };
        RunConfig {
            dataset: DatasetSpec::default(),
            seed: 0,
            experiment,
            out: PathBuf::from("out"),
            sweep: SweepOptions::default(),
            ablation: AblationOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// The experiment settings with the run seed applied everywhere.
    pub fn seeded_experiment(&self) -> ExperimentConfig {
        self.experiment.with_seed(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.split.validate()?;
        self.experiment.finetune.validate()?;
        self.experiment.pretrain.sgd.validate()?;
        anyhow::ensure!(!self.sweep.seeds.is_empty() && !self.ablation.seeds.is_empty(), "seed lists must be non-empty");
        Ok(())
    }
}
