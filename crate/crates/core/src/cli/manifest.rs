use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use super::inputs::{DataSources, DatasetInfo};
use super::TrainArgs;
use crate::optim::{TrainHyper, TrainReport};
use crate::tree::ModelConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Everything needed to relaunch and audit one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    /// Arguments as given; `hmoe train --manifest` replays them.
    pub args: TrainArgs,
    pub config: ModelConfig,
    pub hyper: TrainHyper,
    pub sources: DataSources,
    pub train_data: DatasetInfo,
    pub val_data: Option<DatasetInfo>,
    pub test_data: Option<DatasetInfo>,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub results: RunResults,
    pub artifacts: Artifacts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub internal_nodes: usize,
    pub epochs: usize,
    pub best_val_epoch: Option<usize>,
    pub best_val_error: Option<f64>,
    pub best_test_error: Option<f64>,
    pub final_val_error: Option<f64>,
    pub final_test_error: Option<f64>,
    /// Mask-free loss and error of the final model on the training set.
    pub final_train_loss: f64,
    pub final_train_error: f64,
}

impl RunResults {
    pub fn of(report: &TrainReport) -> Self {
        let last = report.final_record();
        RunResults {
            internal_nodes: report.config.internal_count(),
            epochs: last.epoch,
            best_val_epoch: report.best_val_epoch,
            best_val_error: report.best_val_error,
            best_test_error: report.best_test_error,
            final_val_error: last.val_err,
            final_test_error: report.final_test_error,
            final_train_loss: report.final_train.mean_loss,
            final_train_error: report.final_train.error,
        }
    }
}

/// Artifact file names, relative to the run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub curves: String,
    pub best_checkpoint: String,
    pub final_checkpoint: String,
}

impl Default for Artifacts {
    fn default() -> Self {
        Artifacts {
            curves: CURVES_FILE.into(),
            best_checkpoint: BEST_CHECKPOINT.into(),
            final_checkpoint: FINAL_CHECKPOINT.into(),
        }
    }
}

impl RunManifest {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}
