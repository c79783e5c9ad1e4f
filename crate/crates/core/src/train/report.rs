use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::layers::FlopsReport;

use super::{Progress, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub history: Vec<EpochRecord>,
    pub step_losses: Vec<f32>,
    pub initial_train_loss: Option<f64>,
    pub final_train_loss: Option<f64>,
    /// Test accuracy of the returned (best) model.
    pub final_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub flops: FlopsReport,
    pub wall_clock_s: f64,
}

impl RunReport {
    pub fn new(config: &TrainConfig, progress: &Progress, flops: FlopsReport) -> Self {
        RunReport {
            config: config.clone(),
            history: progress.history.clone(),
            step_losses: progress.step_losses.clone(),
            initial_train_loss: progress.initial_train_loss,
            final_train_loss: progress.history.iter().rev().find(|r| r.split == Split::Train).map(|r| r.loss),
            final_accuracy: progress.best_accuracy,
            best_epoch: progress.best_epoch,
            epochs_run: progress.epochs_done,
            stopped_early: progress.stopped_early,
            flops,
            wall_clock_s: progress.wall_clock_s,
        }
    }

    /// Equality of everything except wall-clock time.
    pub fn same_results(&self, other: &RunReport) -> bool {
        RunReport {
            wall_clock_s: 0.0,
            ..self.clone()
        } == RunReport {
            wall_clock_s: 0.0,
            ..other.clone()
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,accuracy\n");
        for r in &self.history {
            out += &format!("{},{},{},{}\n", r.epoch, r.split, r.loss, r.accuracy);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `report.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [("report.csv", self.to_csv()), ("report.json", self.to_json())] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    /// Human-readable per-epoch table.
    pub fn table(&self) -> String {
        let mut out = format!("{:>5}  {:<5}  {:>9}  {:>8}\n", "epoch", "split", "loss", "accuracy");
        for r in &self.history {
            out += &format!("{:>5}  {:<5}  {:>9.4}  {:>8.4}\n", r.epoch, r.split, r.loss, r.accuracy);
        }
        out
    }
}
