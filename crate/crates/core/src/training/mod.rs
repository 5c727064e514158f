//! Objective, optimizer, training loop, autoregressive rollout and the
//! experiment drivers built on them.

mod experiment;
mod loss;
mod optim;
mod rollout;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::OutputKind;

pub use experiment::{
    evaluate_split, run_ablation_matrix, run_cell, run_mode_comparison, ExperimentData, ExperimentReport, ExperimentRow,
    RESULT_FILE,
};
pub use loss::{s2s_loss, window_loss};
pub use optim::{clip_global_norm, Adam};
pub use rollout::{
    forecast_split, rollout, rollout_batch, rollout_window_means, Stepper, ROLLOUT_DAYS,
};
pub use trainer::{
    evaluate_loss, train, train_on, HistoryEntry, TrainOutcome, BEST_CHECKPOINT, CHECKPOINT_DIR,
    FINAL_CHECKPOINT, HISTORY_FILE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Predict both bi-weekly means from the input day.
    Direct,
    /// Learn the next day and roll it out to the bi-weekly windows.
    Autoregressive,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Direct => "direct",
            TrainMode::Autoregressive => "autoregressive",
        }
    }

    pub fn output(self) -> OutputKind {
        match self {
            TrainMode::Direct => OutputKind::Direct,
            TrainMode::Autoregressive => OutputKind::NextDay,
        }
    }
}

/// Learning-rate multiplier over the course of training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Linear ramp from zero over `warmup_epochs`, then cosine decay to zero
    /// at the last epoch.
    WarmupCosine { warmup_epochs: f64 },
}

impl LrSchedule {
    /// Multiplier at `progress` epochs into a run of `epochs`.
    pub fn factor(self, progress: f64, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::WarmupCosine { warmup_epochs } => {
                if progress < warmup_epochs {
                    return progress / warmup_epochs;
                }
                let span = (epochs as f64 - warmup_epochs).max(f64::MIN_POSITIVE);
                let x = ((progress - warmup_epochs) / span).clamp(0.0, 1.0);
                0.5 * (1.0 + (std::f64::consts::PI * x).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub mode: TrainMode,
    /// Seeds the data order; model initialization uses the model seed.
    pub seed: u64,
    /// Write an extra checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Weight squared errors by the cosine of latitude.
    pub weighted_loss: bool,
    pub clip_norm: f64,
    pub schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            learning_rate: 0.01,
            epochs: 20,
            mode: TrainMode::Direct,
            seed: 0,
            checkpoint_every: 0,
            weighted_loss: false,
            clip_norm: 1.0,
            schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(format!(
                "learning_rate = {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config(format!("clip_norm = {} must be positive", self.clip_norm)));
        }
        Ok(())
    }
}
