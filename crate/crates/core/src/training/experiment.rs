use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use super::rollout::forecast_split;
use super::trainer::train_on;
use super::{TrainConfig, TrainMode};
use crate::data::{DatasetManifest, Split, SplitData};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalOptions, EvalReport, ForecastRecord, MetricRecord, Window};
use crate::model::checkpoint::config_kv;
use crate::model::{Cirt, InputShape, ModelConfig, PatchingMode};

pub const RESULT_FILE: &str = "result.toml";

/// Every split of a dataset held in memory, plus its climatology.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: SplitData,
    pub val: SplitData,
    pub test: SplitData,
    pub climatology: Option<Array3<f32>>,
}

impl ExperimentData {
    pub fn load(manifest: &DatasetManifest) -> Result<Self> {
        Ok(ExperimentData {
            train: SplitData::load(manifest, Split::Train, 1)?,
            val: SplitData::load(manifest, Split::Val, 1)?,
            test: SplitData::load(manifest, Split::Test, 1)?,
            climatology: match manifest.climatology {
                Some(_) => Some(manifest.load_climatology()?),
                None => None,
            },
        })
    }

    pub fn split(&self, split: Split) -> &SplitData {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Scores `model` on every sample of `split` in physical units.
    pub fn evaluate(&self, model: &Cirt<f32>, split: Split, options: &EvalOptions, batch: usize) -> Result<EvalReport> {
        evaluate_split(
            model,
            self.split(split),
            self.climatology.as_ref().map(|c| c.view()),
            options,
            batch,
        )
    }
}

/// Forecasts every sample of `data` and scores the forecasts in physical
/// units.
pub fn evaluate_split(
    model: &Cirt<f32>,
    data: &SplitData,
    climatology: Option<ArrayView3<'_, f32>>,
    options: &EvalOptions,
    batch: usize,
) -> Result<EvalReport> {
    let preds = forecast_split(model, data, batch)?;
    let truths = (0..data.num_samples())
        .map(|i| data.physical_targets(i))
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<ForecastRecord<'_>> = preds
        .iter()
        .zip(&truths)
        .enumerate()
        .map(|(i, (pred, truth))| ForecastRecord {
            init: data.init_date(i),
            pred,
            truth,
        })
        .collect();
    evaluate(&records, &data.grid, &data.var_names, climatology, options)
}

/// Outcome of one trained and tested configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub label: String,
    pub patching_mode: PatchingMode,
    pub use_fourier: bool,
    pub mode: TrainMode,
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    /// Configuration the row was produced with, used to decide whether a
    /// stored result can be reused.
    pub fingerprint: String,
    /// Global test-split scores of the best-validation parameters.
    pub metrics: Vec<MetricRecord>,
}

impl ExperimentRow {
    pub fn rmse(&self, variable: &str, window: Window) -> Option<f64> {
        self.metrics
            .iter()
            .find(|m| m.variable == variable && m.window == window && m.slice == "global")
            .map(|m| m.rmse)
    }

    pub fn acc(&self, variable: &str, window: Window) -> Option<f64> {
        self.metrics
            .iter()
            .find(|m| m.variable == variable && m.window == window && m.slice == "global")
            .and_then(|m| m.acc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub title: String,
    pub var_names: Vec<String>,
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentReport {
    /// Row labels in order of first appearance.
    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.label) {
                out.push(r.label.clone());
            }
        }
        out
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut out: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn row(&self, label: &str, seed: u64) -> Option<&ExperimentRow> {
        self.rows.iter().find(|r| r.label == label && r.seed == seed)
    }

    /// Mean and population standard deviation of test RMSE over seeds.
    pub fn summary(&self, label: &str, variable: &str, window: Window) -> Option<(f64, f64)> {
        spread(self.rows.iter().filter(|r| r.label == label).filter_map(|r| r.rmse(variable, window)))
    }

    /// Mean and population standard deviation of test ACC over seeds.
    pub fn acc_summary(&self, label: &str, variable: &str, window: Window) -> Option<(f64, f64)> {
        spread(self.rows.iter().filter(|r| r.label == label).filter_map(|r| r.acc(variable, window)))
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}  (test scores, mean ± spread over {} seed(s))", self.title, self.seeds().len());
        let _ = write!(out, "{:<18} {:>6}", "config", "epochs");
        for v in &self.var_names {
            for w in Window::BOTH {
                let _ = write!(out, " {:>24} {:>16}", format!("{v} {} rmse", w.name()), "acc");
            }
        }
        out.push('\n');
        for label in self.labels() {
            let epochs = self.rows.iter().find(|r| r.label == label).map_or(0, |r| r.epochs);
            let _ = write!(out, "{label:<18} {epochs:>6}");
            for v in &self.var_names {
                for w in Window::BOTH {
                    let rmse = self
                        .summary(&label, v, w)
                        .map_or_else(|| "-".into(), |(m, s)| format!("{m:.4} ± {s:.4}"));
                    let acc = self
                        .acc_summary(&label, v, w)
                        .map_or_else(|| "-".into(), |(m, s)| format!("{m:.3} ± {s:.3}"));
                    let _ = write!(out, " {rmse:>24} {acc:>16}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot serialize report: {e}")))
    }
}

fn spread(vals: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let vals: Vec<f64> = vals.collect();
    if vals.is_empty() {
        return None;
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

fn fingerprint(model_cfg: &ModelConfig, shape: &InputShape, train_cfg: &TrainConfig) -> String {
    let mut s: String = config_kv(model_cfg, shape)
        .iter()
        .map(|(k, v)| format!("{k}={v};"))
        .collect();
    s.push_str(&toml::to_string(train_cfg).unwrap_or_default().replace('\n', ";"));
    s
}

/// Trains one configuration and scores its best-validation parameters on
/// the test split. With `cell_dir` set, training artifacts and the result go
/// there, and a stored result with the same configuration is reused.
pub fn run_cell(
    data: &ExperimentData,
    label: &str,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    cell_dir: Option<&Path>,
) -> Result<ExperimentRow> {
    let model_cfg = ModelConfig {
        output: train_cfg.mode.output(),
        ..model_cfg.clone()
    };
    let shape = InputShape {
        lat_res_deg: data.train.grid.lat_res_deg(),
        lon_res_deg: data.train.grid.lon_res_deg(),
        num_vars: data.train.var_names.len(),
    };
    let print = fingerprint(&model_cfg, &shape, train_cfg);
    if let Some(dir) = cell_dir {
        let path = dir.join(RESULT_FILE);
        if let Ok(text) = fs::read_to_string(&path) {
            match toml::from_str::<ExperimentRow>(&text) {
                Ok(row) if row.fingerprint == print && row.label == label => {
                    log::info!("reusing {}", path.display());
                    return Ok(row);
                }
                _ => log::warn!("stale result in {}, retraining", path.display()),
            }
        }
    }
    let outcome = train_on(&data.train, Some(&data.val), &model_cfg, train_cfg, cell_dir)?;
    let report = data.evaluate(&outcome.best, Split::Test, &EvalOptions::default(), train_cfg.batch_size)?;
    let row = ExperimentRow {
        label: label.to_string(),
        patching_mode: model_cfg.patching_mode,
        use_fourier: model_cfg.use_fourier,
        mode: train_cfg.mode,
        seed: train_cfg.seed,
        epochs: train_cfg.epochs,
        best_epoch: outcome.best_epoch,
        initial_train_loss: outcome.initial_train_loss,
        final_train_loss: outcome.final_loss(Split::Train).unwrap_or(outcome.initial_train_loss),
        fingerprint: print,
        metrics: report.records,
    };
    if let Some(dir) = cell_dir {
        let path = dir.join(RESULT_FILE);
        let text = toml::to_string(&row).map_err(|e| Error::config(format!("cannot serialize result: {e}")))?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(row)
}

fn seeded(model_cfg: &ModelConfig, train_cfg: &TrainConfig, seed: u64) -> (ModelConfig, TrainConfig) {
    (
        ModelConfig {
            seed,
            ..model_cfg.clone()
        },
        TrainConfig {
            seed,
            ..train_cfg.clone()
        },
    )
}

/// Trains and tests {grid, circular} × {without, with Fourier} for every
/// seed under the same budget. Each seed drives both initialization and data
/// order.
pub fn run_ablation_matrix(
    data: &ExperimentData,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    seeds: &[u64],
    out_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    if seeds.is_empty() {
        return Err(Error::config("at least one seed is required"));
    }
    let mut rows = Vec::new();
    for patching in [PatchingMode::Grid, PatchingMode::Circular] {
        for fourier in [false, true] {
            let name = match patching {
                PatchingMode::Grid => "grid",
                PatchingMode::Circular => "circular",
            };
            let label = if fourier { format!("{name}+fourier") } else { name.to_string() };
            for &seed in seeds {
                let (mut m, t) = seeded(base, train_cfg, seed);
                m.patching_mode = patching;
                m.use_fourier = fourier;
                let dir = out_dir.map(|d| d.join(format!("{label}_seed{seed}")));
                log::info!("ablation cell {label}, seed {seed}");
                rows.push(run_cell(data, &label, &m, &t, dir.as_deref())?);
            }
        }
    }
    Ok(ExperimentReport {
        title: "patching and Fourier ablation".into(),
        var_names: data.train.var_names.to_vec(),
        rows,
    })
}

/// Trains the same model directly on the bi-weekly targets and as a
/// next-day model rolled out to them, for every seed.
pub fn run_mode_comparison(
    data: &ExperimentData,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    seeds: &[u64],
    out_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    if seeds.is_empty() {
        return Err(Error::config("at least one seed is required"));
    }
    let mut rows = Vec::new();
    for mode in [TrainMode::Direct, TrainMode::Autoregressive] {
        for &seed in seeds {
            let (m, mut t) = seeded(base, train_cfg, seed);
            t.mode = mode;
            let dir = out_dir.map(|d| d.join(format!("{}_seed{seed}", mode.name())));
            log::info!("mode cell {}, seed {seed}", mode.name());
            rows.push(run_cell(data, mode.name(), &m, &t, dir.as_deref())?);
        }
    }
    Ok(ExperimentReport {
        title: "direct and autoregressive training".into(),
        var_names: data.train.var_names.to_vec(),
        rows,
    })
}
