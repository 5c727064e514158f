use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array3, ArrayView3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::window_loss;
use super::optim::{clip_global_norm, Adam};
use super::{TrainConfig, TrainMode};
use crate::data::{DatasetManifest, Split, SplitData};
use crate::error::{Error, Result};
use crate::geometry::latitude_weights;
use crate::model::checkpoint::save_checkpoint;
use crate::model::{Cirt, InputShape, ModelConfig};

pub const HISTORY_FILE: &str = "history.log";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
}

impl HistoryEntry {
    pub fn to_line(&self) -> String {
        format!("epoch={} split={} loss={}", self.epoch, self.split, self.loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the last epoch.
    pub model: Cirt<f32>,
    /// Parameters of the epoch with the lowest validation loss, or the last
    /// epoch when there is no validation data.
    pub best: Cirt<f32>,
    pub best_epoch: usize,
    pub initial_train_loss: f64,
    pub history: Vec<HistoryEntry>,
}

impl TrainOutcome {
    pub fn final_loss(&self, split: Split) -> Option<f64> {
        self.history
            .iter()
            .rev()
            .find(|e| e.split == split.name())
            .map(|e| e.loss)
    }
}

/// Training examples as `(input, target windows)` borrowed from a split.
struct Examples<'a> {
    data: &'a SplitData,
    mode: TrainMode,
    pairs: Vec<(usize, usize)>,
}

impl<'a> Examples<'a> {
    fn new(data: &'a SplitData, mode: TrainMode) -> Self {
        let pairs = match mode {
            TrainMode::Direct => Vec::new(),
            TrainMode::Autoregressive => data.next_day_pairs(),
        };
        Examples { data, mode, pairs }
    }

    fn len(&self) -> usize {
        match self.mode {
            TrainMode::Direct => self.data.num_samples(),
            TrainMode::Autoregressive => self.pairs.len(),
        }
    }

    fn get(&self, i: usize) -> (ArrayView3<'a, f32>, Vec<ArrayView3<'a, f32>>) {
        match self.mode {
            TrainMode::Direct => (self.data.input(i), self.data.targets(i).to_vec()),
            TrainMode::Autoregressive => {
                let (a, b) = self.pairs[i];
                (self.data.day_values(a), vec![self.data.day_values(b)])
            }
        }
    }
}

/// Summed loss over a batch and, when `grad` is set, the parameter
/// gradient of the batch-mean loss.
fn batch_pass(
    model: &Cirt<f32>,
    examples: &Examples<'_>,
    indices: &[usize],
    weights: Option<&Array1<f64>>,
    grad: bool,
) -> Result<(f64, Option<Cirt<f32>>)> {
    let items: Vec<_> = indices.iter().map(|&i| examples.get(i)).collect();
    let inputs: Vec<ArrayView3<'_, f32>> = items.iter().map(|(x, _)| x.view()).collect();
    let x = model.encode_batch(&inputs)?;
    let (y, cache) = model.forward_tokens(x.view())?;
    let outs = model.decode_batch(y.view())?;
    let scale = 1.0 / indices.len() as f32;
    let mut total = 0.0;
    let mut grads: Vec<Vec<Array3<f32>>> = Vec::with_capacity(items.len());
    for (out, (_, targets)) in outs.iter().zip(&items) {
        let preds: Vec<ArrayView3<'_, f32>> = out.iter().map(|a| a.view()).collect();
        let (l, mut g) = window_loss(&preds, targets, weights)?;
        total += l;
        if grad {
            g.iter_mut().for_each(|a| *a *= scale);
            grads.push(g);
        }
    }
    if !grad {
        return Ok((total, None));
    }
    let dy = model.encode_output_grad(&grads)?;
    Ok((total, Some(model.backward_tokens(&cache, dy.view()))))
}

fn loss_weights(data: &SplitData, cfg: &TrainConfig) -> Option<Array1<f64>> {
    cfg.weighted_loss.then(|| latitude_weights(&data.grid))
}

/// Mean loss of `model` over every example of `data` in the given mode.
pub fn evaluate_loss(model: &Cirt<f32>, data: &SplitData, cfg: &TrainConfig) -> Result<f64> {
    let examples = Examples::new(data, cfg.mode);
    if examples.len() == 0 {
        return Err(Error::degenerate("no examples to score"));
    }
    let weights = loss_weights(data, cfg);
    let order: Vec<usize> = (0..examples.len()).collect();
    let mut total = 0.0;
    for chunk in order.chunks(cfg.batch_size.max(1)) {
        total += batch_pass(model, &examples, chunk, weights.as_ref(), false)?.0;
    }
    Ok(total / examples.len() as f64)
}

struct RunFiles {
    history: File,
    checkpoints: PathBuf,
}

impl RunFiles {
    fn create(dir: &Path) -> Result<Self> {
        let checkpoints = dir.join(CHECKPOINT_DIR);
        fs::create_dir_all(&checkpoints).map_err(|e| Error::io(&checkpoints, e))?;
        let path = dir.join(HISTORY_FILE);
        File::create(&path).map_err(|e| Error::io(&path, e))?;
        let history = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(RunFiles { history, checkpoints })
    }

    fn log(&mut self, entry: &HistoryEntry) -> Result<()> {
        writeln!(self.history, "{}", entry.to_line())
            .and_then(|_| self.history.flush())
            .map_err(|e| Error::io(&self.checkpoints, e))
    }

    fn save(&self, model: &Cirt<f32>, name: &str) -> Result<()> {
        save_checkpoint(model, self.checkpoints.join(name))
    }
}

/// Trains on the manifest's train split, selecting by validation loss.
///
/// The head is chosen by `cfg.mode`, overriding `model_cfg.output`. With
/// `out_dir` set, the loss history and checkpoints are written there.
pub fn train(
    manifest: &DatasetManifest,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let train = SplitData::load(manifest, Split::Train, 1)?;
    let val = SplitData::load(manifest, Split::Val, 1)?;
    train_on(&train, Some(&val), model_cfg, cfg, out_dir)
}

pub fn train_on(
    train: &SplitData,
    val: Option<&SplitData>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model_cfg = ModelConfig {
        output: cfg.mode.output(),
        ..model_cfg.clone()
    };
    let shape = InputShape {
        lat_res_deg: train.grid.lat_res_deg(),
        lon_res_deg: train.grid.lon_res_deg(),
        num_vars: train.var_names.len(),
    };
    let mut model = Cirt::<f32>::new(model_cfg, shape)?;
    let examples = Examples::new(train, cfg.mode);
    if examples.len() == 0 {
        return Err(Error::config("the train split has no usable examples"));
    }
    let val = val.filter(|v| Examples::new(v, cfg.mode).len() > 0);
    let weights = loss_weights(train, cfg);
    let mut files = out_dir.map(RunFiles::create).transpose()?;

    let initial_train_loss = evaluate_loss(&model, train, cfg).map_err(|e| match e {
        Error::NumericalFailure { .. } => Error::TrainingFailure { step: 0 },
        e => e,
    })?;
    if !initial_train_loss.is_finite() {
        return Err(Error::TrainingFailure { step: 0 });
    }
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_val = f64::INFINITY;
    let mut history = Vec::new();
    let mut opt = Adam::new(&model, cfg.learning_rate as f32);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0usize;

    let per_epoch = examples.len().div_ceil(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let progress = (epoch - 1) as f64 + (b + 1) as f64 / per_epoch as f64;
            opt.learning_rate = (cfg.learning_rate * cfg.schedule.factor(progress, cfg.epochs)) as f32;
            let (sum, grad) = match batch_pass(&model, &examples, chunk, weights.as_ref(), true) {
                Ok(r) => r,
                Err(Error::NumericalFailure { .. }) => return Err(Error::TrainingFailure { step }),
                Err(e) => return Err(e),
            };
            if !sum.is_finite() {
                return Err(Error::TrainingFailure { step });
            }
            let mut grad = grad.expect("gradient requested");
            clip_global_norm(&mut grad, cfg.clip_norm);
            opt.step(&mut model, &grad);
            total += sum;
            step += 1;
        }
        let mut entries = vec![HistoryEntry {
            epoch,
            split: Split::Train.name().into(),
            loss: total / examples.len() as f64,
        }];
        let val_loss = match val {
            Some(v) => {
                let l = evaluate_loss(&model, v, cfg).map_err(|e| match e {
                    Error::NumericalFailure { .. } => Error::TrainingFailure { step },
                    e => e,
                })?;
                entries.push(HistoryEntry {
                    epoch,
                    split: Split::Val.name().into(),
                    loss: l,
                });
                Some(l)
            }
            None => None,
        };
        log::info!(
            "epoch {epoch}/{}: train loss {:.6}{}",
            cfg.epochs,
            entries[0].loss,
            val_loss.map(|l| format!(", val loss {l:.6}")).unwrap_or_default()
        );
        if let Some(f) = files.as_mut() {
            for e in &entries {
                f.log(e)?;
            }
        }
        history.extend(entries);
        if val_loss.is_none_or(|l| l < best_val) {
            best_val = val_loss.unwrap_or(best_val);
            best = model.clone();
            best_epoch = epoch;
            if let Some(f) = &files {
                f.save(&best, BEST_CHECKPOINT)?;
            }
        }
        if let Some(f) = &files {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                f.save(&model, &format!("epoch_{epoch:03}.ckpt"))?;
            }
        }
    }
    if let Some(f) = &files {
        f.save(&model, FINAL_CHECKPOINT)?;
        if cfg.epochs == 0 {
            f.save(&best, BEST_CHECKPOINT)?;
        }
    }
    Ok(TrainOutcome {
        model,
        best,
        best_epoch,
        initial_train_loss,
        history,
    })
}
