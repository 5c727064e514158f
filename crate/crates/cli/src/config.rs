//! Layered run configuration: built-in defaults, then a TOML file, then
//! command-line flags. The resolved result is frozen into the output
//! directory and is enough to rerun the command.

use std::fs;
use std::path::{Path, PathBuf};

use cirt::data::{DateRange, Split, SplitSpec, SynthConfig};
use cirt::metrics::{Band, RegionBox, Window};
use cirt::model::{HeadDimMode, ModelConfig, PatchingMode, ScoreScale};
use cirt::training::{TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::error::{CliError, CliResult};

pub const FROZEN_CONFIG: &str = "config.toml";
pub const OUTPUT_ROOT_ENV: &str = "CIRT_OUTPUT_ROOT";
const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImportSettings {
    pub dir: Option<PathBuf>,
    pub var_names: Vec<String>,
    pub lat_res_deg: f64,
    pub lon_res_deg: f64,
    pub splits: SplitSpec,
}

impl Default for ImportSettings {
    fn default() -> Self {
        ImportSettings {
            dir: None,
            var_names: Vec::new(),
            lat_res_deg: 1.5,
            lon_res_deg: 1.5,
            splits: SplitSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub split: Split,
    pub stride: usize,
    pub batch_size: usize,
    pub bands: Vec<Band>,
    pub regions: Vec<RegionBox>,
    pub monthly: bool,
    pub error_maps: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            split: Split::Test,
            stride: 1,
            batch_size: 16,
            bands: Vec::new(),
            regions: Vec::new(),
            monthly: false,
            error_maps: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    Patching,
    Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSettings {
    pub study: Study,
    pub seeds: usize,
}

impl Default for AblateSettings {
    fn default() -> Self {
        AblateSettings {
            study: Study::Patching,
            seeds: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    ErrorMap,
    Monthly,
    Levels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSettings {
    pub kind: PlotKind,
    pub input: Option<PathBuf>,
    pub variable: Option<String>,
    pub window: Window,
}

impl Default for PlotSettings {
    fn default() -> Self {
        PlotSettings {
            kind: PlotKind::ErrorMap,
            input: None,
            variable: None,
            window: Window::Weeks34,
        }
    }
}

/// Fully resolved settings of one command. Sections that do not apply to
/// the command are left out.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub data: Option<SynthConfig>,
    pub import: Option<ImportSettings>,
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
    pub eval: Option<EvalSettings>,
    pub ablate: Option<AblateSettings>,
    pub plot: Option<PlotSettings>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|_| CliError::missing_input("--config", path))?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::config(format!("cannot serialize config: {e}")))
    }

    /// Writes the frozen copy into the output directory.
    pub fn freeze(&self) -> CliResult<PathBuf> {
        let dir = self.out_dir()?;
        fs::create_dir_all(&dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(FROZEN_CONFIG);
        fs::write(&path, self.to_toml()?)
            .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }

    pub fn out_dir(&self) -> CliResult<PathBuf> {
        self.output_dir
            .clone()
            .ok_or_else(|| CliError::config("no output directory resolved"))
    }

    pub fn require_manifest(&self) -> CliResult<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| CliError::config("--manifest is required"))
    }
}

fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

fn base(common: &CommonArgs, command: &str) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.command = command.to_string();
    cfg.seed = common.seed.or(cfg.seed);
    let out = match (&common.out, &cfg.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => o.clone(),
        (None, None) => {
            let root = std::env::var_os(OUTPUT_ROOT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT));
            root.join(command)
        }
    };
    cfg.output_dir = Some(absolute(&out));
    Ok(cfg)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_model(m: &mut ModelConfig, a: &ModelArgs) {
    set(&mut m.hidden_dim, a.hidden_dim);
    set(&mut m.num_layers, a.layers);
    set(&mut m.num_heads, a.heads);
    set(
        &mut m.patching_mode,
        a.patching.map(|p| match p {
            PatchingArg::Circular => PatchingMode::Circular,
            PatchingArg::Grid => PatchingMode::Grid,
        }),
    );
    set(&mut m.grid_patch_deg, a.grid_patch_deg);
    if a.fourier {
        m.use_fourier = true;
    }
    if a.no_fourier {
        m.use_fourier = false;
    }
    set(
        &mut m.head_dim_mode,
        a.head_dim_mode.map(|h| match h {
            HeadDimArg::Split => HeadDimMode::Split,
            HeadDimArg::PaperLiteral => HeadDimMode::PaperLiteral,
        }),
    );
    set(
        &mut m.score_scale,
        a.score_scale.map(|s| match s {
            ScoreScaleArg::KeyWidth => ScoreScale::KeyWidth,
            ScoreScaleArg::HiddenDim => ScoreScale::HiddenDim,
        }),
    );
}

fn apply_train(t: &mut TrainConfig, a: &TrainFlags) {
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.learning_rate, a.lr);
    set(&mut t.epochs, a.epochs);
    set(
        &mut t.mode,
        a.mode.map(|m| match m {
            ModeArg::Direct => TrainMode::Direct,
            ModeArg::Autoregressive => TrainMode::Autoregressive,
        }),
    );
    set(&mut t.checkpoint_every, a.checkpoint_every);
    if a.weighted_loss {
        t.weighted_loss = true;
    }
    set(&mut t.clip_norm, a.clip_norm);
}

/// Model and train sections with the run seed applied to both.
fn model_and_train(cfg: &mut RunConfig, model: &ModelArgs, train: &TrainFlags) {
    let mut m = cfg.model.take().unwrap_or_default();
    let mut t = cfg.train.take().unwrap_or_default();
    apply_model(&mut m, model);
    apply_train(&mut t, train);
    if let Some(s) = cfg.seed {
        m.seed = s;
        t.seed = s;
    }
    m.output = t.mode.output();
    cfg.model = Some(m);
    cfg.train = Some(t);
}

fn parse_years(flag: &str, text: &str) -> CliResult<DateRange> {
    let bad = || CliError::config(format!("{flag} expects YEAR or YEAR-YEAR, got {text:?}"));
    let (a, b) = match text.split_once('-') {
        Some((a, b)) => (a, b),
        None => (text, text),
    };
    let a: i32 = a.trim().parse().map_err(|_| bad())?;
    let b: i32 = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(bad());
    }
    Ok(DateRange::years(a, b))
}

pub fn parse_region(text: &str) -> CliResult<RegionBox> {
    match text {
        "europe" => return Ok(RegionBox::europe()),
        "north_america" | "north-america" => return Ok(RegionBox::north_america()),
        _ => {}
    }
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 5 {
        return Err(CliError::config(format!(
            "unknown region {text:?}; use europe, north_america or name:lat_min:lat_max:lon_min:lon_max"
        )));
    }
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| CliError::config(format!("region bound {s:?} is not a number")))
    };
    Ok(RegionBox {
        name: parts[0].to_string(),
        lat_min: num(parts[1])?,
        lat_max: num(parts[2])?,
        lon_min: num(parts[3])?,
        lon_max: num(parts[4])?,
    })
}

fn parse_band(text: &str) -> CliResult<Band> {
    Band::ALL
        .into_iter()
        .find(|b| b.name() == text.trim())
        .ok_or_else(|| CliError::config(format!("unknown band {text:?}; use low, mid or high")))
}

/// Resolves a subcommand's flags against its config file and the defaults.
pub fn resolve(command: &Command) -> CliResult<RunConfig> {
    match command {
        Command::DataGen(a) => {
            let mut cfg = base(&a.common, command.name())?;
            let mut d = cfg.data.take().unwrap_or_default();
            set(&mut d.lat_res_deg, a.lat_res);
            set(&mut d.lon_res_deg, a.lon_res);
            set(&mut d.num_vars, a.vars);
            set(&mut d.num_days, a.days);
            set(&mut d.noise, a.noise);
            set(&mut d.train_fraction, a.train_fraction);
            set(&mut d.val_fraction, a.val_fraction);
            set(&mut d.seed, cfg.seed);
            cfg.data = Some(d);
            Ok(cfg)
        }
        Command::Import(a) => {
            let mut cfg = base(&a.common, command.name())?;
            let mut s = cfg.import.take().unwrap_or_default();
            if let Some(dir) = &a.dir {
                s.dir = Some(absolute(dir));
            }
            set(&mut s.var_names, a.vars.clone());
            set(&mut s.lat_res_deg, a.lat_res);
            set(&mut s.lon_res_deg, a.lon_res);
            if let Some(y) = &a.train_years {
                s.splits.train = parse_years("--train-years", y)?;
            }
            if let Some(y) = &a.val_years {
                s.splits.val = parse_years("--val-years", y)?;
            }
            if let Some(y) = &a.test_years {
                s.splits.test = parse_years("--test-years", y)?;
            }
            cfg.import = Some(s);
            Ok(cfg)
        }
        Command::Train(a) => {
            let mut cfg = base(&a.common, command.name())?;
            set(&mut cfg.manifest, a.manifest.as_deref().map(absolute).map(Some));
            model_and_train(&mut cfg, &a.model, &a.train);
            Ok(cfg)
        }
        Command::Eval(a) => {
            let mut cfg = base(&a.common, command.name())?;
            set(&mut cfg.manifest, a.manifest.as_deref().map(absolute).map(Some));
            set(&mut cfg.checkpoint, a.checkpoint.as_deref().map(absolute).map(Some));
            let mut e = cfg.eval.take().unwrap_or_default();
            set(
                &mut e.split,
                a.split.map(|s| match s {
                    SplitArg::Train => Split::Train,
                    SplitArg::Val => Split::Val,
                    SplitArg::Test => Split::Test,
                }),
            );
            set(&mut e.stride, a.stride);
            if let Some(bands) = &a.bands {
                e.bands = bands.iter().map(|b| parse_band(b)).collect::<CliResult<_>>()?;
            }
            if !a.region.is_empty() {
                e.regions = a.region.iter().map(|r| parse_region(r)).collect::<CliResult<_>>()?;
            }
            if a.monthly {
                e.monthly = true;
            }
            if a.error_maps {
                e.error_maps = true;
            }
            cfg.eval = Some(e);
            Ok(cfg)
        }
        Command::Plot(a) => {
            let mut cfg = base(&a.common, command.name())?;
            let mut p = cfg.plot.take().unwrap_or_default();
            set(
                &mut p.kind,
                a.kind.map(|k| match k {
                    PlotKindArg::ErrorMap => PlotKind::ErrorMap,
                    PlotKindArg::Monthly => PlotKind::Monthly,
                    PlotKindArg::Levels => PlotKind::Levels,
                }),
            );
            if let Some(i) = &a.input {
                p.input = Some(absolute(i));
            }
            if a.variable.is_some() {
                p.variable = a.variable.clone();
            }
            set(
                &mut p.window,
                a.window.map(|w| match w {
                    WindowArg::Weeks34 => Window::Weeks34,
                    WindowArg::Weeks56 => Window::Weeks56,
                }),
            );
            cfg.plot = Some(p);
            Ok(cfg)
        }
        Command::Ablate(a) => {
            let mut cfg = base(&a.common, command.name())?;
            set(&mut cfg.manifest, a.manifest.as_deref().map(absolute).map(Some));
            model_and_train(&mut cfg, &a.model, &a.train);
            let mut s = cfg.ablate.take().unwrap_or_default();
            set(
                &mut s.study,
                a.study.map(|s| match s {
                    StudyArg::Patching => Study::Patching,
                    StudyArg::Mode => Study::Mode,
                }),
            );
            set(&mut s.seeds, a.seeds);
            cfg.ablate = Some(s);
            Ok(cfg)
        }
    }
}
