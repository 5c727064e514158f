use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cirt::data::{import_directory, load_tensor, save_tensor, DatasetManifest, Split, SplitData, MANIFEST_FILE};
use cirt::metrics::{EvalOptions, EvalReport, Window};
use cirt::model::checkpoint::{load_checkpoint_matching, read_checkpoint};
use cirt::model::{InputShape, ModelConfig};
use cirt::training::{
    evaluate_split, run_ablation_matrix, run_mode_comparison, train_on, ExperimentData, ExperimentReport, BEST_CHECKPOINT,
};
use ndarray::{Array2, Array3, Axis};
use serde::Serialize;

use crate::config::{PlotKind, RunConfig, Study};
use crate::error::{CliError, CliResult};
use crate::plot;

pub const REPORT_TOML: &str = "report.toml";
pub const REPORT_TXT: &str = "report.txt";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const TEST_REPORT: &str = "test_report.toml";
pub const ERROR_MAP_DIR: &str = "error_maps";

/// Runs the command recorded in `cfg`, after freezing it into the output
/// directory.
pub fn execute(cfg: &RunConfig) -> CliResult<()> {
    let frozen = cfg.freeze()?;
    log::info!("{} config frozen at {}", cfg.command, frozen.display());
    match cfg.command.as_str() {
        "data-gen" => data_gen(cfg),
        "import" => import(cfg),
        "train" => train(cfg),
        "eval" => eval(cfg),
        "plot" => plot_cmd(cfg),
        "ablate" => ablate(cfg),
        other => Err(CliError::config(format!("unknown command {other:?} in config"))),
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn to_toml<T: Serialize>(value: &T) -> CliResult<String> {
    toml::to_string(value).map_err(|e| CliError::config(format!("cannot serialize: {e}")))
}

fn existing<'a>(flag: &str, path: Option<&'a Path>) -> CliResult<&'a Path> {
    let path = path.ok_or_else(|| CliError::config(format!("{flag} is required")))?;
    if !path.exists() {
        return Err(CliError::missing_input(flag, path));
    }
    Ok(path)
}

fn load_manifest(cfg: &RunConfig) -> CliResult<DatasetManifest> {
    let path = existing("--manifest", cfg.manifest.as_deref())?;
    Ok(DatasetManifest::load(path)?)
}

fn load_climatology(manifest: &DatasetManifest) -> CliResult<Option<Array3<f32>>> {
    Ok(match manifest.climatology {
        Some(_) => Some(manifest.load_climatology()?),
        None => None,
    })
}

fn data_gen(cfg: &RunConfig) -> CliResult<()> {
    let synth = cfg.data.clone().unwrap_or_default();
    let out = cfg.out_dir()?;
    let manifest = cirt::data::write_synthetic_dataset(&out, &synth)?;
    if manifest.usable_inits(Split::Train).is_empty() {
        log::warn!(
            "zero trainable samples: every input needs {} further days inside the train split",
            cirt::data::SAMPLE_SPAN_DAYS - 1
        );
    }
    println!("wrote {} days and {}", manifest.records.len(), out.join(MANIFEST_FILE).display());
    Ok(())
}

fn import(cfg: &RunConfig) -> CliResult<()> {
    let s = cfg.import.clone().unwrap_or_default();
    let dir = existing("--dir", s.dir.as_deref())?;
    if s.var_names.is_empty() {
        return Err(CliError::config("--vars is required"));
    }
    let manifest = import_directory(dir, s.var_names, s.lat_res_deg, s.lon_res_deg, s.splits)?;
    println!("indexed {} days into {}", manifest.records.len(), dir.join(MANIFEST_FILE).display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    mode: String,
    epochs: usize,
    best_epoch: usize,
    initial_train_loss: f64,
    final_train_loss: Option<f64>,
    final_val_loss: Option<f64>,
    best_checkpoint: PathBuf,
}

fn train(cfg: &RunConfig) -> CliResult<()> {
    let manifest = load_manifest(cfg)?;
    let model_cfg = cfg.model.clone().unwrap_or_default();
    let train_cfg = cfg.train.clone().unwrap_or_default();
    let out = cfg.out_dir()?;
    let data = ExperimentData::load(&manifest)?;
    let outcome = train_on(&data.train, Some(&data.val), &model_cfg, &train_cfg, Some(&out))?;
    let summary = TrainSummary {
        mode: train_cfg.mode.name().into(),
        epochs: train_cfg.epochs,
        best_epoch: outcome.best_epoch,
        initial_train_loss: outcome.initial_train_loss,
        final_train_loss: outcome.final_loss(Split::Train),
        final_val_loss: outcome.final_loss(Split::Val),
        best_checkpoint: out.join(cirt::training::CHECKPOINT_DIR).join(BEST_CHECKPOINT),
    };
    write_text(&out.join(SUMMARY_FILE), &to_toml(&summary)?)?;
    if data.test.num_samples() == 0 {
        log::warn!("test split has no samples; skipping the test report");
        return Ok(());
    }
    let report = data.evaluate(&outcome.best, Split::Test, &EvalOptions::default(), train_cfg.batch_size)?;
    write_text(&out.join(TEST_REPORT), &report.to_toml()?)?;
    println!(
        "trained {} epochs, best epoch {}, initial train loss {:.6}",
        summary.epochs, summary.best_epoch, summary.initial_train_loss
    );
    print!("{}", report.to_table());
    Ok(())
}

fn eval(cfg: &RunConfig) -> CliResult<()> {
    let settings = cfg.eval.clone().unwrap_or_default();
    let ckpt_path = existing("--checkpoint", cfg.checkpoint.as_deref())?;
    let manifest = load_manifest(cfg)?;
    let ckpt = read_checkpoint(ckpt_path)?;
    let model_cfg = ModelConfig::from_kv(&ckpt.config)?;
    let shape = InputShape {
        lat_res_deg: manifest.lat_res_deg,
        lon_res_deg: manifest.lon_res_deg,
        num_vars: manifest.var_names.len(),
    };
    let model = load_checkpoint_matching(ckpt_path, &model_cfg, &shape)?;
    let data = SplitData::load(&manifest, settings.split, settings.stride.max(1))?;
    let clim = load_climatology(&manifest)?;
    let options = EvalOptions {
        bands: !settings.bands.is_empty(),
        regions: settings.regions.clone(),
        monthly: settings.monthly,
        error_maps: settings.error_maps,
    };
    let mut report = evaluate_split(&model, &data, clim.as_ref().map(|c| c.view()), &options, settings.batch_size.max(1))?;
    report.records.retain(|r| match r.slice.strip_prefix("band:") {
        Some(name) => settings.bands.iter().any(|b| b.name() == name),
        None => true,
    });

    let out = cfg.out_dir()?;
    let mut header = String::new();
    let _ = writeln!(
        header,
        "split {}, {} forecasts, checkpoint {}",
        settings.split.name(),
        report.forecasts,
        ckpt_path.display()
    );
    for r in &settings.regions {
        let _ = writeln!(
            header,
            "region {}: lat {}..{}, lon {}..{}",
            r.name, r.lat_min, r.lat_max, r.lon_min, r.lon_max
        );
    }
    let text = format!("{header}{}", report.to_table());
    write_text(&out.join(REPORT_TXT), &text)?;
    write_text(&out.join(REPORT_TOML), &report.to_toml()?)?;
    if settings.error_maps {
        let dir = out.join(ERROR_MAP_DIR);
        fs::create_dir_all(&dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
        for m in &report.error_maps {
            let t = m.map.mapv(|v| v as f32).insert_axis(Axis(2));
            save_tensor(dir.join(format!("{}_{}.bin", m.variable, m.window.name())), &t)?;
        }
    }
    print!("{text}");
    Ok(())
}

fn read_report(path: &Path) -> CliResult<EvalReport> {
    let text = fs::read_to_string(path).map_err(|_| CliError::missing_input("--input", path))?;
    let report: EvalReport = toml::from_str(&text)
        .map_err(|e| CliError::data(format!("{} is not an evaluation report: {e}", path.display())))?;
    if report.records.is_empty() {
        return Err(CliError::data(format!("report {} has no entries; nothing to plot", path.display())));
    }
    Ok(report)
}

fn plot_cmd(cfg: &RunConfig) -> CliResult<()> {
    let p = cfg.plot.clone().unwrap_or_default();
    let input = existing("--input", p.input.as_deref())?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("figure");
    let out = cfg.out_dir()?;
    let (img, name) = match p.kind {
        PlotKind::ErrorMap => {
            let t = load_tensor(input, None)?;
            let map: Array2<f64> = t.index_axis(Axis(2), 0).mapv(f64::from);
            (plot::heat_map(map.view())?, format!("{stem}_map.png"))
        }
        PlotKind::Monthly => {
            let report = read_report(input)?;
            let var = pick_variable(&report, p.variable.as_deref())?;
            let mut months: Vec<(u32, f64)> = report
                .records
                .iter()
                .filter(|r| r.variable == var && r.window == p.window)
                .filter_map(|r| Some((r.slice.strip_prefix("month:")?.parse().ok()?, r.rmse)))
                .collect();
            if months.is_empty() {
                return Err(CliError::data(format!(
                    "{} has no monthly entries for {var} {}",
                    input.display(),
                    p.window.name()
                )));
            }
            months.sort_by_key(|m| m.0);
            let values: Vec<f64> = months.iter().map(|m| m.1).collect();
            (plot::line_chart(&values)?, format!("{stem}_{var}_{}_monthly.png", p.window.name()))
        }
        PlotKind::Levels => {
            let report = read_report(input)?;
            let (map, _) = level_grid(&report, p.window)?;
            (plot::heat_map(map.view())?, format!("{stem}_{}_levels.png", p.window.name()))
        }
    };
    let path = out.join(name);
    plot::save_png(&img, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn pick_variable(report: &EvalReport, wanted: Option<&str>) -> CliResult<String> {
    let first = report.records.first().ok_or_else(|| CliError::data("report has no entries"))?;
    match wanted {
        None => Ok(first.variable.clone()),
        Some(v) if report.records.iter().any(|r| r.variable == v) => Ok(v.to_string()),
        Some(v) => Err(CliError::config(format!("report has no variable {v:?}"))),
    }
}

/// RMSE per variable (rows) and slice (columns) for one window, each row
/// scaled by its largest value so variables in different units share one
/// color range.
pub fn level_grid(report: &EvalReport, window: Window) -> CliResult<(Array2<f64>, Vec<String>)> {
    let records: Vec<_> = report.records.iter().filter(|r| r.window == window).collect();
    if records.is_empty() {
        return Err(CliError::data("report has no entries"));
    }
    let mut vars: Vec<&str> = Vec::new();
    let mut slices: Vec<&str> = Vec::new();
    for r in &records {
        if !vars.contains(&r.variable.as_str()) {
            vars.push(&r.variable);
        }
        if !slices.contains(&r.slice.as_str()) {
            slices.push(&r.slice);
        }
    }
    let mut grid = Array2::from_elem((vars.len(), slices.len()), f64::NAN);
    for r in &records {
        let i = vars.iter().position(|v| *v == r.variable).unwrap_or(0);
        let j = slices.iter().position(|s| *s == r.slice).unwrap_or(0);
        grid[[i, j]] = r.rmse;
    }
    for mut row in grid.rows_mut() {
        let top = row.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
        if top > 0.0 {
            row.mapv_inplace(|v| v / top);
        }
    }
    Ok((grid, vars.iter().map(|v| v.to_string()).collect()))
}

fn ablate(cfg: &RunConfig) -> CliResult<()> {
    let manifest = load_manifest(cfg)?;
    let model_cfg = cfg.model.clone().unwrap_or_default();
    let train_cfg = cfg.train.clone().unwrap_or_default();
    let settings = cfg.ablate.clone().unwrap_or_default();
    if settings.seeds == 0 {
        return Err(CliError::config("--seeds must be at least 1"));
    }
    let first = cfg.seed.unwrap_or(0);
    let seeds: Vec<u64> = (first..first + settings.seeds as u64).collect();
    let data = ExperimentData::load(&manifest)?;
    let out = cfg.out_dir()?;
    let report: ExperimentReport = match settings.study {
        Study::Patching => run_ablation_matrix(&data, &model_cfg, &train_cfg, &seeds, Some(&out))?,
        Study::Mode => run_mode_comparison(&data, &model_cfg, &train_cfg, &seeds, Some(&out))?,
    };
    write_text(&out.join(REPORT_TOML), &report.to_toml()?)?;
    let table = report.to_table();
    write_text(&out.join(REPORT_TXT), &table)?;
    print!("{table}");
    Ok(())
}
