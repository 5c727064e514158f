//! Synthetic spherical fields for desk-scale experiments.
//!
//! Each variable is a static meridional profile plus a few travelling zonal
//! waves,
//!
//! ```text
//! x_k(λ, φ, t) = offset_k + merid_k·cos²λ
//!              + Σ_j a_j·cos^p_j(λ)·cos(m_j·φ + 2π·t/P_j + ψ_j)
//!              + noise_k(λ, φ, t)
//! ```
//!
//! with integer wavenumbers `m_j`, so every field is periodic in longitude.
//! Wave periods are `CYCLE_DAYS / n` for `n` in 1..=3, so the clean signal
//! repeats every `CYCLE_DAYS` and a training span of a few cycles visits
//! every phase combination that later days show.
//! The noise is a sum of low-order zonal modes whose coefficients follow a
//! unit-variance AR(1) process in time, scaled by `noise · scale_k`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{Duration, NaiveDate};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, DateRange, SplitSpec, MANIFEST_FILE};
use super::tensor_io::save_tensor;
use crate::error::{Error, Result};
use crate::geometry::{cos_lat, make_graticule, Graticule, WeatherState};

pub const WAVES_PER_VAR: usize = 3;
const NOISE_MODES: usize = 3;
const NOISE_MEMORY: f64 = 0.8;
pub const DEFAULT_NOISE: f64 = 0.05;
pub const CYCLE_DAYS: f64 = 80.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ZonalWave {
    pub var: usize,
    pub wavenumber: u32,
    pub amplitude: f64,
    pub lat_power: i32,
    /// Signed: negative periods travel westward.
    pub period_days: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecipe {
    pub var_names: Vec<String>,
    pub offsets: Vec<f64>,
    pub scales: Vec<f64>,
    pub meridional: Vec<f64>,
    pub waves: Vec<ZonalWave>,
    pub noise: f64,
    pub seed: u64,
}

fn var_profile(k: usize) -> (String, f64, f64) {
    match k {
        0 => ("z500".into(), 54000.0, 600.0),
        1 => ("t850".into(), 275.0, 5.0),
        2 => ("t500".into(), 255.0, 4.0),
        3 => ("z850".into(), 14500.0, 300.0),
        4 => ("t2m".into(), 280.0, 6.0),
        5 => ("u10".into(), 0.0, 4.0),
        6 => ("v10".into(), 0.0, 3.0),
        _ => (format!("var{k}"), 0.0, 1.0),
    }
}

impl SynthRecipe {
    pub fn new(num_vars: usize, seed: u64, noise: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut var_names = Vec::new();
        let mut offsets = Vec::new();
        let mut scales = Vec::new();
        let mut meridional = Vec::new();
        let mut waves = Vec::new();
        for k in 0..num_vars {
            let (name, offset, scale) = var_profile(k);
            var_names.push(name);
            offsets.push(offset);
            scales.push(scale);
            meridional.push(2.0 * scale * rng.random_range(0.5..1.0));
            for j in 0..WAVES_PER_VAR {
                let period = CYCLE_DAYS / rng.random_range(1..=3) as f64;
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                waves.push(ZonalWave {
                    var: k,
                    wavenumber: j as u32 + 1,
                    amplitude: scale * rng.random_range(0.5..1.0) / (j as f64 + 1.0).sqrt(),
                    lat_power: rng.random_range(1..=2),
                    period_days: sign * period,
                    phase: rng.random_range(0.0..2.0 * PI),
                });
            }
        }
        SynthRecipe {
            var_names,
            offsets,
            scales,
            meridional,
            waves,
            noise,
            seed,
        }
    }

    /// Field value without noise, `t` in days since the first generated day.
    pub fn clean_value(&self, var: usize, lat_deg: f64, lon_deg: f64, t: f64) -> f64 {
        let c = cos_lat(lat_deg);
        let phi = lon_deg.to_radians();
        let mut v = self.offsets[var] + self.meridional[var] * c * c;
        for w in self.waves.iter().filter(|w| w.var == var) {
            v += w.amplitude
                * c.powi(w.lat_power)
                * (w.wavenumber as f64 * phi + 2.0 * PI * t / w.period_days + w.phase).cos();
        }
        v
    }
}

/// `num_days` consecutive states starting 2000-01-01 with the default
/// noise level.
pub fn synth_generate(grid: &Graticule, num_vars: usize, num_days: usize, seed: u64) -> Vec<WeatherState> {
    let recipe = SynthRecipe::new(num_vars, seed, DEFAULT_NOISE);
    synth_generate_with(grid, &recipe, default_start(), num_days)
}

pub fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date")
}

pub fn synth_generate_with(
    grid: &Graticule,
    recipe: &SynthRecipe,
    start: NaiveDate,
    num_days: usize,
) -> Vec<WeatherState> {
    let k = recipe.var_names.len();
    let (h, w) = (grid.num_lat(), grid.num_lon());
    let grid_arc = Arc::new(grid.clone());
    let names = Arc::new(recipe.var_names.clone());
    let mut noise_rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    noise_rng.set_stream(1);
    // [var][mode][cos/sin]
    let mut coeffs = vec![[[0.0f64; 2]; NOISE_MODES]; k];
    for c in coeffs.iter_mut().flatten().flatten() {
        *c = noise_rng.sample(StandardNormal);
    }
    let innovation = (1.0 - NOISE_MEMORY * NOISE_MEMORY).sqrt();
    let norm = 1.0 / (2.0 * NOISE_MODES as f64).sqrt();

    let mut out = Vec::with_capacity(num_days);
    for day in 0..num_days {
        if day > 0 {
            for c in coeffs.iter_mut().flatten().flatten() {
                let e: f64 = noise_rng.sample(StandardNormal);
                *c = NOISE_MEMORY * *c + innovation * e;
            }
        }
        let t = day as f64;
        let values = Array3::from_shape_fn((h, w, k), |(i, j, v)| {
            let lat = grid.lat_deg()[i];
            let lon = grid.lon_deg()[j];
            let mut x = recipe.clean_value(v, lat, lon, t);
            if recipe.noise != 0.0 {
                let phi = lon.to_radians();
                let env = cos_lat(lat);
                let n: f64 = coeffs[v]
                    .iter()
                    .enumerate()
                    .map(|(m, [a, b])| {
                        let arg = (m as f64 + 1.0) * phi;
                        a * arg.cos() + b * arg.sin()
                    })
                    .sum();
                x += recipe.noise * recipe.scales[v] * env * n * norm;
            }
            x as f32
        });
        out.push(WeatherState {
            grid: grid_arc.clone(),
            values,
            var_names: names.clone(),
            valid_time: start + Duration::days(day as i64),
        });
    }
    out
}

/// Settings for a synthetic dataset written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub lat_res_deg: f64,
    pub lon_res_deg: f64,
    pub num_vars: usize,
    pub num_days: usize,
    pub seed: u64,
    pub noise: f64,
    pub start: NaiveDate,
    /// Fractions of the day sequence given to train and validation; the
    /// remainder is the test split.
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            lat_res_deg: 30.0,
            lon_res_deg: 30.0,
            num_vars: 2,
            num_days: 400,
            seed: 0,
            noise: DEFAULT_NOISE,
            start: default_start(),
            train_fraction: 0.6,
            val_fraction: 0.2,
        }
    }
}

impl SynthConfig {
    /// Contiguous train/val/test date ranges over the generated days.
    pub fn splits(&self) -> Result<SplitSpec> {
        let f = (self.train_fraction, self.val_fraction);
        if !(f.0 > 0.0 && f.1 > 0.0 && f.0 + f.1 < 1.0) {
            return Err(Error::config(format!(
                "train/val fractions {f:?} must be positive and sum below 1"
            )));
        }
        let n = self.num_days;
        let n_train = (n as f64 * f.0).round() as usize;
        let n_val = (n as f64 * f.1).round() as usize;
        if n_train == 0 || n_val == 0 || n_train + n_val >= n {
            return Err(Error::config(format!("{n} days are too few to split")));
        }
        let day = |i: usize| self.start + Duration::days(i as i64);
        Ok(SplitSpec {
            train: DateRange::new(day(0), day(n_train - 1)),
            val: DateRange::new(day(n_train), day(n_train + n_val - 1)),
            test: DateRange::new(day(n_train + n_val), day(n - 1)),
        })
    }
}

/// Generates, writes and indexes a synthetic dataset under `dir`, returning
/// the loaded manifest.
pub fn write_synthetic_dataset(dir: impl AsRef<Path>, cfg: &SynthConfig) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    if cfg.num_vars == 0 {
        return Err(Error::config("num_vars must be at least 1"));
    }
    let grid = make_graticule(cfg.lat_res_deg, cfg.lon_res_deg)?;
    let splits = cfg.splits()?;
    let recipe = SynthRecipe::new(cfg.num_vars, cfg.seed, cfg.noise);
    let states = synth_generate_with(&grid, &recipe, cfg.start, cfg.num_days);
    let mut manifest = DatasetManifest::new(
        cfg.lat_res_deg,
        cfg.lon_res_deg,
        recipe.var_names.clone(),
        splits,
        dir,
    )?;
    for s in &states {
        let rel = PathBuf::from("days").join(format!("{}.bin", s.valid_time));
        save_tensor(dir.join(&rel), &s.values)?;
        manifest.add_record(s.valid_time, rel);
    }
    manifest.compute_statistics()?;
    let path = dir.join(MANIFEST_FILE);
    manifest.save(&path)?;
    DatasetManifest::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_matches_closed_form() {
        let grid = make_graticule(30.0, 45.0).unwrap();
        let recipe = SynthRecipe::new(3, 7, 0.0);
        let states = synth_generate_with(&grid, &recipe, default_start(), 5);
        for (t, s) in states.iter().enumerate() {
            for (i, lat) in grid.lat_deg().iter().enumerate() {
                for (j, lon) in grid.lon_deg().iter().enumerate() {
                    for k in 0..3 {
                        let c = lat.to_radians().cos().max(0.0);
                        let c = if lat.abs() >= 90.0 { 0.0 } else { c };
                        let mut want = recipe.offsets[k] + recipe.meridional[k] * c * c;
                        for w in recipe.waves.iter().filter(|w| w.var == k) {
                            want += w.amplitude
                                * c.powi(w.lat_power)
                                * (w.wavenumber as f64 * lon.to_radians()
                                    + 2.0 * PI * t as f64 / w.period_days
                                    + w.phase)
                                    .cos();
                        }
                        assert_eq!(s.values[[i, j, k]], want as f32);
                    }
                }
            }
        }
        assert_eq!(recipe.var_names, vec!["z500", "t850", "t500"]);
    }

    #[test]
    fn full_turn_roll_is_invariant() {
        let recipe = SynthRecipe::new(2, 1, 0.0);
        for lon in [-180.0, -33.0, 0.0, 91.5] {
            for t in [0.0, 13.0] {
                let a = recipe.clean_value(1, 40.0, lon, t);
                let b = recipe.clean_value(1, 40.0, lon + 360.0, t);
                assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
            }
        }
    }
}
