use ndarray::{Array3, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::WeatherState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

/// Normalization statistics and per-point climatology of a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainStatistics {
    pub stats: Vec<VarStats>,
    pub climatology: Array3<f32>,
    pub days: usize,
}

/// Checks that `stats` lists exactly `var_names`, in order, with usable spreads.
pub fn check_stats(stats: &[VarStats], var_names: &[String]) -> Result<()> {
    if stats.len() != var_names.len() {
        return Err(Error::config(format!(
            "statistics cover {} variables, data has {}",
            stats.len(),
            var_names.len()
        )));
    }
    for (s, name) in stats.iter().zip(var_names) {
        if &s.name != name {
            return Err(Error::config(format!(
                "statistics list `{}` where `{name}` was expected",
                s.name
            )));
        }
        if !(s.std.is_finite() && s.std > 0.0) || !s.mean.is_finite() {
            return Err(Error::config(format!(
                "variable `{name}` has unusable statistics (mean {}, std {})",
                s.mean, s.std
            )));
        }
    }
    Ok(())
}

fn affine(values: &mut Array3<f32>, stats: &[VarStats], f: impl Fn(f64, &VarStats) -> f64) -> Result<()> {
    if values.len_of(Axis(2)) != stats.len() {
        return Err(Error::structural(format!(
            "field has {} variables, statistics cover {}",
            values.len_of(Axis(2)),
            stats.len()
        )));
    }
    for (mut plane, s) in values.axis_iter_mut(Axis(2)).zip(stats) {
        if !(s.std.is_finite() && s.std > 0.0) {
            return Err(Error::config(format!("variable `{}` has zero standard deviation", s.name)));
        }
        plane.mapv_inplace(|v| f(f64::from(v), s) as f32);
    }
    Ok(())
}

/// Per-variable z-score in place.
pub fn normalize_values(values: &mut Array3<f32>, stats: &[VarStats]) -> Result<()> {
    affine(values, stats, |v, s| (v - s.mean) / s.std)
}

pub fn denormalize_values(values: &mut Array3<f32>, stats: &[VarStats]) -> Result<()> {
    affine(values, stats, |v, s| v * s.std + s.mean)
}

pub fn normalize(state: &WeatherState, stats: &[VarStats]) -> Result<WeatherState> {
    let mut out = state.clone();
    normalize_values(&mut out.values, stats)?;
    Ok(out)
}

pub fn denormalize(state: &WeatherState, stats: &[VarStats]) -> Result<WeatherState> {
    let mut out = state.clone();
    denormalize_values(&mut out.values, stats)?;
    Ok(out)
}

/// Per-variable mean and standard deviation over every point of every day,
/// plus the per-point mean field. Sums are shifted by the first day's
/// per-variable mean to limit cancellation.
pub fn compute_stats<'a>(
    days: impl IntoIterator<Item = ArrayView3<'a, f32>>,
    var_names: &[String],
) -> Result<TrainStatistics> {
    let k = var_names.len();
    let mut point_sum: Option<Array3<f64>> = None;
    let mut shift = vec![0.0f64; k];
    let mut sum = vec![0.0f64; k];
    let mut sum_sq = vec![0.0f64; k];
    let mut n_days = 0usize;
    for day in days {
        if day.len_of(Axis(2)) != k {
            return Err(Error::structural(format!(
                "day has {} variables, expected {k}",
                day.len_of(Axis(2))
            )));
        }
        match &mut point_sum {
            None => {
                for (v, plane) in day.axis_iter(Axis(2)).enumerate() {
                    shift[v] = plane.iter().map(|x| f64::from(*x)).sum::<f64>() / plane.len() as f64;
                }
                point_sum = Some(day.mapv(f64::from));
            }
            Some(p) => {
                if p.dim() != day.dim() {
                    return Err(Error::structural(format!(
                        "day shape {:?} differs from {:?}",
                        day.dim(),
                        p.dim()
                    )));
                }
                ndarray::Zip::from(p).and(&day).for_each(|p, x| *p += f64::from(*x));
            }
        }
        for (v, plane) in day.axis_iter(Axis(2)).enumerate() {
            for x in plane.iter() {
                let d = f64::from(*x) - shift[v];
                sum[v] += d;
                sum_sq[v] += d * d;
            }
        }
        n_days += 1;
    }
    let point_sum = point_sum.ok_or_else(|| Error::config("training split holds no days"))?;
    let per_var = (point_sum.len() / k.max(1)) as f64 * n_days as f64;
    let stats = var_names
        .iter()
        .enumerate()
        .map(|(v, name)| {
            let m = sum[v] / per_var;
            let var = (sum_sq[v] / per_var - m * m).max(0.0);
            VarStats {
                name: name.clone(),
                mean: shift[v] + m,
                std: var.sqrt(),
            }
        })
        .collect();
    Ok(TrainStatistics {
        stats,
        climatology: point_sum.mapv(|s| (s / n_days as f64) as f32),
        days: n_days,
    })
}
