//! Latitude-weighted skill scores and the slices they are reported over.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{Datelike, NaiveDate};
use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cos_lat, latitude_weights, Graticule};
use crate::model::ForecastPair;

fn check_same(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::structural(format!("{what}: shapes {a:?} and {b:?} differ")));
    }
    Ok(())
}

/// Latitude-weighted RMSE of one `(H, W)` field.
pub fn lat_rmse<T: Copy + Into<f64>>(
    pred: ArrayView2<'_, T>,
    truth: ArrayView2<'_, T>,
    weights: ArrayView1<'_, f64>,
) -> Result<f64> {
    check_same(pred.dim(), truth.dim(), "lat_rmse")?;
    if weights.len() != pred.nrows() {
        return Err(Error::structural(format!(
            "{} latitude weights for {} rows",
            weights.len(),
            pred.nrows()
        )));
    }
    let (h, w) = pred.dim();
    let mut sum = 0.0;
    for ((p_row, t_row), a) in pred.outer_iter().zip(truth.outer_iter()).zip(weights) {
        let row: f64 = p_row
            .iter()
            .zip(t_row)
            .map(|(p, t)| {
                let d = (*p).into() - (*t).into();
                d * d
            })
            .sum();
        sum += a * row;
    }
    Ok((sum / (h * w) as f64).sqrt())
}

/// Latitude-weighted anomaly correlation of one `(H, W)` field.
pub fn lat_acc<T: Copy + Into<f64>>(
    pred: ArrayView2<'_, T>,
    truth: ArrayView2<'_, T>,
    climatology: ArrayView2<'_, T>,
    weights: ArrayView1<'_, f64>,
) -> Result<f64> {
    check_same(pred.dim(), truth.dim(), "lat_acc")?;
    check_same(pred.dim(), climatology.dim(), "lat_acc climatology")?;
    if weights.len() != pred.nrows() {
        return Err(Error::structural(format!(
            "{} latitude weights for {} rows",
            weights.len(),
            pred.nrows()
        )));
    }
    let (mut cross, mut pp, mut tt) = (0.0, 0.0, 0.0);
    for (h, a) in weights.iter().enumerate() {
        for w in 0..pred.ncols() {
            let c: f64 = climatology[[h, w]].into();
            let p = pred[[h, w]].into() - c;
            let t = truth[[h, w]].into() - c;
            cross += a * p * t;
            pp += a * p * p;
            tt += a * t * t;
        }
    }
    if pp <= 0.0 || tt <= 0.0 {
        return Err(Error::degenerate(
            "anomaly correlation is undefined for a zero-norm anomaly field",
        ));
    }
    Ok((cross / (pp * tt).sqrt()).clamp(-1.0, 1.0))
}

/// Per-point RMSE over a sequence of fields, without latitude weighting.
pub fn error_map<T: Copy + Into<f64>>(
    preds: &[ArrayView2<'_, T>],
    truths: &[ArrayView2<'_, T>],
) -> Result<Array2<f64>> {
    if preds.is_empty() {
        return Err(Error::degenerate("error map of an empty sequence"));
    }
    if preds.len() != truths.len() {
        return Err(Error::structural(format!(
            "{} predictions for {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let dim = preds[0].dim();
    let mut acc = Array2::<f64>::zeros(dim);
    for (p, t) in preds.iter().zip(truths) {
        check_same(p.dim(), dim, "error_map")?;
        check_same(t.dim(), dim, "error_map")?;
        ndarray::Zip::from(&mut acc).and(p).and(t).for_each(|a, p, t| {
            let d = (*p).into() - (*t).into();
            *a += d * d;
        });
    }
    let n = preds.len() as f64;
    Ok(acc.mapv(|v| (v / n).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    /// `|lat|` in `[0, 30)`.
    Low,
    /// `|lat|` in `[30, 60)`.
    Mid,
    /// `|lat|` in `[60, 90]`.
    High,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::Low, Band::Mid, Band::High];

    pub fn name(self) -> &'static str {
        match self {
            Band::Low => "low",
            Band::Mid => "mid",
            Band::High => "high",
        }
    }

    pub fn contains(self, lat_deg: f64) -> bool {
        let a = lat_deg.abs();
        match self {
            Band::Low => a < 30.0,
            Band::Mid => (30.0..60.0).contains(&a),
            Band::High => a >= 60.0,
        }
    }
}

/// A latitude/longitude box with inclusive bounds. Longitudes may be given
/// in either `[-180, 180)` or `[0, 360)`; boxes with `lon_min > lon_max`
/// wrap across the dateline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionBox {
    pub name: String,
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl RegionBox {
    /// 15°N-75°N, 170°W-50°W. Placeholder bounds, not a published definition.
    pub fn north_america() -> Self {
        RegionBox {
            name: "north_america".into(),
            lat_min: 15.0,
            lat_max: 75.0,
            lon_min: -170.0,
            lon_max: -50.0,
        }
    }

    /// 35°N-75°N, 15°W-45°E. Placeholder bounds, not a published definition.
    pub fn europe() -> Self {
        RegionBox {
            name: "europe".into(),
            lat_min: 35.0,
            lat_max: 75.0,
            lon_min: -15.0,
            lon_max: 45.0,
        }
    }

    pub fn presets() -> Vec<RegionBox> {
        vec![RegionBox::north_america(), RegionBox::europe()]
    }

    fn contains_lon(&self, lon: f64) -> bool {
        if self.lon_max - self.lon_min >= 360.0 {
            return true;
        }
        let wrap = |x: f64| (x + 180.0).rem_euclid(360.0) - 180.0;
        let (lo, hi, x) = (wrap(self.lon_min), wrap(self.lon_max), wrap(lon));
        if lo <= hi {
            (lo..=hi).contains(&x)
        } else {
            x >= lo || x <= hi
        }
    }
}

/// Rows and columns kept by a slice, with latitude weights renormalized to
/// mean one over the kept rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub weights: Array1<f64>,
}

impl Selection {
    pub fn global(grid: &Graticule) -> Self {
        Selection {
            rows: (0..grid.num_lat()).collect(),
            cols: (0..grid.num_lon()).collect(),
            weights: latitude_weights(grid),
        }
    }

    fn from_rows(grid: &Graticule, rows: Vec<usize>, cols: Vec<usize>, what: &str) -> Result<Self> {
        if rows.is_empty() || cols.is_empty() {
            return Err(Error::degenerate(format!("{what} selects no grid points")));
        }
        let kept: Array1<f64> = rows.iter().map(|&h| cos_lat(grid.lat_deg()[h])).collect();
        let mean = kept.mean().unwrap_or(0.0);
        if mean <= 0.0 {
            return Err(Error::degenerate(format!("{what} covers only zero-area rows")));
        }
        Ok(Selection {
            rows,
            cols,
            weights: kept / mean,
        })
    }

    pub fn crop<T: Clone>(&self, field: ArrayView2<'_, T>) -> Array2<T> {
        field.select(Axis(0), &self.rows).select(Axis(1), &self.cols)
    }

    pub fn crop3<T: Clone>(&self, field: ArrayView3<'_, T>) -> Array3<T> {
        field.select(Axis(0), &self.rows).select(Axis(1), &self.cols)
    }

    pub fn rmse<T: Copy + Into<f64>>(&self, pred: ArrayView2<'_, T>, truth: ArrayView2<'_, T>) -> Result<f64> {
        lat_rmse(self.crop(pred).view(), self.crop(truth).view(), self.weights.view())
    }

    pub fn acc<T: Copy + Into<f64>>(
        &self,
        pred: ArrayView2<'_, T>,
        truth: ArrayView2<'_, T>,
        climatology: ArrayView2<'_, T>,
    ) -> Result<f64> {
        lat_acc(
            self.crop(pred).view(),
            self.crop(truth).view(),
            self.crop(climatology).view(),
            self.weights.view(),
        )
    }
}

pub fn band_slice(grid: &Graticule, band: Band) -> Result<Selection> {
    let rows = grid
        .lat_deg()
        .iter()
        .enumerate()
        .filter(|(_, l)| band.contains(**l))
        .map(|(h, _)| h)
        .collect();
    Selection::from_rows(
        grid,
        rows,
        (0..grid.num_lon()).collect(),
        &format!("{} band", band.name()),
    )
}

pub fn region_slice(grid: &Graticule, region: &RegionBox) -> Result<Selection> {
    let lat_ok = |v: f64| (-90.0..=90.0).contains(&v);
    if !(lat_ok(region.lat_min) && lat_ok(region.lat_max) && region.lat_min <= region.lat_max) {
        return Err(Error::config(format!(
            "region `{}` has invalid latitude bounds [{}, {}]",
            region.name, region.lat_min, region.lat_max
        )));
    }
    if !(region.lon_min.is_finite() && region.lon_max.is_finite()) {
        return Err(Error::config(format!("region `{}` has non-finite longitudes", region.name)));
    }
    let rows = grid
        .lat_deg()
        .iter()
        .enumerate()
        .filter(|(_, l)| (region.lat_min..=region.lat_max).contains(*l))
        .map(|(h, _)| h)
        .collect();
    let cols = grid
        .lon_deg()
        .iter()
        .enumerate()
        .filter(|(_, l)| region.contains_lon(**l))
        .map(|(w, _)| w)
        .collect();
    Selection::from_rows(grid, rows, cols, &format!("region `{}`", region.name))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Weeks34,
    Weeks56,
}

impl Window {
    pub const BOTH: [Window; 2] = [Window::Weeks34, Window::Weeks56];

    pub fn name(self) -> &'static str {
        match self {
            Window::Weeks34 => "weeks34",
            Window::Weeks56 => "weeks56",
        }
    }

    pub fn of(self, pair: &ForecastPair) -> &Array3<f32> {
        match self {
            Window::Weeks34 => &pair.weeks34,
            Window::Weeks56 => &pair.weeks56,
        }
    }
}

/// One verified forecast: the initialization date, the prediction and the
/// observed window means, all in physical units.
#[derive(Debug, Clone, Copy)]
pub struct ForecastRecord<'a> {
    pub init: NaiveDate,
    pub pred: &'a ForecastPair,
    pub truth: &'a ForecastPair,
}

/// Aggregate score for one variable, window and slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub variable: String,
    pub window: Window,
    /// `global`, `band:<name>`, `region:<name>` or `month:<1..12>`.
    pub slice: String,
    /// Mean of per-forecast RMSE values.
    pub rmse: f64,
    /// Mean of per-forecast ACC values, when a climatology was supplied.
    pub acc: Option<f64>,
    /// Number of forecasts aggregated into `rmse`.
    pub count: usize,
    /// Number of forecasts with a defined ACC.
    pub acc_count: usize,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub bands: bool,
    pub regions: Vec<RegionBox>,
    pub monthly: bool,
    pub error_maps: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMapRecord {
    pub variable: String,
    pub window: Window,
    #[serde(skip)]
    pub map: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub forecasts: usize,
    pub records: Vec<MetricRecord>,
    /// Calendar months with no initialization, when a monthly breakdown was
    /// requested.
    pub missing_months: Vec<u32>,
    #[serde(skip)]
    pub error_maps: Vec<ErrorMapRecord>,
}

impl EvalReport {
    pub fn get(&self, variable: &str, window: Window, slice: &str) -> Option<&MetricRecord> {
        self.records
            .iter()
            .find(|r| r.variable == variable && r.window == window && r.slice == slice)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:<8} {:<22} {:>14} {:>8} {:>6}",
            "variable", "window", "slice", "rmse", "acc", "n"
        );
        for r in &self.records {
            let acc = r.acc.map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
            let _ = writeln!(
                out,
                "{:<12} {:<8} {:<22} {:>14.6} {:>8} {:>6}",
                r.variable,
                r.window.name(),
                r.slice,
                r.rmse,
                acc,
                r.count
            );
        }
        if !self.missing_months.is_empty() {
            let _ = writeln!(out, "months without forecasts: {:?}", self.missing_months);
        }
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot serialize report: {e}")))
    }
}

struct Tally {
    rmse_sum: f64,
    count: usize,
    acc_sum: f64,
    acc_count: usize,
}

/// Scores every forecast on every requested slice and averages per slice.
pub fn evaluate(
    forecasts: &[ForecastRecord<'_>],
    grid: &Graticule,
    var_names: &[String],
    climatology: Option<ArrayView3<'_, f32>>,
    options: &EvalOptions,
) -> Result<EvalReport> {
    if forecasts.is_empty() {
        return Err(Error::degenerate("no forecasts to evaluate"));
    }
    let expected = (grid.num_lat(), grid.num_lon(), var_names.len());
    for f in forecasts {
        for w in Window::BOTH {
            if w.of(f.pred).dim() != expected || w.of(f.truth).dim() != expected {
                return Err(Error::structural(format!(
                    "forecast for {} does not have shape {expected:?}",
                    f.init
                )));
            }
        }
    }
    if let Some(c) = &climatology {
        if c.dim() != expected {
            return Err(Error::structural(format!(
                "climatology shape {:?} does not match {expected:?}",
                c.dim()
            )));
        }
    }

    let mut slices = vec![("global".to_string(), Selection::global(grid))];
    if options.bands {
        for band in Band::ALL {
            slices.push((format!("band:{}", band.name()), band_slice(grid, band)?));
        }
    }
    for region in &options.regions {
        slices.push((format!("region:{}", region.name), region_slice(grid, region)?));
    }

    let mut tallies: BTreeMap<(usize, Window, usize), Tally> = BTreeMap::new();
    let mut monthly: BTreeMap<(usize, Window, u32), Tally> = BTreeMap::new();
    for f in forecasts {
        for w in Window::BOTH {
            let (pred, truth) = (w.of(f.pred), w.of(f.truth));
            for k in 0..var_names.len() {
                let p = pred.index_axis(Axis(2), k);
                let t = truth.index_axis(Axis(2), k);
                let c = climatology.as_ref().map(|c| c.index_axis(Axis(2), k));
                for (si, (_, sel)) in slices.iter().enumerate() {
                    let rmse = sel.rmse(p, t)?;
                    let acc = match c {
                        Some(c) => match sel.acc(p, t, c) {
                            Ok(a) => Some(a),
                            Err(Error::Degenerate(_)) => None,
                            Err(e) => return Err(e),
                        },
                        None => None,
                    };
                    add(tallies.entry((k, w, si)).or_insert_with(Tally::new), rmse, acc);
                    if si == 0 && options.monthly {
                        add(
                            monthly.entry((k, w, f.init.month())).or_insert_with(Tally::new),
                            rmse,
                            acc,
                        );
                    }
                }
            }
        }
    }

    let mut records = Vec::new();
    for k in 0..var_names.len() {
        for w in Window::BOTH {
            for (si, (label, _)) in slices.iter().enumerate() {
                records.push(tallies[&(k, w, si)].record(&var_names[k], w, label.clone()));
            }
            if options.monthly {
                for month in 1..=12 {
                    if let Some(t) = monthly.get(&(k, w, month)) {
                        records.push(t.record(&var_names[k], w, format!("month:{month}")));
                    }
                }
            }
        }
    }
    let missing_months = if options.monthly {
        (1..=12)
            .filter(|m| !forecasts.iter().any(|f| f.init.month() == *m))
            .collect()
    } else {
        Vec::new()
    };

    let mut error_maps = Vec::new();
    if options.error_maps {
        for k in 0..var_names.len() {
            for w in Window::BOTH {
                let preds: Vec<_> = forecasts.iter().map(|f| w.of(f.pred).index_axis(Axis(2), k)).collect();
                let truths: Vec<_> = forecasts.iter().map(|f| w.of(f.truth).index_axis(Axis(2), k)).collect();
                error_maps.push(ErrorMapRecord {
                    variable: var_names[k].clone(),
                    window: w,
                    map: error_map(&preds, &truths)?,
                });
            }
        }
    }

    Ok(EvalReport {
        forecasts: forecasts.len(),
        records,
        missing_months,
        error_maps,
    })
}

impl Tally {
    fn new() -> Self {
        Tally {
            rmse_sum: 0.0,
            count: 0,
            acc_sum: 0.0,
            acc_count: 0,
        }
    }

    fn record(&self, variable: &str, window: Window, slice: String) -> MetricRecord {
        MetricRecord {
            variable: variable.to_string(),
            window,
            slice,
            rmse: self.rmse_sum / self.count as f64,
            acc: (self.acc_count > 0).then(|| self.acc_sum / self.acc_count as f64),
            count: self.count,
            acc_count: self.acc_count,
        }
    }
}

fn add(t: &mut Tally, rmse: f64, acc: Option<f64>) {
    t.rmse_sum += rmse;
    t.count += 1;
    if let Some(a) = acc {
        t.acc_sum += a;
        t.acc_count += 1;
    }
}

/// Per-month report: only the global and month slices, grouped by
/// initialization month.
pub fn monthly_report(
    forecasts: &[ForecastRecord<'_>],
    grid: &Graticule,
    var_names: &[String],
    climatology: Option<ArrayView3<'_, f32>>,
) -> Result<EvalReport> {
    let mut report = evaluate(
        forecasts,
        grid,
        var_names,
        climatology,
        &EvalOptions {
            monthly: true,
            ..EvalOptions::default()
        },
    )?;
    report.records.retain(|r| r.slice.starts_with("month:"));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_graticule;
    use ndarray::array;

    #[test]
    fn rmse_identities() {
        let grid = make_graticule(30.0, 60.0).unwrap();
        let w = latitude_weights(&grid);
        let truth = Array2::from_shape_fn((7, 6), |(h, x)| (h * 6 + x) as f64 * 0.37 - 4.0);
        assert_eq!(lat_rmse(truth.view(), truth.view(), w.view()).unwrap(), 0.0);
        let shifted = &truth - 2.5;
        let r = lat_rmse(shifted.view(), truth.view(), w.view()).unwrap();
        assert!((r - 2.5).abs() < 1e-12);
        let bad = Array2::<f64>::zeros((6, 6));
        assert!(matches!(lat_rmse(bad.view(), truth.view(), w.view()), Err(Error::Structural(_))));
    }

    #[test]
    fn acc_signs_and_degenerate() {
        let w = array![0.5, 1.5];
        let clim = Array2::<f64>::zeros((2, 3));
        let t = array![[1.0, -2.0, 0.5], [0.0, 3.0, -1.0]];
        assert!((lat_acc(t.view(), t.view(), clim.view(), w.view()).unwrap() - 1.0).abs() < 1e-15);
        let neg = -&t;
        assert!((lat_acc(neg.view(), t.view(), clim.view(), w.view()).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(
            lat_acc(clim.view(), t.view(), clim.view(), w.view()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn band_rows_on_default_grid() {
        let grid = make_graticule(1.5, 1.5).unwrap();
        let counts: Vec<usize> = Band::ALL
            .iter()
            .map(|b| band_slice(&grid, *b).unwrap().rows.len())
            .collect();
        assert_eq!(counts, vec![39, 40, 42]);
        let high = band_slice(&grid, Band::High).unwrap();
        assert!(high.rows.contains(&0) && high.rows.contains(&120));
        for b in Band::ALL {
            let s = band_slice(&grid, b).unwrap();
            assert!((s.weights.mean().unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_rows_go_up() {
        assert!(Band::Mid.contains(30.0) && Band::Mid.contains(-30.0));
        assert!(Band::High.contains(60.0) && Band::High.contains(90.0));
        assert!(!Band::Low.contains(30.0));
    }

    #[test]
    fn empty_band_is_degenerate() {
        // 60° rows: -90, -30, 30, 90; nothing below 30.
        let grid = make_graticule(60.0, 60.0).unwrap();
        assert!(matches!(band_slice(&grid, Band::Low), Err(Error::Degenerate(_))));
    }

    #[test]
    fn region_boxes() {
        let grid = make_graticule(30.0, 30.0).unwrap();
        let full = RegionBox {
            name: "all".into(),
            lat_min: -90.0,
            lat_max: 90.0,
            lon_min: -180.0,
            lon_max: 180.0,
        };
        assert_eq!(region_slice(&grid, &full).unwrap(), Selection::global(&grid));

        let row = RegionBox {
            name: "row".into(),
            lat_min: 30.0,
            lat_max: 30.0,
            lon_min: 0.0,
            lon_max: 90.0,
        };
        let s = region_slice(&grid, &row).unwrap();
        assert_eq!(s.rows, vec![4]);
        assert_eq!(s.cols, vec![6, 7, 8, 9]);
        assert_eq!(s.weights, array![1.0]);

        let wrap = RegionBox {
            name: "dateline".into(),
            lat_min: -10.0,
            lat_max: 10.0,
            lon_min: 150.0,
            lon_max: -150.0,
        };
        let s = region_slice(&grid, &wrap).unwrap();
        assert_eq!(s.cols, vec![0, 1, 11]);

        let in_360 = RegionBox {
            lon_min: 200.0,
            lon_max: 300.0,
            ..row.clone()
        };
        // 200..300 east is -160..-60.
        assert_eq!(region_slice(&grid, &in_360).unwrap().cols, vec![1, 2, 3, 4]);

        let empty = RegionBox {
            lat_min: 10.0,
            lat_max: 20.0,
            ..row.clone()
        };
        assert!(matches!(region_slice(&grid, &empty), Err(Error::Degenerate(_))));
        let bad = RegionBox {
            lat_min: 50.0,
            lat_max: 10.0,
            ..row
        };
        assert!(matches!(region_slice(&grid, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn presets_are_nonempty_on_default_grid() {
        let grid = make_graticule(1.5, 1.5).unwrap();
        for r in RegionBox::presets() {
            let s = region_slice(&grid, &r).unwrap();
            assert!(!s.rows.is_empty() && !s.cols.is_empty());
        }
    }

    #[test]
    fn error_map_contract() {
        let a = Array2::from_elem((2, 2), 1.0f32);
        let b = Array2::from_elem((2, 2), 4.0f32);
        let m = error_map(&[a.view(), a.view()], &[b.view(), b.view()]).unwrap();
        assert_eq!(m, Array2::from_elem((2, 2), 3.0));
        let empty: [ArrayView2<f32>; 0] = [];
        assert!(matches!(error_map(&empty, &empty), Err(Error::Degenerate(_))));
    }
}
