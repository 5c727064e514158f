//! Graticule, latitude weights, and the patching transforms between gridded
//! fields `(H, W, K)` and token matrices.
//!
//! Circular patching turns every latitude row into one token: the `(W, K)`
//! slice of a parallel flattened longitude-major, variable-minor. Grid
//! patching cuts square planar patches instead and is kept for ablations.

use std::f64::consts::PI;
use std::sync::Arc;

use chrono::NaiveDate;
use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use num_traits::Zero;

use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

const DIVISIBILITY_TOL: f64 = 1e-9;

/// Latitude/longitude coordinate grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Graticule {
    lat_deg: Vec<f64>,
    lon_deg: Vec<f64>,
    lat_res_deg: f64,
    lon_res_deg: f64,
    earth_radius_km: f64,
}

fn whole_multiple(total: f64, step: f64) -> Option<usize> {
    if !(step.is_finite() && step > 0.0) {
        return None;
    }
    let n = total / step;
    let rounded = n.round();
    if rounded >= 1.0 && (n - rounded).abs() <= DIVISIBILITY_TOL * rounded.max(1.0) {
        Some(rounded as usize)
    } else {
        None
    }
}

/// Builds the regular grid with `180/lat_res + 1` latitudes on `[-90, 90]`
/// and `360/lon_res` longitudes on `[-180, 180)`.
pub fn make_graticule(lat_res_deg: f64, lon_res_deg: f64) -> Result<Graticule> {
    let lat_steps = whole_multiple(180.0, lat_res_deg).ok_or_else(|| {
        Error::config(format!(
            "lat_res_deg = {lat_res_deg} does not divide 180 degrees"
        ))
    })?;
    let num_lon = whole_multiple(360.0, lon_res_deg).ok_or_else(|| {
        Error::config(format!(
            "lon_res_deg = {lon_res_deg} does not divide 360 degrees"
        ))
    })?;
    let lat_deg = (0..=lat_steps)
        .map(|h| -90.0 + h as f64 * lat_res_deg)
        .collect();
    let lon_deg = (0..num_lon)
        .map(|w| -180.0 + w as f64 * lon_res_deg)
        .collect();
    Ok(Graticule {
        lat_deg,
        lon_deg,
        lat_res_deg,
        lon_res_deg,
        earth_radius_km: EARTH_RADIUS_KM,
    })
}

impl Graticule {
    /// Grid from explicit coordinate vectors. Latitudes must be strictly
    /// monotone within `[-90, 90]`; longitudes uniformly spaced in `[-180, 180)`.
    pub fn from_coords(lat_deg: Vec<f64>, lon_deg: Vec<f64>, earth_radius_km: f64) -> Result<Self> {
        if lat_deg.is_empty() || lon_deg.is_empty() {
            return Err(Error::config("graticule needs at least one latitude and longitude"));
        }
        if !(earth_radius_km.is_finite() && earth_radius_km > 0.0) {
            return Err(Error::config(format!("earth radius {earth_radius_km} must be positive")));
        }
        if lat_deg.iter().any(|l| !(-90.0..=90.0).contains(l)) {
            return Err(Error::config("latitudes must lie in [-90, 90]"));
        }
        if lon_deg.iter().any(|l| !(-180.0..180.0).contains(l)) {
            return Err(Error::config("longitudes must lie in [-180, 180)"));
        }
        let ascending = lat_deg.windows(2).all(|p| p[1] > p[0]);
        let descending = lat_deg.windows(2).all(|p| p[1] < p[0]);
        if !(ascending || descending) {
            return Err(Error::config("latitudes must be strictly monotone"));
        }
        let lat_res_deg = if lat_deg.len() > 1 {
            (lat_deg[1] - lat_deg[0]).abs()
        } else {
            180.0
        };
        let lon_res_deg = if lon_deg.len() > 1 {
            lon_deg[1] - lon_deg[0]
        } else {
            360.0
        };
        if lon_deg
            .windows(2)
            .any(|p| ((p[1] - p[0]) - lon_res_deg).abs() > 1e-9)
            || lon_res_deg <= 0.0
        {
            return Err(Error::config("longitude spacing must be uniform and increasing"));
        }
        Ok(Graticule {
            lat_deg,
            lon_deg,
            lat_res_deg,
            lon_res_deg,
            earth_radius_km,
        })
    }

    pub fn num_lat(&self) -> usize {
        self.lat_deg.len()
    }

    pub fn num_lon(&self) -> usize {
        self.lon_deg.len()
    }

    pub fn lat_deg(&self) -> &[f64] {
        &self.lat_deg
    }

    pub fn lon_deg(&self) -> &[f64] {
        &self.lon_deg
    }

    pub fn lat_res_deg(&self) -> f64 {
        self.lat_res_deg
    }

    pub fn lon_res_deg(&self) -> f64 {
        self.lon_res_deg
    }

    pub fn earth_radius_km(&self) -> f64 {
        self.earth_radius_km
    }

    pub fn with_earth_radius(mut self, earth_radius_km: f64) -> Self {
        self.earth_radius_km = earth_radius_km;
        self
    }

    /// Circumference of the parallel at row `h`, `2πR·cos(λ_h)`.
    pub fn parallel_length_km(&self, h: usize) -> f64 {
        2.0 * PI * self.earth_radius_km * cos_lat(self.lat_deg[h])
    }

    /// Arc length between adjacent longitudes along the parallel at row `h`.
    pub fn neighbor_arc_km(&self, h: usize) -> f64 {
        self.earth_radius_km * self.lon_res_deg.to_radians() * cos_lat(self.lat_deg[h])
    }

    /// `R·Δφ` with `Δφ` in radians: the equatorial neighbor spacing, kept as
    /// metadata only.
    pub fn nominal_neighbor_spacing_km(&self) -> f64 {
        self.earth_radius_km * self.lon_res_deg.to_radians()
    }
}

/// Cosine of a latitude in degrees, exactly zero at the poles (the float
/// evaluation of cos(±90°) is ~6e-17).
pub fn cos_lat(lat_deg: f64) -> f64 {
    if lat_deg.abs() >= 90.0 {
        0.0
    } else {
        lat_deg.to_radians().cos().max(0.0)
    }
}

/// `α(h) = cos λ_h / mean_h' cos λ_h'`, so the weights average to one.
pub fn latitude_weights(grid: &Graticule) -> Array1<f64> {
    let cosines: Array1<f64> = grid.lat_deg().iter().map(|l| cos_lat(*l)).collect();
    let mean = cosines.sum() / cosines.len() as f64;
    if mean > 0.0 {
        cosines / mean
    } else {
        // Only pole rows: no area anywhere; fall back to uniform weighting.
        Array1::ones(grid.num_lat())
    }
}

/// One day's `K`-variable field on a graticule.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherState {
    pub grid: Arc<Graticule>,
    pub values: Array3<f32>,
    pub var_names: Arc<Vec<String>>,
    pub valid_time: NaiveDate,
}

impl WeatherState {
    pub fn new(
        grid: Arc<Graticule>,
        values: Array3<f32>,
        var_names: Arc<Vec<String>>,
        valid_time: NaiveDate,
    ) -> Result<Self> {
        let expected = (grid.num_lat(), grid.num_lon(), var_names.len());
        if values.dim() != expected {
            return Err(Error::structural(format!(
                "state values have shape {:?}, grid and variables imply {:?}",
                values.dim(),
                expected
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::structural(format!(
                "state for {valid_time} has a non-finite value at flat index {index}"
            )));
        }
        Ok(WeatherState {
            grid,
            values,
            var_names,
            valid_time,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.var_names.len()
    }
}

/// Dimensions needed to undo a circular patching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchLayout {
    pub num_lat: usize,
    pub num_lon: usize,
    pub num_vars: usize,
}

/// `H` latitude-row tokens with their geometric metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CircularPatchSet {
    /// Row `h` is the flattened `(W, K)` slice at latitude `h`.
    pub flat: Array2<f32>,
    pub patch_length_km: Vec<f64>,
    /// True arc between adjacent samples, `R·Δφ·cos λ_h`.
    pub neighbor_spacing_km: Vec<f64>,
    /// `R·Δφ`, independent of latitude. Metadata only.
    pub nominal_spacing_km: f64,
    pub layout: PatchLayout,
}

/// Row-major flattening `(H, W, K) -> (H, W·K)`.
pub fn circular_patch_values<T: Clone>(values: ArrayView3<'_, T>) -> Array2<T> {
    let (h, w, k) = values.dim();
    let flat: Vec<T> = values.iter().cloned().collect();
    Array2::from_shape_vec((h, w * k), flat).expect("length matches by construction")
}

/// Inverse of [`circular_patch_values`].
pub fn circular_unpatch_values<T: Clone>(flat: ArrayView2<'_, T>, layout: PatchLayout) -> Result<Array3<T>> {
    let PatchLayout {
        num_lat,
        num_lon,
        num_vars,
    } = layout;
    if flat.dim() != (num_lat, num_lon * num_vars) {
        return Err(Error::structural(format!(
            "patch matrix has shape {:?}, layout {:?} requires ({}, {})",
            flat.dim(),
            layout,
            num_lat,
            num_lon * num_vars
        )));
    }
    let data: Vec<T> = flat.iter().cloned().collect();
    Ok(Array3::from_shape_vec((num_lat, num_lon, num_vars), data).expect("shape checked above"))
}

pub fn circular_patch(state: &WeatherState) -> Result<CircularPatchSet> {
    let grid = &state.grid;
    let (h, w, k) = state.values.dim();
    if (h, w, k) != (grid.num_lat(), grid.num_lon(), state.num_vars()) {
        return Err(Error::structural(format!(
            "state shape {:?} does not match grid ({}, {}) with {} variables",
            state.values.dim(),
            grid.num_lat(),
            grid.num_lon(),
            state.num_vars()
        )));
    }
    Ok(CircularPatchSet {
        flat: circular_patch_values(state.values.view()),
        patch_length_km: (0..h).map(|i| grid.parallel_length_km(i)).collect(),
        neighbor_spacing_km: (0..h).map(|i| grid.neighbor_arc_km(i)).collect(),
        nominal_spacing_km: grid.nominal_neighbor_spacing_km(),
        layout: PatchLayout {
            num_lat: h,
            num_lon: w,
            num_vars: k,
        },
    })
}

pub fn circular_unpatch(patches: &CircularPatchSet) -> Result<Array3<f32>> {
    if patches.patch_length_km.len() != patches.layout.num_lat {
        return Err(Error::structural("patch metadata length disagrees with layout"));
    }
    circular_unpatch_values(patches.flat.view(), patches.layout)
}

/// Layout of square planar patching, including the replicated rows that pad
/// `H` up to a multiple of the patch height.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLayout {
    pub num_lat: usize,
    pub num_lon: usize,
    pub num_vars: usize,
    pub patch_lat: usize,
    pub patch_lon: usize,
    pub padded_lat: usize,
}

impl GridLayout {
    pub fn new(num_lat: usize, num_lon: usize, num_vars: usize, patch_lat: usize, patch_lon: usize) -> Result<Self> {
        if patch_lat == 0 || patch_lon == 0 {
            return Err(Error::config("grid patch must span at least one cell"));
        }
        if !num_lon.is_multiple_of(patch_lon) {
            return Err(Error::config(format!(
                "grid patch width of {patch_lon} cells does not divide {num_lon} longitudes"
            )));
        }
        let padded_lat = num_lat.div_ceil(patch_lat) * patch_lat;
        Ok(GridLayout {
            num_lat,
            num_lon,
            num_vars,
            patch_lat,
            patch_lon,
            padded_lat,
        })
    }

    /// Cell counts of a `patch_deg` square patch on `grid`.
    pub fn for_grid(grid: &Graticule, num_vars: usize, patch_deg: f64) -> Result<Self> {
        let patch_lat = whole_multiple(patch_deg, grid.lat_res_deg()).ok_or_else(|| {
            Error::config(format!(
                "grid_patch_deg = {patch_deg} is not a whole number of {}-degree latitude cells",
                grid.lat_res_deg()
            ))
        })?;
        let patch_lon = whole_multiple(patch_deg, grid.lon_res_deg()).ok_or_else(|| {
            Error::config(format!(
                "grid_patch_deg = {patch_deg} is not a whole number of {}-degree longitude cells",
                grid.lon_res_deg()
            ))
        })?;
        GridLayout::new(grid.num_lat(), grid.num_lon(), num_vars, patch_lat, patch_lon)
    }

    pub fn patches_per_band(&self) -> usize {
        self.num_lon / self.patch_lon
    }

    pub fn num_patches(&self) -> usize {
        (self.padded_lat / self.patch_lat) * self.patches_per_band()
    }

    pub fn patch_len(&self) -> usize {
        self.patch_lat * self.patch_lon * self.num_vars
    }
}

/// How rows beyond `H` are filled when padding for grid patching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowPadding {
    /// Copy the last latitude row (data path).
    Replicate,
    /// Fill with zeros (adjoint of unpatching, used for gradients).
    Zero,
}

/// Square patches in row-major patch order, each flattened as
/// `(row-in-patch, col-in-patch, variable)`.
pub fn grid_patch_values<T: Clone + Zero>(
    values: ArrayView3<'_, T>,
    layout: &GridLayout,
    padding: RowPadding,
) -> Result<Array2<T>> {
    let (h, w, k) = values.dim();
    if (h, w, k) != (layout.num_lat, layout.num_lon, layout.num_vars) {
        return Err(Error::structural(format!(
            "values shape {:?} does not match grid layout {:?}",
            values.dim(),
            layout
        )));
    }
    let mut out = Array2::zeros((layout.num_patches(), layout.patch_len()));
    let bands = layout.patches_per_band();
    for (p, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let (pr, pc) = (p / bands, p % bands);
        let mut j = 0;
        for di in 0..layout.patch_lat {
            let src_row = pr * layout.patch_lat + di;
            let (src_row, zero) = if src_row < h {
                (src_row, false)
            } else {
                (h - 1, padding == RowPadding::Zero)
            };
            for dj in 0..layout.patch_lon {
                let col = pc * layout.patch_lon + dj;
                for v in 0..k {
                    row[j] = if zero {
                        T::zero()
                    } else {
                        values[(src_row, col, v)].clone()
                    };
                    j += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`grid_patch_values`]; padded rows are dropped.
pub fn grid_unpatch_values<T: Clone + Zero>(patches: ArrayView2<'_, T>, layout: &GridLayout) -> Result<Array3<T>> {
    if patches.dim() != (layout.num_patches(), layout.patch_len()) {
        return Err(Error::structural(format!(
            "grid patch matrix has shape {:?}, layout requires ({}, {})",
            patches.dim(),
            layout.num_patches(),
            layout.patch_len()
        )));
    }
    let mut out = Array3::zeros((layout.num_lat, layout.num_lon, layout.num_vars));
    let bands = layout.patches_per_band();
    for (p, row) in patches.axis_iter(Axis(0)).enumerate() {
        let (pr, pc) = (p / bands, p % bands);
        let mut j = 0;
        for di in 0..layout.patch_lat {
            let dst_row = pr * layout.patch_lat + di;
            for dj in 0..layout.patch_lon {
                let col = pc * layout.patch_lon + dj;
                for v in 0..layout.num_vars {
                    if dst_row < layout.num_lat {
                        out[(dst_row, col, v)] = row[j].clone();
                    }
                    j += 1;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPatchSet {
    pub flat: Array2<f32>,
    pub layout: GridLayout,
}

pub fn grid_patch(state: &WeatherState, patch_deg: f64) -> Result<GridPatchSet> {
    let layout = GridLayout::for_grid(&state.grid, state.num_vars(), patch_deg)?;
    let flat = grid_patch_values(state.values.view(), &layout, RowPadding::Replicate)?;
    Ok(GridPatchSet { flat, layout })
}

pub fn grid_unpatch(patches: &GridPatchSet) -> Result<Array3<f32>> {
    grid_unpatch_values(patches.flat.view(), &patches.layout)
}
