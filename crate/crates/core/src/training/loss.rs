use ndarray::{Array1, Array3, ArrayView3, Axis};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{ForecastPair, Real};

/// Mean squared error over every element of every window, with its
/// gradient with respect to the predictions.
///
/// With two windows this is `(‖Δ34‖² + ‖Δ56‖²) / (2·K·H·W)` and the
/// gradient is `Δ / (K·H·W)`. With `row_weights` each squared error is
/// scaled by the weight of its latitude row.
pub fn window_loss<T: Real>(
    preds: &[ArrayView3<'_, T>],
    targets: &[ArrayView3<'_, T>],
    row_weights: Option<&Array1<f64>>,
) -> Result<(f64, Vec<Array3<T>>)> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::structural(format!(
            "{} predicted windows for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let n: usize = preds.iter().map(|p| p.len()).sum();
    let mut total = 0.0f64;
    let mut grads = Vec::with_capacity(preds.len());
    for (p, t) in preds.iter().zip(targets) {
        if p.dim() != t.dim() {
            return Err(Error::structural(format!(
                "prediction {:?} and target {:?} differ in shape",
                p.dim(),
                t.dim()
            )));
        }
        if let Some(w) = row_weights {
            if w.len() != p.len_of(Axis(0)) {
                return Err(Error::structural("loss weights do not match the latitude count"));
            }
        }
        let mut g = Array3::<T>::zeros(p.dim());
        for (((h, x, k), gv), pv) in g.indexed_iter_mut().zip(p.iter()) {
            let d = pv.to_f64().unwrap_or(f64::NAN) - t[[h, x, k]].to_f64().unwrap_or(f64::NAN);
            let a = row_weights.map_or(1.0, |w| w[h]);
            total += a * d * d;
            *gv = T::from_f64(2.0 * a * d / n as f64).unwrap_or_else(T::nan);
        }
        grads.push(g);
    }
    Ok((total / n as f64, grads))
}

/// Training objective of a direct forecast against its sample.
pub fn s2s_loss(pred: &ForecastPair, target: &Sample) -> Result<f64> {
    window_loss(
        &[pred.weeks34.view(), pred.weeks56.view()],
        &[target.target34.view(), target.target56.view()],
        None,
    )
    .map(|(l, _)| l)
}
