use std::ops::Range;

use chrono::{Duration, NaiveDate};
use ndarray::{Array3, ArrayView3};

use crate::error::{Error, Result};
use crate::geometry::WeatherState;

/// Days `t1..t1+42` are needed for one sample: the input day and the two
/// target windows.
pub const SAMPLE_SPAN_DAYS: usize = 42;
/// Offsets from the input day covering days 15-28.
pub const WEEKS34_OFFSETS: Range<usize> = 14..28;
/// Offsets from the input day covering days 29-42.
pub const WEEKS56_OFFSETS: Range<usize> = 28..42;

/// An input state with its two bi-weekly mean targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: WeatherState,
    pub target34: Array3<f32>,
    pub target56: Array3<f32>,
}

/// Element-wise mean of equally shaped fields, accumulated in `f64`.
pub fn mean_field<'a>(fields: impl IntoIterator<Item = ArrayView3<'a, f32>>) -> Result<Array3<f32>> {
    let mut acc: Option<Array3<f64>> = None;
    let mut n = 0usize;
    for f in fields {
        match &mut acc {
            None => acc = Some(f.mapv(f64::from)),
            Some(a) => {
                if a.dim() != f.dim() {
                    return Err(Error::structural(format!(
                        "cannot average fields of shapes {:?} and {:?}",
                        a.dim(),
                        f.dim()
                    )));
                }
                ndarray::Zip::from(a).and(&f).for_each(|a, v| *a += f64::from(*v));
            }
        }
        n += 1;
    }
    let acc = acc.ok_or_else(|| Error::degenerate("mean of zero fields"))?;
    Ok(acc.mapv(|v| (v / n as f64) as f32))
}

/// Builds the sample whose input is `daily[t1_index]`.
pub fn build_targets(daily: &[WeatherState], t1_index: usize) -> Result<Sample> {
    let first = daily
        .get(t1_index)
        .ok_or_else(|| Error::structural(format!("input index {t1_index} is past the end of {} days", daily.len())))?;
    let t1 = first.valid_time;
    let available = (daily.len() - t1_index).min(SAMPLE_SPAN_DAYS);
    for (offset, day) in daily[t1_index..t1_index + available].iter().enumerate() {
        let want = t1 + Duration::days(offset as i64);
        if day.valid_time != want {
            return Err(Error::structural(format!(
                "daily states are not consecutive: expected {want}, found {}",
                day.valid_time
            )));
        }
        if day.values.dim() != first.values.dim() {
            return Err(Error::structural(format!(
                "state for {} has shape {:?}, expected {:?}",
                day.valid_time,
                day.values.dim(),
                first.values.dim()
            )));
        }
    }
    if available < SAMPLE_SPAN_DAYS {
        let missing: Vec<NaiveDate> = (available..SAMPLE_SPAN_DAYS)
            .map(|o| t1 + Duration::days(o as i64))
            .collect();
        return Err(Error::DataAvailability { missing });
    }
    let window = |offsets: Range<usize>| mean_field(offsets.map(|o| daily[t1_index + o].values.view()));
    Ok(Sample {
        input: first.clone(),
        target34: window(WEEKS34_OFFSETS)?,
        target56: window(WEEKS56_OFFSETS)?,
    })
}
