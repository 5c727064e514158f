use chrono::Duration;
use ndarray::{Array3, ArrayView3};

use crate::data::{denormalize_values, SplitData, SAMPLE_SPAN_DAYS, WEEKS34_OFFSETS, WEEKS56_OFFSETS};
use crate::error::{Error, Result};
use crate::geometry::WeatherState;
use crate::model::{Cirt, ForecastPair, OutputKind};

/// Rollout length that covers both bi-weekly windows.
pub const ROLLOUT_DAYS: usize = SAMPLE_SPAN_DAYS;

/// Anything that maps a batch of daily states to the following day.
pub trait Stepper {
    fn step(&self, states: &[ArrayView3<'_, f32>]) -> Result<Vec<Array3<f32>>>;
}

impl Stepper for Cirt<f32> {
    fn step(&self, states: &[ArrayView3<'_, f32>]) -> Result<Vec<Array3<f32>>> {
        if self.config().output != OutputKind::NextDay {
            return Err(Error::config("rollout needs a model with a next-day head"));
        }
        Ok(self
            .predict(states)?
            .into_iter()
            .map(|mut w| w.pop().expect("one window"))
            .collect())
    }
}

impl<F> Stepper for F
where
    F: Fn(&[ArrayView3<'_, f32>]) -> Result<Vec<Array3<f32>>>,
{
    fn step(&self, states: &[ArrayView3<'_, f32>]) -> Result<Vec<Array3<f32>>> {
        self(states)
    }
}

/// Applies `model` `days` times to each initial state; element `[b][i]` is
/// the state `i + 1` days after `inits[b]`.
pub fn rollout_batch<S: Stepper + ?Sized>(
    model: &S,
    inits: &[ArrayView3<'_, f32>],
    days: usize,
) -> Result<Vec<Vec<Array3<f32>>>> {
    let mut out: Vec<Vec<Array3<f32>>> = inits.iter().map(|_| Vec::with_capacity(days)).collect();
    let mut current: Vec<Array3<f32>> = inits.iter().map(|s| s.to_owned()).collect();
    for step in 1..=days {
        let views: Vec<_> = current.iter().map(|a| a.view()).collect();
        let next = match model.step(&views) {
            Ok(n) => n,
            Err(Error::NumericalFailure { .. }) => return Err(Error::RolloutFailure { step }),
            Err(e) => return Err(e),
        };
        if next.len() != inits.len() {
            return Err(Error::structural("stepper returned the wrong batch size"));
        }
        if next.iter().any(|a| a.iter().any(|v| !v.is_finite())) {
            return Err(Error::RolloutFailure { step });
        }
        for (seq, s) in out.iter_mut().zip(&next) {
            seq.push(s.clone());
        }
        current = next;
    }
    Ok(out)
}

/// Daily states following `state`, stamped with their valid dates.
pub fn rollout<S: Stepper + ?Sized>(model: &S, state: &WeatherState, days: usize) -> Result<Vec<WeatherState>> {
    let seq = rollout_batch(model, &[state.values.view()], days)?.pop().expect("one sequence");
    Ok(seq
        .into_iter()
        .enumerate()
        .map(|(i, values)| WeatherState {
            values,
            valid_time: state.valid_time + Duration::days(i as i64 + 1),
            ..state.clone()
        })
        .collect())
}

/// Bi-weekly means of a rollout whose element `i` lies `i + 1` days after
/// the input date.
pub fn rollout_window_means(states: &[ArrayView3<'_, f32>]) -> Result<ForecastPair> {
    if states.len() < WEEKS56_OFFSETS.end - 1 {
        return Err(Error::structural(format!(
            "a rollout of {} days does not reach the weeks 5-6 window",
            states.len()
        )));
    }
    let mean = |offsets: std::ops::Range<usize>| {
        let mut acc = Array3::<f64>::zeros(states[0].dim());
        for o in offsets.clone() {
            acc.zip_mut_with(&states[o - 1], |a, v| *a += f64::from(*v));
        }
        acc.mapv(|v| (v / offsets.len() as f64) as f32)
    };
    Ok(ForecastPair {
        weeks34: mean(WEEKS34_OFFSETS),
        weeks56: mean(WEEKS56_OFFSETS),
    })
}

/// Forecasts for every sample of `data` in physical units: one pass for a
/// direct head, a rollout for a next-day head.
pub fn forecast_split(model: &Cirt<f32>, data: &SplitData, batch_size: usize) -> Result<Vec<ForecastPair>> {
    let idx: Vec<usize> = (0..data.num_samples()).collect();
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let inputs: Vec<_> = chunk.iter().map(|&i| data.input(i)).collect();
        let pairs: Vec<ForecastPair> = match model.config().output {
            OutputKind::Direct => model
                .predict(&inputs)?
                .into_iter()
                .map(|w| {
                    let mut it = w.into_iter();
                    ForecastPair {
                        weeks34: it.next().expect("two windows"),
                        weeks56: it.next().expect("two windows"),
                    }
                })
                .collect(),
            OutputKind::NextDay => rollout_batch(model, &inputs, ROLLOUT_DAYS)?
                .iter()
                .map(|seq| rollout_window_means(&seq.iter().map(|a| a.view()).collect::<Vec<_>>()))
                .collect::<Result<_>>()?,
        };
        for mut p in pairs {
            denormalize_values(&mut p.weeks34, &data.stats)?;
            denormalize_values(&mut p.weeks56, &data.stats)?;
            out.push(p);
        }
    }
    Ok(out)
}
