use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{Duration, NaiveDate};
use ndarray::{Array3, ArrayView3};

use super::manifest::{DatasetManifest, Split};
use super::stats::{check_stats, denormalize_values, normalize_values, VarStats};
use super::targets::{mean_field, Sample, SAMPLE_SPAN_DAYS, WEEKS34_OFFSETS, WEEKS56_OFFSETS};
use crate::error::{Error, Result};
use crate::geometry::{Graticule, WeatherState};
use crate::model::ForecastPair;

/// Normalized days of one split held in memory, with the bi-weekly targets
/// of every usable input date precomputed.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub grid: Arc<Graticule>,
    pub var_names: Arc<Vec<String>>,
    pub stats: Vec<VarStats>,
    dates: Vec<NaiveDate>,
    days: Vec<Array3<f32>>,
    index: BTreeMap<NaiveDate, usize>,
    inits: Vec<usize>,
    targets: Vec<[Array3<f32>; 2]>,
}

impl SplitData {
    /// Loads every day of `split`; samples start at every `stride`-th usable
    /// input date.
    pub fn load(manifest: &DatasetManifest, split: Split, stride: usize) -> Result<Self> {
        let stats = manifest.require_stats()?.to_vec();
        let grid = Arc::new(manifest.grid()?);
        let names = Arc::new(manifest.var_names.clone());
        let mut dates = Vec::new();
        let mut days = Vec::new();
        for r in manifest.split_records(split) {
            let mut values = manifest.load_day(r.date)?;
            normalize_values(&mut values, &stats)?;
            dates.push(r.date);
            days.push(values);
        }
        let usable = manifest.usable_inits(split).to_vec();
        Self::assemble(grid, names, stats, dates, days, &usable, stride)
    }

    /// Builds a split from consecutive physical states already in memory.
    pub fn from_states(states: &[WeatherState], stats: &[VarStats], stride: usize) -> Result<Self> {
        let first = states.first().ok_or_else(|| Error::config("no states given"))?;
        check_stats(stats, &first.var_names)?;
        let mut dates = Vec::new();
        let mut days = Vec::new();
        for s in states {
            let mut v = s.values.clone();
            normalize_values(&mut v, stats)?;
            dates.push(s.valid_time);
            days.push(v);
        }
        let present: std::collections::BTreeSet<NaiveDate> = dates.iter().copied().collect();
        let usable: Vec<NaiveDate> = dates
            .iter()
            .copied()
            .filter(|d| (0..SAMPLE_SPAN_DAYS as i64).all(|o| present.contains(&(*d + Duration::days(o)))))
            .collect();
        Self::assemble(
            first.grid.clone(),
            first.var_names.clone(),
            stats.to_vec(),
            dates,
            days,
            &usable,
            stride,
        )
    }

    fn assemble(
        grid: Arc<Graticule>,
        var_names: Arc<Vec<String>>,
        stats: Vec<VarStats>,
        dates: Vec<NaiveDate>,
        days: Vec<Array3<f32>>,
        usable: &[NaiveDate],
        stride: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::config("sample stride must be at least 1"));
        }
        let index: BTreeMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let mut inits = Vec::new();
        let mut targets = Vec::new();
        for d in usable.iter().step_by(stride) {
            let at = |o: usize| -> Result<ArrayView3<'_, f32>> {
                let date = *d + Duration::days(o as i64);
                index
                    .get(&date)
                    .map(|&i| days[i].view())
                    .ok_or(Error::DataAvailability { missing: vec![date] })
            };
            let w34 = mean_field(WEEKS34_OFFSETS.map(at).collect::<Result<Vec<_>>>()?)?;
            let w56 = mean_field(WEEKS56_OFFSETS.map(at).collect::<Result<Vec<_>>>()?)?;
            inits.push(index[d]);
            targets.push([w34, w56]);
        }
        Ok(SplitData {
            grid,
            var_names,
            stats,
            dates,
            days,
            index,
            inits,
            targets,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.inits.len()
    }

    pub fn num_days(&self) -> usize {
        self.days.len()
    }

    pub fn init_date(&self, i: usize) -> NaiveDate {
        self.dates[self.inits[i]]
    }

    /// Normalized input of sample `i`.
    pub fn input(&self, i: usize) -> ArrayView3<'_, f32> {
        self.days[self.inits[i]].view()
    }

    /// Normalized `[weeks34, weeks56]` targets of sample `i`.
    pub fn targets(&self, i: usize) -> [ArrayView3<'_, f32>; 2] {
        [self.targets[i][0].view(), self.targets[i][1].view()]
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample {
            input: self.state_at(self.inits[i]),
            target34: self.targets[i][0].clone(),
            target56: self.targets[i][1].clone(),
        }
    }

    fn state_at(&self, day: usize) -> WeatherState {
        WeatherState {
            grid: self.grid.clone(),
            values: self.days[day].clone(),
            var_names: self.var_names.clone(),
            valid_time: self.dates[day],
        }
    }

    /// Normalized state of `date`, if loaded.
    pub fn day(&self, date: NaiveDate) -> Option<ArrayView3<'_, f32>> {
        self.index.get(&date).map(|&i| self.days[i].view())
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    /// Day indices `(t, t+1)` with both days loaded.
    pub fn next_day_pairs(&self) -> Vec<(usize, usize)> {
        self.dates
            .iter()
            .enumerate()
            .filter_map(|(i, d)| self.index.get(&(*d + Duration::days(1))).map(|&j| (i, j)))
            .collect()
    }

    pub fn day_values(&self, i: usize) -> ArrayView3<'_, f32> {
        self.days[i].view()
    }

    /// Targets of sample `i` in physical units.
    pub fn physical_targets(&self, i: usize) -> Result<ForecastPair> {
        let mut a = self.targets[i][0].clone();
        let mut b = self.targets[i][1].clone();
        denormalize_values(&mut a, &self.stats)?;
        denormalize_values(&mut b, &self.stats)?;
        Ok(ForecastPair { weeks34: a, weeks56: b })
    }
}
