use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::stats::{check_stats, compute_stats, TrainStatistics, VarStats};
use super::targets::SAMPLE_SPAN_DAYS;
use super::tensor_io::{load_tensor, read_tensor_shape, save_tensor};
use crate::error::{Error, Result};
use crate::geometry::{make_graticule, Graticule};

pub const TENSOR_LAYOUT: &str = "f32le-lat-lon-var";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CLIMATOLOGY_FILE: &str = "climatology.bin";

/// Inclusive range of calendar dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        DateRange { start, end }
    }

    /// January 1 of `first` through December 31 of `last`.
    pub fn years(first: i32, last: i32) -> Self {
        DateRange {
            start: NaiveDate::from_ymd_opt(first, 1, 1).expect("valid year"),
            end: NaiveDate::from_ymd_opt(last, 12, 31).expect("valid year"),
        }
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }

    fn overlaps(&self, other: &DateRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: DateRange,
    pub val: DateRange,
    pub test: DateRange,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: DateRange::years(1979, 2016),
            val: DateRange::years(2017, 2017),
            test: DateRange::years(2018, 2018),
        }
    }
}

impl SplitSpec {
    pub fn range(&self, split: Split) -> DateRange {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in Split::ALL {
            let r = self.range(s);
            if r.start > r.end {
                return Err(Error::config(format!(
                    "{} split starts {} after it ends {}",
                    s.name(),
                    r.start,
                    r.end
                )));
            }
        }
        for (i, a) in Split::ALL.iter().enumerate() {
            for b in &Split::ALL[i + 1..] {
                if self.range(*a).overlaps(&self.range(*b)) {
                    return Err(Error::config(format!(
                        "{} and {} splits overlap",
                        a.name(),
                        b.name()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn split_of(&self, d: NaiveDate) -> Option<Split> {
        Split::ALL.into_iter().find(|s| self.range(*s).contains(d))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DayRecord {
    pub date: NaiveDate,
    /// Relative paths are resolved against the manifest's directory.
    pub file: PathBuf,
}

fn default_layout() -> String {
    TENSOR_LAYOUT.to_string()
}

/// Index of a directory of daily tensor files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub lat_res_deg: f64,
    pub lon_res_deg: f64,
    pub var_names: Vec<String>,
    #[serde(default = "default_layout")]
    pub layout: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub climatology: Option<PathBuf>,
    pub splits: SplitSpec,
    #[serde(default)]
    pub stats: Vec<VarStats>,
    #[serde(default)]
    pub records: Vec<DayRecord>,
    #[serde(skip)]
    base_dir: PathBuf,
    #[serde(skip)]
    usable: BTreeMap<Split, Vec<NaiveDate>>,
}

impl DatasetManifest {
    pub fn new(
        lat_res_deg: f64,
        lon_res_deg: f64,
        var_names: Vec<String>,
        splits: SplitSpec,
        base_dir: impl Into<PathBuf>,
    ) -> Result<Self> {
        let mut m = DatasetManifest {
            lat_res_deg,
            lon_res_deg,
            var_names,
            layout: default_layout(),
            climatology: None,
            splits,
            stats: Vec::new(),
            records: Vec::new(),
            base_dir: base_dir.into(),
            usable: BTreeMap::new(),
        };
        m.validate_header()?;
        m.reindex();
        Ok(m)
    }

    fn validate_header(&self) -> Result<()> {
        make_graticule(self.lat_res_deg, self.lon_res_deg)?;
        if self.var_names.is_empty() {
            return Err(Error::config("manifest lists no variables"));
        }
        let unique: BTreeSet<&String> = self.var_names.iter().collect();
        if unique.len() != self.var_names.len() {
            return Err(Error::config("manifest lists a variable twice"));
        }
        if self.layout != TENSOR_LAYOUT {
            return Err(Error::config(format!(
                "unsupported tensor layout `{}` (expected `{TENSOR_LAYOUT}`)",
                self.layout
            )));
        }
        self.splits.validate()
    }

    /// Loads a manifest and proves it usable: every record's header has the
    /// manifest's shape and the usable sample dates of each split are known.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.into(),
            detail: e.to_string(),
        })?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate_header()?;
        m.records.sort_by_key(|r| r.date);
        if let Some(w) = m.records.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(Error::config(format!("date {} is listed twice", w[0].date)));
        }
        if !m.stats.is_empty() {
            check_stats(&m.stats, &m.var_names)?;
        }
        let expected = m.shape()?;
        for r in &m.records {
            let p = m.resolve(&r.file);
            let found = read_tensor_shape(&p)?;
            if found != expected {
                return Err(Error::ShapeMismatch {
                    path: p,
                    expected,
                    found,
                });
            }
        }
        m.reindex();
        for s in Split::ALL {
            let n = m.usable_inits(s).len();
            if n == 0 {
                log::warn!(
                    "{} split has no usable samples: each needs {SAMPLE_SPAN_DAYS} consecutive days inside the split",
                    s.name()
                );
            } else {
                log::info!("{} split: {n} usable samples", s.name());
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string(self).map_err(|e| Error::config(format!("cannot serialize manifest: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn grid(&self) -> Result<Graticule> {
        make_graticule(self.lat_res_deg, self.lon_res_deg)
    }

    pub fn shape(&self) -> Result<(usize, usize, usize)> {
        let g = self.grid()?;
        Ok((g.num_lat(), g.num_lon(), self.var_names.len()))
    }

    pub fn resolve(&self, file: &Path) -> PathBuf {
        if file.is_absolute() {
            file.to_path_buf()
        } else {
            self.base_dir.join(file)
        }
    }

    /// Adds (or replaces) the record for `date`.
    pub fn add_record(&mut self, date: NaiveDate, file: PathBuf) {
        match self.records.binary_search_by_key(&date, |r| r.date) {
            Ok(i) => self.records[i].file = file,
            Err(i) => self.records.insert(i, DayRecord { date, file }),
        }
        self.reindex();
    }

    fn reindex(&mut self) {
        let dates: BTreeSet<NaiveDate> = self.records.iter().map(|r| r.date).collect();
        self.usable = Split::ALL
            .into_iter()
            .map(|s| {
                let range = self.splits.range(s);
                let inits = dates
                    .iter()
                    .copied()
                    .filter(|d| range.contains(*d))
                    .filter(|d| {
                        (1..SAMPLE_SPAN_DAYS as i64).all(|o| {
                            let t = *d + Duration::days(o);
                            range.contains(t) && dates.contains(&t)
                        })
                    })
                    .collect();
                (s, inits)
            })
            .collect();
    }

    /// Input dates whose full 42-day span lies inside the split and is on disk.
    pub fn usable_inits(&self, split: Split) -> &[NaiveDate] {
        self.usable.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Dates of the span starting at `init` with no record.
    pub fn missing_for(&self, init: NaiveDate) -> Vec<NaiveDate> {
        (0..SAMPLE_SPAN_DAYS as i64)
            .map(|o| init + Duration::days(o))
            .filter(|d| self.records.binary_search_by_key(d, |r| r.date).is_err())
            .collect()
    }

    pub fn split_records(&self, split: Split) -> impl Iterator<Item = &DayRecord> {
        let range = self.splits.range(split);
        self.records.iter().filter(move |r| range.contains(r.date))
    }

    pub fn record(&self, date: NaiveDate) -> Option<&DayRecord> {
        self.records
            .binary_search_by_key(&date, |r| r.date)
            .ok()
            .map(|i| &self.records[i])
    }

    /// Raw (physical-unit) values of one day.
    pub fn load_day(&self, date: NaiveDate) -> Result<Array3<f32>> {
        let r = self
            .record(date)
            .ok_or_else(|| Error::DataAvailability { missing: vec![date] })?;
        load_tensor(self.resolve(&r.file), Some(self.shape()?))
    }

    /// Computes statistics and climatology over the training split, stores
    /// the climatology beside the manifest and records both in `self`.
    pub fn compute_statistics(&mut self) -> Result<TrainStatistics> {
        let days = self
            .split_records(Split::Train)
            .map(|r| r.date)
            .collect::<Vec<_>>()
            .into_iter()
            .map(|d| self.load_day(d))
            .collect::<Result<Vec<_>>>()?;
        let stats = compute_stats(days.iter().map(|d| d.view()), &self.var_names)?;
        let clim = PathBuf::from(CLIMATOLOGY_FILE);
        save_tensor(self.resolve(&clim), &stats.climatology)?;
        self.climatology = Some(clim);
        self.stats = stats.stats.clone();
        Ok(stats)
    }

    pub fn load_climatology(&self) -> Result<Array3<f32>> {
        let file = self
            .climatology
            .as_ref()
            .ok_or_else(|| Error::config("manifest has no climatology; run statistics first"))?;
        load_tensor(self.resolve(file), Some(self.shape()?))
    }

    pub fn require_stats(&self) -> Result<&[VarStats]> {
        if self.stats.is_empty() {
            return Err(Error::config("manifest has no normalization statistics"));
        }
        check_stats(&self.stats, &self.var_names)?;
        Ok(&self.stats)
    }
}

fn date_from_stem(path: &Path) -> Option<NaiveDate> {
    let stem = path.file_stem()?.to_str()?;
    NaiveDate::parse_from_str(stem, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(stem, "%Y%m%d"))
        .ok()
}

/// Indexes a directory of `YYYY-MM-DD.*` (or `YYYYMMDD.*`) tensor files,
/// computes training statistics and writes `manifest.toml` into `dir`.
/// Files whose names are not dates are ignored.
pub fn import_directory(
    dir: impl AsRef<Path>,
    var_names: Vec<String>,
    lat_res_deg: f64,
    lon_res_deg: f64,
    splits: SplitSpec,
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    let mut m = DatasetManifest::new(lat_res_deg, lon_res_deg, var_names, splits, dir)?;
    let expected = m.shape()?;
    let mut entries: Vec<(NaiveDate, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.file_name().and_then(|n| n.to_str()) == Some(CLIMATOLOGY_FILE) {
            continue;
        }
        if let Some(date) = date_from_stem(&path).filter(|_| path.is_file()) {
            entries.push((date, path));
        }
    }
    entries.sort();
    if entries.is_empty() {
        return Err(Error::config(format!("no dated tensor files in {}", dir.display())));
    }
    for (date, path) in entries {
        let found = read_tensor_shape(&path)?;
        if found != expected {
            return Err(Error::ShapeMismatch { path, expected, found });
        }
        let rel = path.strip_prefix(dir).map(Path::to_path_buf).unwrap_or(path);
        if m.record(date).is_some() {
            return Err(Error::config(format!("two files in {} are dated {date}", dir.display())));
        }
        m.add_record(date, rel);
    }
    m.compute_statistics()?;
    m.save(dir.join(MANIFEST_FILE))?;
    Ok(m)
}
