//! Sampled plant records, standardization and experiment bookkeeping.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::ops::Range;

use chrono::{DateTime, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("channel `{0}` has zero range on the fitting data and cannot be standardized")]
    ZeroRange(String),
    #[error("channel `{0}` not found")]
    MissingChannel(String),
    #[error("invalid experiment counts: {0}")]
    InvalidCounts(String),
    #[error("record gap or irregular sampling at row {row}: step {step} s, expected {expected} s")]
    Gap { row: usize, step: f64, expected: f64 },
    #[error("row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

/// A uniformly sampled named signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub unit: String,
    pub values: Vec<f64>,
    /// Seconds between samples.
    pub sample_period: f64,
}

impl Channel {
    pub fn new(
        name: impl Into<String>,
        unit: impl Into<String>,
        values: Vec<f64>,
        sample_period: f64,
    ) -> Self {
        Self {
            name: name.into(),
            unit: unit.into(),
            values,
            sample_period,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Channel {
        Channel {
            values: self.values.iter().map(|v| f(*v)).collect(),
            ..self.clone()
        }
    }

    pub fn slice(&self, window: Range<usize>) -> Channel {
        Channel {
            values: self.values[window].to_vec(),
            ..self.clone()
        }
    }
}

/// Mean and range (max - min) of one channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub range: f64,
}

impl ChannelStats {
    /// `None` when the values are empty or constant.
    pub fn of(values: &[f64]) -> Option<Self> {
        Self::of_iter(values.iter().copied())
    }

    fn of_iter(values: impl Iterator<Item = f64>) -> Option<Self> {
        let (mut n, mut sum) = (0usize, 0.0);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            n += 1;
            sum += v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (n > 0 && hi > lo).then(|| ChannelStats {
            mean: sum / n as f64,
            range: hi - lo,
        })
    }

    pub fn standardize(&self, x: f64) -> f64 {
        (x - self.mean) / self.range
    }

    pub fn unstandardize(&self, z: f64) -> f64 {
        z * self.range + self.mean
    }
}

/// `(x - mean) / (max - min)` per channel, with statistics taken from the
/// fitting (training) data only.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub stats: BTreeMap<String, ChannelStats>,
}

impl Standardizer {
    /// Statistics of `names` over the samples covered by `windows`.
    pub fn fit(record: &Record, windows: &[Range<usize>], names: &[&str]) -> Result<Self> {
        let mut stats = BTreeMap::new();
        for name in names {
            let ch = record.channel(name)?;
            let it = windows.iter().flat_map(|w| ch.values[w.clone()].iter().copied());
            let s = ChannelStats::of_iter(it).ok_or_else(|| DatasetError::ZeroRange(name.to_string()))?;
            stats.insert(name.to_string(), s);
        }
        Ok(Self { stats })
    }

    pub fn get(&self, name: &str) -> Result<ChannelStats> {
        self.stats
            .get(name)
            .copied()
            .ok_or_else(|| DatasetError::MissingChannel(name.to_string()))
    }

    pub fn apply(&self, channel: &Channel) -> Result<Channel> {
        let s = self.get(&channel.name)?;
        Ok(channel.map_values(|v| s.standardize(v)))
    }

    pub fn invert(&self, channel: &Channel) -> Result<Channel> {
        let s = self.get(&channel.name)?;
        Ok(channel.map_values(|v| s.unstandardize(v)))
    }
}

/// Standardizes one channel with explicit statistics.
pub fn standardize(channel: &Channel, stats: &ChannelStats) -> Result<Channel> {
    if !(stats.range > 0.0) {
        return Err(DatasetError::ZeroRange(channel.name.clone()));
    }
    Ok(channel.map_values(|v| stats.standardize(v)))
}

/// Causal mean of the `window` samples preceding each index; the first
/// sample, which has no history, keeps its own value.
pub fn rolling_mean_past(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for k in 0..values.len() {
        if k == 0 {
            out.push(values[0]);
        } else {
            out.push(sum / k.min(window) as f64);
        }
        sum += values[k];
        if k >= window {
            sum -= values[k - window];
        }
    }
    out
}

/// Column mapping for CSV ingestion.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvOptions {
    /// Timestamp column: integer/float seconds or ISO-8601. `None` means the
    /// first column.
    pub timestamp_column: Option<String>,
    /// Signal name -> CSV column. Empty maps every non-time column to a
    /// signal of the same name.
    #[serde(default)]
    pub columns: BTreeMap<String, String>,
}

/// A set of aligned channels sharing one sample period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub channels: Vec<Channel>,
    pub sample_period: f64,
    /// Time of the first sample, seconds.
    pub start_time: f64,
}

fn parse_timestamp(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp_millis() as f64 / 1000.0);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc().timestamp_millis() as f64 / 1000.0);
        }
    }
    None
}

impl Record {
    pub fn new(channels: Vec<Channel>, start_time: f64) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| DatasetError::Invalid("record has no channels".into()))?;
        let (n, h) = (first.len(), first.sample_period);
        if !(h > 0.0) {
            return Err(DatasetError::Invalid(format!("sample period {h}")));
        }
        for c in &channels {
            if c.len() != n || c.sample_period != h {
                return Err(DatasetError::Invalid(format!(
                    "channel `{}` is not aligned with `{}`",
                    c.name, first.name
                )));
            }
            if let Some(i) = c.values.iter().position(|v| !v.is_finite()) {
                return Err(DatasetError::Invalid(format!(
                    "channel `{}` has a non-finite value at sample {i}",
                    c.name
                )));
            }
        }
        Ok(Self {
            channels,
            sample_period: h,
            start_time,
        })
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Channel::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, name: &str) -> Result<&Channel> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| DatasetError::MissingChannel(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.channels.iter().map(|c| c.name.as_str()).collect()
    }

    /// Adds or replaces a channel.
    pub fn upsert(&mut self, channel: Channel) -> Result<()> {
        if channel.len() != self.len() {
            return Err(DatasetError::Invalid(format!(
                "channel `{}` has {} samples, record has {}",
                channel.name,
                channel.len(),
                self.len()
            )));
        }
        match self.channels.iter_mut().find(|c| c.name == channel.name) {
            Some(c) => *c = channel,
            None => self.channels.push(channel),
        }
        Ok(())
    }

    /// Reads a CSV with a header row. Rows must be uniformly spaced; gaps
    /// are rejected rather than imputed.
    pub fn read_csv<R: Read>(reader: R, options: &CsvOptions) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let time_col = match &options.timestamp_column {
            Some(name) => headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DatasetError::MissingChannel(name.clone()))?,
            None => 0,
        };
        let mapping: Vec<(String, usize)> = if options.columns.is_empty() {
            headers
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != time_col)
                .map(|(i, h)| (h.clone(), i))
                .collect()
        } else {
            options
                .columns
                .iter()
                .map(|(signal, col)| {
                    headers
                        .iter()
                        .position(|h| h == col)
                        .map(|i| (signal.clone(), i))
                        .ok_or_else(|| DatasetError::MissingChannel(col.clone()))
                })
                .collect::<Result<_>>()?
        };

        let mut times = Vec::new();
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); mapping.len()];
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let ts = rec.get(time_col).unwrap_or("");
            times.push(parse_timestamp(ts).ok_or_else(|| DatasetError::Parse {
                row,
                column: headers[time_col].clone(),
                message: format!("bad timestamp `{ts}`"),
            })?);
            for (j, (_, col)) in mapping.iter().enumerate() {
                let raw = rec.get(*col).unwrap_or("");
                let v: f64 = raw.parse().map_err(|_| DatasetError::Parse {
                    row,
                    column: headers[*col].clone(),
                    message: format!("missing or non-numeric value `{raw}`"),
                })?;
                if !v.is_finite() {
                    return Err(DatasetError::Parse {
                        row,
                        column: headers[*col].clone(),
                        message: "non-finite value".into(),
                    });
                }
                values[j].push(v);
            }
        }
        if times.len() < 2 {
            return Err(DatasetError::Invalid("need at least two rows".into()));
        }
        let h = times[1] - times[0];
        if !(h > 0.0) {
            return Err(DatasetError::Gap {
                row: 1,
                step: h,
                expected: h,
            });
        }
        for (row, w) in times.windows(2).enumerate() {
            let step = w[1] - w[0];
            if (step - h).abs() > 1e-6 * h {
                return Err(DatasetError::Gap {
                    row: row + 1,
                    step,
                    expected: h,
                });
            }
        }
        let channels = mapping
            .into_iter()
            .zip(values)
            .map(|((name, _), v)| Channel::new(name, "", v, h))
            .collect();
        Record::new(channels, times[0])
    }

    /// Writes `time` (seconds) followed by every channel.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string()];
        header.extend(self.channels.iter().map(|c| c.name.clone()));
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = Vec::with_capacity(self.channels.len() + 1);
            row.push(format!("{}", self.start_time + k as f64 * self.sample_period));
            for c in &self.channels {
                row.push(format!("{}", c.values[k]));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Train,
    Test,
}

/// Contiguous experiment windows over a record with train/test groups and
/// cross-validation folds (1-based) for the training experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSet {
    pub windows: Vec<Range<usize>>,
    pub groups: Vec<Group>,
    pub folds: Vec<Option<usize>>,
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetWarning {
    /// The setpoint never changed enough; the whole record is one experiment.
    NoChangesDetected,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub set: ExperimentSet,
    pub warning: Option<DatasetWarning>,
}

impl ExperimentSet {
    pub fn from_windows(windows: Vec<Range<usize>>) -> Self {
        let n = windows.len();
        Self {
            windows,
            groups: vec![Group::Train; n],
            folds: vec![None; n],
            seed: None,
        }
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn indices(&self, group: Group) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.groups[i] == group).collect()
    }

    pub fn training(&self) -> Vec<usize> {
        self.indices(Group::Train)
    }

    pub fn test(&self) -> Vec<usize> {
        self.indices(Group::Test)
    }

    pub fn fold_count(&self) -> usize {
        self.folds.iter().flatten().copied().max().unwrap_or(0)
    }

    pub fn fold_members(&self, fold: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.folds[i] == Some(fold))
            .collect()
    }

    pub fn windows_of(&self, indices: &[usize]) -> Vec<Range<usize>> {
        indices.iter().map(|&i| self.windows[i].clone()).collect()
    }
}

/// Splits the record `lead_time` seconds before every major setpoint change.
///
/// A change is major when one sample-to-sample step of the setpoint exceeds
/// `threshold` times the setpoint range over the record. Consecutive
/// qualifying samples (a steep ramp) count as one change.
pub fn split_experiments(
    record: &Record,
    setpoint: &str,
    lead_time: f64,
    threshold: f64,
) -> Result<Split> {
    let sp = &record.channel(setpoint)?.values;
    let n = sp.len();
    let lead = (lead_time / record.sample_period).round() as usize;
    let range = ChannelStats::of(sp).map_or(0.0, |s| s.range);
    let mut boundaries = Vec::new();
    if range > 0.0 {
        let mut prev_flagged = false;
        for k in 1..n {
            let flagged = (sp[k] - sp[k - 1]).abs() > threshold * range;
            if flagged && !prev_flagged && k > lead {
                let b = k - lead;
                if boundaries.last().is_none_or(|&last| b > last) {
                    boundaries.push(b);
                }
            }
            prev_flagged = flagged;
        }
    }
    let warning = boundaries
        .is_empty()
        .then_some(DatasetWarning::NoChangesDetected);
    if warning.is_some() {
        log::warn!("no major change in `{setpoint}`; using the whole record as one experiment");
    }
    let mut windows = Vec::with_capacity(boundaries.len() + 1);
    let mut start = 0;
    for b in boundaries {
        windows.push(start..b);
        start = b;
    }
    windows.push(start..n);
    Ok(Split {
        set: ExperimentSet::from_windows(windows),
        warning,
    })
}

/// Randomly assigns `n_test` experiments to the test group and distributes
/// the rest over `k` folds of near-equal size.
pub fn assign_groups(set: &ExperimentSet, n_test: usize, k: usize, seed: u64) -> Result<ExperimentSet> {
    let n = set.len();
    if n_test >= n {
        return Err(DatasetError::InvalidCounts(format!(
            "{n_test} test experiments requested from {n}"
        )));
    }
    let n_train = n - n_test;
    if k == 0 || k > n_train {
        return Err(DatasetError::InvalidCounts(format!(
            "{k} folds for {n_train} training experiments"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut groups = vec![Group::Train; n];
    for &i in &order[..n_test] {
        groups[i] = Group::Test;
    }
    let mut train: Vec<usize> = order[n_test..].to_vec();
    train.shuffle(&mut rng);
    let mut folds = vec![None; n];
    for (pos, &i) in train.iter().enumerate() {
        folds[i] = Some(pos % k + 1);
    }
    Ok(ExperimentSet {
        windows: set.windows.clone(),
        groups,
        folds,
        seed: Some(seed),
    })
}
