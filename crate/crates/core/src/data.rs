//! Multivariate series ingestion, chronological splits, standardization and
//! channel-independent sliding windows.

use std::fmt;
use std::path::Path;

use dtaf_tensor::Array;

use crate::error::DataError;

type Result<T> = std::result::Result<T, DataError>;

/// Chronological partition of a series.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Split fractions, e.g. 6:2:2 or 7:1:2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const fn new(train: f64, val: f64, test: f64) -> Self {
        Self { train, val, test }
    }
}

/// Row boundaries: train is `[0, train_end)`, validation `[train_end,
/// val_end)`, test `[val_end, T)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitBounds {
    pub train_end: usize,
    pub val_end: usize,
}

/// Per-channel mean and (population) standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesDataset {
    values: Vec<f64>,
    len: usize,
    channel_names: Vec<String>,
    split: Option<SplitBounds>,
    train_stats: Option<ChannelStats>,
    scaler: Option<ChannelStats>,
}

const TIMESTAMP_COLUMNS: [&str; 2] = ["date", "timestamp"];

impl SeriesDataset {
    /// Builds a dataset from row-major values (`rows[t][channel]`).
    pub fn from_rows(channel_names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = channel_names.len();
        if n == 0 {
            return Err(DataError::Empty("channels"));
        }
        if rows.is_empty() {
            return Err(DataError::Empty("rows"));
        }
        let mut values = Vec::with_capacity(rows.len() * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(DataError::Ragged {
                    row: i + 1,
                    expected: n,
                    found: row.len(),
                });
            }
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(DataError::Parse {
                    row: i + 1,
                    column: c + 1,
                    name: channel_names[c].clone(),
                    value: row[c].to_string(),
                });
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            values,
            len: rows.len(),
            channel_names,
            split: None,
            train_stats: None,
            scaler: None,
        })
    }

    /// Single-channel convenience constructor.
    pub fn univariate(name: &str, series: &[f64]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = series.iter().map(|&v| vec![v]).collect();
        Self::from_rows(vec![name.to_string()], &rows)
    }

    /// Reads a comma-separated file with a header row. A leading column named
    /// `date` or `timestamp` is dropped; every other cell must be numeric.
    /// Row numbers in errors count data rows from 1 (the header is row 0).
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(file);
        let headers = reader
            .headers()
            .map_err(|e| DataError::Csv {
                row: 0,
                message: e.to_string(),
            })?
            .clone();
        let skip = usize::from(
            headers
                .get(0)
                .is_some_and(|h| TIMESTAMP_COLUMNS.contains(&h.to_ascii_lowercase().as_str())),
        );
        let names: Vec<String> = headers.iter().skip(skip).map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| DataError::Csv {
                row,
                message: e.to_string(),
            })?;
            if record.len() != headers.len() {
                return Err(DataError::Ragged {
                    row,
                    expected: headers.len(),
                    found: record.len(),
                });
            }
            let parsed = record
                .iter()
                .enumerate()
                .skip(skip)
                .map(|(c, cell)| {
                    cell.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| DataError::Parse {
                            row,
                            column: c + 1,
                            name: headers.get(c).unwrap_or_default().to_string(),
                            value: cell.to_string(),
                        })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(parsed);
        }
        Self::from_rows(names, &rows)
    }

    /// Number of timestamps `T`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn value(&self, t: usize, channel: usize) -> f64 {
        self.values[t * self.channels() + channel]
    }

    /// The full history of one channel.
    pub fn channel(&self, channel: usize) -> Vec<f64> {
        (0..self.len).map(|t| self.value(t, channel)).collect()
    }

    pub fn split_bounds(&self) -> Option<SplitBounds> {
        self.split
    }

    /// Statistics of the training rows, available once the dataset is split.
    pub fn train_stats(&self) -> Option<&ChannelStats> {
        self.train_stats.as_ref()
    }

    /// The transform applied by [`SeriesDataset::standardize`], if any.
    pub fn scaler(&self) -> Option<&ChannelStats> {
        self.scaler.as_ref()
    }

    /// Row range of a split.
    pub fn split_range(&self, split: SplitName) -> Result<std::ops::Range<usize>> {
        let b = self
            .split
            .ok_or_else(|| DataError::Split("dataset has not been split".into()))?;
        Ok(match split {
            SplitName::Train => 0..b.train_end,
            SplitName::Val => b.train_end..b.val_end,
            SplitName::Test => b.val_end..self.len,
        })
    }

    /// Assigns `floor(train·T)` rows to training and `floor(val·T)` to
    /// validation; the test split takes the remainder.
    pub fn split(mut self, ratios: SplitRatios) -> Result<Self> {
        let SplitRatios { train, val, test } = ratios;
        if !(train > 0.0 && val > 0.0 && test > 0.0) || ((train + val + test) - 1.0).abs() > 1e-9 {
            return Err(DataError::Split(format!(
                "ratios must be positive and sum to 1, got {train}:{val}:{test}"
            )));
        }
        let t = self.len as f64;
        // The small offset keeps products such as 0.6 * 14400 from rounding
        // down to the integer below.
        let train_end = (train * t + 1e-9).floor() as usize;
        let val_end = train_end + (val * t + 1e-9).floor() as usize;
        if train_end == 0 || val_end <= train_end || val_end > self.len {
            return Err(DataError::Split(format!(
                "{} rows cannot be split {train}:{val}:{test}",
                self.len
            )));
        }
        self.split = Some(SplitBounds { train_end, val_end });
        self.train_stats = Some(self.stats_over(0..train_end));
        Ok(self)
    }

    fn stats_over(&self, rows: std::ops::Range<usize>) -> ChannelStats {
        let n = self.channels();
        let count = rows.len() as f64;
        let mut mean = vec![0.0; n];
        for t in rows.clone() {
            for (c, m) in mean.iter_mut().enumerate() {
                *m += self.value(t, c);
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; n];
        for t in rows {
            for (c, v) in var.iter_mut().enumerate() {
                let dev = self.value(t, c) - mean[c];
                *v += dev * dev;
            }
        }
        let std = var.iter().map(|v| (v / count).sqrt()).collect();
        ChannelStats { mean, std }
    }

    /// Z-scores every split with the training statistics. A channel whose
    /// training standard deviation is (numerically) zero is only centred.
    pub fn standardize(&self) -> Result<Self> {
        let stats = self
            .train_stats
            .as_ref()
            .ok_or_else(|| DataError::Split("standardize needs a split dataset".into()))?;
        let std: Vec<f64> = stats
            .std
            .iter()
            .zip(&stats.mean)
            .map(|(&s, &m)| if s > 1e-12 * m.abs().max(1.0) { s } else { 1.0 })
            .collect();
        let n = self.channels();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - stats.mean[i % n]) / std[i % n])
            .collect();
        let mut out = Self {
            values,
            scaler: Some(ChannelStats {
                mean: stats.mean.clone(),
                std,
            }),
            ..self.clone()
        };
        let b = out.split.expect("train stats imply a split");
        out.train_stats = Some(out.stats_over(0..b.train_end));
        Ok(out)
    }

    /// Channel-independent sliding windows inside one split.
    ///
    /// Windows advance by `stride`; each multivariate window is emitted as
    /// one univariate window per channel, origin-major.
    pub fn make_windows(
        &self,
        split: SplitName,
        input_len: usize,
        horizon: usize,
        stride: usize,
    ) -> Result<WindowSet> {
        if input_len == 0 || horizon == 0 || stride == 0 {
            return Err(DataError::Split(
                "input length, horizon and stride must be positive".into(),
            ));
        }
        let range = self.split_range(split)?;
        let required = input_len + horizon;
        if range.len() < required {
            return Err(DataError::Window {
                split: split.as_str(),
                required,
                available: range.len(),
            });
        }
        let count = (range.len() - required) / stride + 1;
        let windows = (0..count)
            .flat_map(|w| {
                let origin = range.start + w * stride;
                (0..self.channels()).map(move |channel| WindowRef { channel, origin })
            })
            .collect();
        Ok(WindowSet {
            split,
            input_len,
            horizon,
            windows,
        })
    }
}

/// One univariate window: `input_len` inputs starting at `origin`, followed
/// directly by `horizon` targets, all from `channel`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowRef {
    pub channel: usize,
    pub origin: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowSet {
    pub split: SplitName,
    pub input_len: usize,
    pub horizon: usize,
    pub windows: Vec<WindowRef>,
}

/// Materialized windows: `inputs` is `[B, input_len]`, `targets` `[B, horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    pub inputs: Array,
    pub targets: Array,
    pub channel_ids: Vec<usize>,
    pub origin_indices: Vec<usize>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.channel_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channel_ids.is_empty()
    }
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Gathers the listed windows into one batch.
    pub fn gather(&self, ds: &SeriesDataset, refs: &[WindowRef]) -> WindowBatch {
        let (t_in, f) = (self.input_len, self.horizon);
        let mut inputs = Vec::with_capacity(refs.len() * t_in);
        let mut targets = Vec::with_capacity(refs.len() * f);
        for w in refs {
            inputs.extend((w.origin..w.origin + t_in).map(|t| ds.value(t, w.channel)));
            targets.extend((w.origin + t_in..w.origin + t_in + f).map(|t| ds.value(t, w.channel)));
        }
        let b = refs.len().max(1);
        WindowBatch {
            inputs: Array::new(vec![b, t_in], pad(inputs, b * t_in)).expect("window shape"),
            targets: Array::new(vec![b, f], pad(targets, b * f)).expect("window shape"),
            channel_ids: refs.iter().map(|w| w.channel).collect(),
            origin_indices: refs.iter().map(|w| w.origin).collect(),
        }
    }

    /// Consecutive batches of at most `batch_size` windows in stored order;
    /// the final short batch is kept.
    pub fn batches<'a>(
        &'a self,
        ds: &'a SeriesDataset,
        batch_size: usize,
    ) -> impl Iterator<Item = WindowBatch> + 'a {
        self.windows
            .chunks(batch_size.max(1))
            .map(move |refs| self.gather(ds, refs))
    }
}

fn pad(mut v: Vec<f64>, len: usize) -> Vec<f64> {
    v.resize(len, 0.0);
    v
}
