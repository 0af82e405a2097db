use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::normalize::NormStats;
use super::series::{time_of_day, SpeedSeries};

pub const DEFAULT_T_IN: usize = 12;
pub const DEFAULT_T_OUT: usize = 12;
pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.7, 0.1, 0.2);

/// One input/target pair. Masks hold 1.0 for observed and 0.0 for missing
/// cells so they can enter losses directly.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    /// Index of the first input step within the source series.
    pub start_index: usize,
    /// Timestamp of the first input step.
    pub start_ts: i64,
    /// `T_in x N` values.
    pub values: Tensor,
    pub mask: Tensor,
    /// `T_in x N` time of day, identical across nodes.
    pub tod: Tensor,
    /// `T_out x N` values following the input slice.
    pub target: Tensor,
    pub target_mask: Tensor,
}

impl Window {
    pub fn t_in(&self) -> usize {
        self.values.rows()
    }

    pub fn t_out(&self) -> usize {
        self.target.rows()
    }

    pub fn num_nodes(&self) -> usize {
        self.values.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowSet {
    pub windows: Vec<Window>,
    pub t_in: usize,
    pub t_out: usize,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

pub fn window_count(t: usize, t_in: usize, t_out: usize, stride: usize) -> usize {
    if t < t_in + t_out {
        0
    } else {
        (t - t_in - t_out) / stride + 1
    }
}

/// Cuts chronologically ordered, contiguous input/target windows.
pub fn make_windows(
    series: &SpeedSeries,
    t_in: usize,
    t_out: usize,
    stride: usize,
) -> Result<WindowSet> {
    if t_in == 0 || t_out == 0 || stride == 0 {
        return Err(Error::Config("T_in, T_out and stride must be >= 1".into()));
    }
    let t = series.len();
    if t < t_in + t_out {
        return Err(Error::Data(format!(
            "series of length {} is shorter than T_in + T_out = {}",
            t,
            t_in + t_out
        )));
    }
    let n = series.num_nodes();
    let tod = time_of_day(&series.timestamps, n);
    let mask = Tensor::matrix(
        t,
        n,
        series.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
    )?;
    let rows = |m: &Tensor, start: usize, len: usize| {
        Tensor::matrix(len, n, m.data()[start * n..(start + len) * n].to_vec()).unwrap()
    };
    let windows = (0..window_count(t, t_in, t_out, stride))
        .map(|k| {
            let s = k * stride;
            Window {
                start_index: s,
                start_ts: series.timestamps[s],
                values: rows(&series.values, s, t_in),
                mask: rows(&mask, s, t_in),
                tod: rows(&tod, s, t_in),
                target: rows(&series.values, s + t_in, t_out),
                target_mask: rows(&mask, s + t_in, t_out),
            }
        })
        .collect();
    Ok(WindowSet {
        windows,
        t_in,
        t_out,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: SpeedSeries,
    pub val: SpeedSeries,
    pub test: SpeedSeries,
    /// Exclusive end index of the training segment.
    pub train_end: usize,
    /// Exclusive end index of the validation segment.
    pub val_end: usize,
}

/// Contiguous train/val/test segments: `train = floor(r0*T)`,
/// `val = floor(r1*T)`, test gets the remainder. Every segment must hold at
/// least `min_len` steps so that no window straddles a boundary.
pub fn split_chronological(
    series: &SpeedSeries,
    ratios: (f64, f64, f64),
    min_len: usize,
) -> Result<Split> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be non-negative and sum to 1, got {:?}",
            ratios
        )));
    }
    let t = series.len();
    let train_len = (a * t as f64).floor() as usize;
    let val_len = (b * t as f64).floor() as usize;
    let test_len = t - train_len - val_len;
    for (name, len) in [("train", train_len), ("val", val_len), ("test", test_len)] {
        if len < min_len {
            return Err(Error::Data(format!(
                "{} segment has {} steps, need at least {}",
                name, len, min_len
            )));
        }
    }
    let train_end = train_len;
    let val_end = train_len + val_len;
    Ok(Split {
        train: series.slice(0, train_end),
        val: series.slice(train_end, val_end),
        test: series.slice(val_end, t),
        train_end,
        val_end,
    })
}

/// Normalisation and split boundaries persisted for exact reproduction.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitManifest {
    pub stats: NormStats,
    pub total_len: usize,
    pub train_end: usize,
    pub val_end: usize,
    pub t_in: usize,
    pub t_out: usize,
}

impl SplitManifest {
    pub fn to_text(&self) -> String {
        format!(
            "mean={:?}\nstd={:?}\ntotal_len={}\ntrain_end={}\nval_end={}\nt_in={}\nt_out={}\n",
            self.stats.mean,
            self.stats.std,
            self.total_len,
            self.train_end,
            self.val_end,
            self.t_in,
            self.t_out
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("manifest line without '=': {}", line)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| Error::Data(format!("manifest is missing '{}'", k)))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Data(format!("manifest key '{}' is not numeric", k)))
        };
        let int = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Data(format!("manifest key '{}' is not an integer", k)))
        };
        Ok(SplitManifest {
            stats: NormStats {
                mean: num("mean")?,
                std: num("std")?,
            },
            total_len: int("total_len")?,
            train_end: int("train_end")?,
            val_end: int("val_end")?,
            t_in: int("t_in")?,
            t_out: int("t_out")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SplitManifest::parse(&text)
    }
}
