use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Sampling interval of every series, in seconds.
pub const STEP_SECONDS: i64 = 300;
const SECONDS_PER_DAY: i64 = 86_400;

/// A `T x N` speed record with its observation mask.
///
/// A cell is missing exactly when its raw value is `0.0`; missing cells keep
/// the value `0.0` through every transformation.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedSeries {
    pub timestamps: Vec<i64>,
    pub values: Tensor,
    pub mask: Vec<bool>,
    pub sensor_ids: Vec<String>,
}

impl SpeedSeries {
    /// Builds a series, deriving the mask from zero-equality and validating
    /// the timestamp grid.
    pub fn new(timestamps: Vec<i64>, values: Tensor, sensor_ids: Vec<String>) -> Result<Self> {
        let mask = values.data().iter().map(|&v| v != 0.0).collect();
        SpeedSeries::with_mask(timestamps, values, mask, sensor_ids)
    }

    pub fn with_mask(
        timestamps: Vec<i64>,
        values: Tensor,
        mask: Vec<bool>,
        sensor_ids: Vec<String>,
    ) -> Result<Self> {
        values.require_matrix(timestamps.len(), sensor_ids.len(), "speed values")?;
        if mask.len() != values.len() {
            return Err(Error::shape("mask size differs from values"));
        }
        validate_grid(&timestamps).map_err(|(i, msg)| Error::Data(format!("row {}: {}", i, msg)))?;
        Ok(SpeedSeries {
            timestamps,
            values,
            mask,
            sensor_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.sensor_ids.len()
    }

    #[inline]
    pub fn observed(&self, t: usize, i: usize) -> bool {
        self.mask[t * self.num_nodes() + i]
    }

    /// Rows `start..end` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> SpeedSeries {
        let n = self.num_nodes();
        let values = Tensor::matrix(
            end - start,
            n,
            self.values.data()[start * n..end * n].to_vec(),
        )
        .expect("slice bounds");
        SpeedSeries {
            timestamps: self.timestamps[start..end].to_vec(),
            values,
            mask: self.mask[start * n..end * n].to_vec(),
            sensor_ids: self.sensor_ids.clone(),
        }
    }
}

fn validate_grid(ts: &[i64]) -> std::result::Result<(), (usize, String)> {
    for (i, w) in ts.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err((i + 1, "timestamps must be strictly increasing".into()));
        }
        if w[1] - w[0] != STEP_SECONDS {
            return Err((
                i + 1,
                format!(
                    "timestamps must be {}-second spaced, got a gap of {} s",
                    STEP_SECONDS,
                    w[1] - w[0]
                ),
            ));
        }
    }
    Ok(())
}

/// Parses an ISO-8601 local datetime (`2012-03-01 00:05:00` or
/// `2012-03-01T00:05:00`) into epoch seconds, reading the wall clock as UTC.
pub fn parse_datetime(s: &str) -> Option<i64> {
    let s = s.trim();
    ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
        .map(|dt| dt.and_utc().timestamp())
}

pub fn format_datetime(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|dt| dt.naive_utc().format("%Y-%m-%d %H:%M:%S").to_string())
        .unwrap_or_else(|| ts.to_string())
}

/// Speed CSV: header `timestamp,<id1>,...,<idN>`, one row per 5-minute step.
pub fn load_speed_table(path: &Path) -> Result<SpeedSeries> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(0, format!("{:?}", other)),
        })?;

    let mut records = reader.records();
    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(parse_err(1, e.to_string())),
        None => return Err(parse_err(1, "empty file".into())),
    };
    if header.get(0) != Some("timestamp") || header.len() < 2 {
        return Err(parse_err(
            1,
            "header must be `timestamp,<id1>,...,<idN>`".into(),
        ));
    }
    let sensor_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let n = sensor_ids.len();

    let mut timestamps = Vec::new();
    let mut data = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != n + 1 {
            return Err(parse_err(
                line,
                format!("expected {} cells, found {}", n + 1, rec.len()),
            ));
        }
        let ts = parse_datetime(&rec[0])
            .ok_or_else(|| parse_err(line, format!("bad timestamp '{}'", &rec[0])))?;
        if let Some(&prev) = timestamps.last() {
            if ts <= prev {
                return Err(parse_err(line, "timestamps must be strictly increasing".into()));
            }
            if ts - prev != STEP_SECONDS {
                return Err(parse_err(
                    line,
                    format!("expected 5-minute spacing, gap is {} s", ts - prev),
                ));
            }
        }
        timestamps.push(ts);
        for cell in rec.iter().skip(1) {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("non-numeric cell '{}'", cell)))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite cell '{}'", cell)));
            }
            data.push(v);
        }
    }
    let t = timestamps.len();
    let values = Tensor::matrix(t, n, data)?;
    SpeedSeries::new(timestamps, values, sensor_ids)
}

/// Writes a series in the speed CSV format. Missing cells are written as
/// `0.0` regardless of their stored value.
pub fn write_speed_table(path: &Path, series: &SpeedSeries) -> Result<()> {
    let mut out = String::new();
    out.push_str("timestamp");
    for id in &series.sensor_ids {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    let n = series.num_nodes();
    for (t, &ts) in series.timestamps.iter().enumerate() {
        out.push_str(&format_datetime(ts));
        for i in 0..n {
            out.push(',');
            if series.observed(t, i) {
                out.push_str(&format!("{:?}", series.values.get(t, i)));
            } else {
                out.push_str("0.0");
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Time of day in `[0, 1)` for each timestamp, broadcast to `n` nodes
/// (`T x n`).
pub fn time_of_day(timestamps: &[i64], n: usize) -> Tensor {
    Tensor::from_fn(timestamps.len(), n, |t, _| {
        timestamps[t].rem_euclid(SECONDS_PER_DAY) as f64 / SECONDS_PER_DAY as f64
    })
}
