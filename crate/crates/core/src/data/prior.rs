use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_KAPPA: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceEntry {
    pub from: String,
    pub to: String,
    pub dist: f64,
}

/// Static prior adjacency from road distances.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorGraph {
    pub weights: Tensor,
    pub sensor_ids: Vec<String>,
}

impl PriorGraph {
    /// The empty prior (no edges), used when no distance table is given.
    pub fn empty(sensor_ids: Vec<String>) -> Self {
        let n = sensor_ids.len();
        PriorGraph {
            weights: Tensor::zeros(&[n, n]),
            sensor_ids,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.sensor_ids.len()
    }
}

/// Distance CSV: header `from,to,dist`, directed distances in meters.
pub fn load_distance_table(path: &Path) -> Result<Vec<DistanceEntry>> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(0, format!("{:?}", other)),
        })?;
    let mut out = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(k + 1, e.to_string()))?;
        let line = rec.position().map_or(k + 1, |p| p.line() as usize);
        if k == 0 {
            let header: Vec<&str> = rec.iter().collect();
            if header != ["from", "to", "dist"] {
                return Err(parse_err(line, "header must be `from,to,dist`".into()));
            }
            continue;
        }
        if rec.len() != 3 {
            return Err(parse_err(line, format!("expected 3 cells, found {}", rec.len())));
        }
        let dist: f64 = rec[2]
            .parse()
            .map_err(|_| parse_err(line, format!("non-numeric distance '{}'", &rec[2])))?;
        if !(dist.is_finite() && dist >= 0.0) {
            return Err(parse_err(line, format!("distance must be finite and >= 0, got {}", dist)));
        }
        out.push(DistanceEntry {
            from: rec[0].to_string(),
            to: rec[1].to_string(),
            dist,
        });
    }
    Ok(out)
}

pub fn write_distance_table(path: &Path, entries: &[DistanceEntry]) -> Result<()> {
    let mut s = String::from("from,to,dist\n");
    for e in entries {
        s.push_str(&format!("{},{},{:?}\n", e.from, e.to, e.dist));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Gaussian distance kernel `exp(-d^2 / sigma^2)`, zeroed below `kappa`.
pub fn distance_kernel(dist: f64, sigma: f64, kappa: f64) -> f64 {
    let w = (-(dist * dist) / (sigma * sigma)).exp();
    if w >= kappa {
        w
    } else {
        0.0
    }
}

/// Builds the prior graph over `sensor_ids`. `sigma` is the population
/// standard deviation of all listed distances between known sensors; entries
/// naming unknown sensors are skipped and unlisted pairs get weight 0.
pub fn build_distance_graph(
    entries: &[DistanceEntry],
    sensor_ids: &[String],
    kappa: f64,
) -> Result<PriorGraph> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::Config(format!("kappa must lie in (0, 1), got {}", kappa)));
    }
    let index: HashMap<&str, usize> = sensor_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let known: Vec<(usize, usize, f64)> = entries
        .iter()
        .filter_map(|e| {
            Some((
                *index.get(e.from.as_str())?,
                *index.get(e.to.as_str())?,
                e.dist,
            ))
        })
        .collect();
    if known.is_empty() {
        return Err(Error::Config(
            "distance table lists no pair of known sensors".into(),
        ));
    }
    let m = known.len() as f64;
    let mean = known.iter().map(|k| k.2).sum::<f64>() / m;
    let var = known.iter().map(|k| (k.2 - mean).powi(2)).sum::<f64>() / m;
    let sigma = var.sqrt();
    if sigma == 0.0 {
        return Err(Error::Config(
            "all distances are equal; the kernel width sigma is zero".into(),
        ));
    }
    let n = sensor_ids.len();
    let mut weights = Tensor::zeros(&[n, n]);
    for (i, j, d) in known {
        weights.set(i, j, distance_kernel(d, sigma, kappa));
    }
    Ok(PriorGraph {
        weights,
        sensor_ids: sensor_ids.to_vec(),
    })
}
