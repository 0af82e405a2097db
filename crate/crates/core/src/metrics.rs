//! Masked forecast metrics per horizon step.

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Actual values below this magnitude are left out of MAPE.
pub const DEFAULT_MAPE_FLOOR: f64 = 1.0;
pub const DEFAULT_HORIZONS: [usize; 3] = [3, 6, 12];

/// Metrics over one set of cells. A metric is `None` when no cell
/// qualifies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    /// Percent.
    pub mape: Option<f64>,
    pub count: usize,
    pub mape_count: usize,
}

#[derive(Default)]
struct Accum {
    abs: f64,
    sq: f64,
    pct: f64,
    count: usize,
    pct_count: usize,
}

impl Accum {
    fn push(&mut self, pred: f64, actual: f64, floor: f64) {
        let e = pred - actual;
        self.abs += e.abs();
        self.sq += e * e;
        self.count += 1;
        if actual.abs() >= floor {
            self.pct += (e / actual).abs();
            self.pct_count += 1;
        }
    }

    fn finish(&self) -> Metrics {
        let k = self.count as f64;
        let nonempty = self.count > 0;
        Metrics {
            mae: nonempty.then(|| self.abs / k),
            rmse: nonempty.then(|| (self.sq / k).sqrt()),
            mape: (self.pct_count > 0).then(|| 100.0 * self.pct / self.pct_count as f64),
            count: self.count,
            mape_count: self.pct_count,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// `(horizon, metrics)` for each requested 1-based output step.
    pub per_horizon: Vec<(usize, Metrics)>,
    /// Metrics over every output step.
    pub overall: Metrics,
}

/// Evaluates `T_out x N` forecasts in original units. Each requested
/// horizon is scored on that output step alone.
pub fn evaluate(
    preds: &[Tensor],
    targets: &[Tensor],
    masks: &[Tensor],
    horizons: &[usize],
    mape_floor: f64,
) -> Result<EvalReport> {
    if preds.len() != targets.len() || preds.len() != masks.len() {
        return Err(Error::shape(format!(
            "{} forecasts, {} targets and {} masks",
            preds.len(),
            targets.len(),
            masks.len()
        )));
    }
    let t_out = preds.first().map_or(0, |p| p.rows());
    for ((p, t), m) in preds.iter().zip(targets).zip(masks) {
        p.require_same_shape(t, "forecast vs target")?;
        p.require_same_shape(m, "forecast vs mask")?;
        if p.rows() != t_out {
            return Err(Error::shape("forecasts have differing horizons"));
        }
    }
    if let Some(&h) = horizons.iter().find(|&&h| h == 0 || h > t_out) {
        return Err(Error::shape(format!("horizon {} outside 1..={}", h, t_out)));
    }
    let mut steps: Vec<Accum> = (0..t_out).map(|_| Accum::default()).collect();
    let mut all = Accum::default();
    for ((p, t), m) in preds.iter().zip(targets).zip(masks) {
        for (s, acc) in steps.iter_mut().enumerate() {
            for i in 0..p.cols() {
                if m.get(s, i) != 0.0 {
                    acc.push(p.get(s, i), t.get(s, i), mape_floor);
                    all.push(p.get(s, i), t.get(s, i), mape_floor);
                }
            }
        }
    }
    Ok(EvalReport {
        per_horizon: horizons.iter().map(|&h| (h, steps[h - 1].finish())).collect(),
        overall: all.finish(),
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "absent".to_string(), |x| format!("{:.4}", x))
}

fn csv_cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{:?}", x))
}

impl EvalReport {
    fn rows(&self) -> impl Iterator<Item = (String, &Metrics)> {
        self.per_horizon
            .iter()
            .map(|(h, m)| (h.to_string(), m))
            .chain(std::iter::once(("all".to_string(), &self.overall)))
    }

    /// `horizon,mae,rmse,mape,count`; absent metrics are empty cells.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "horizon,mae,rmse,mape,count")?;
        for (h, m) in self.rows() {
            writeln!(out, "{},{},{},{},{}", h, csv_cell(m.mae), csv_cell(m.rmse), csv_cell(m.mape), m.count)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:>10} {:>10} {:>10} {:>8}", "horizon", "MAE", "RMSE", "MAPE(%)", "count")?;
        for (h, m) in self.rows() {
            writeln!(
                f,
                "{:<8} {:>10} {:>10} {:>10} {:>8}",
                h,
                cell(m.mae),
                cell(m.rmse),
                cell(m.mape),
                m.count
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Tensor {
        Tensor::column(v)
    }

    #[test]
    fn identical_forecasts_score_zero() {
        let p = Tensor::from_fn(3, 2, |i, j| 50.0 + (i * 2 + j) as f64);
        let m = Tensor::full(&[3, 2], 1.0);
        let r = evaluate(&[p.clone()], &[p], &[m], &[1, 3], 1.0).unwrap();
        for (_, x) in &r.per_horizon {
            assert_eq!((x.mae, x.rmse, x.mape), (Some(0.0), Some(0.0), Some(0.0)));
        }
    }

    #[test]
    fn two_cell_fixture() {
        let p = col(&[1.0, 2.0]).reshape(&[1, 2]).unwrap();
        let t = col(&[2.0, 4.0]).reshape(&[1, 2]).unwrap();
        let m = Tensor::full(&[1, 2], 1.0);
        let r = evaluate(&[p], &[t], &[m], &[1], 1.0).unwrap();
        let x = r.per_horizon[0].1;
        assert_eq!(x.mae, Some(1.5));
        assert_eq!(x.rmse, Some(2.5f64.sqrt()));
        assert_eq!(x.mape, Some(50.0));
    }

    #[test]
    fn masked_cell_is_ignored() {
        let p = Tensor::from_rows(&[vec![1.0, 9.0]]).unwrap();
        let t = Tensor::from_rows(&[vec![2.0, 4.0]]).unwrap();
        let m = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let r = evaluate(&[p], &[t], &[m], &[1], 1.0).unwrap();
        assert_eq!(r.overall.mae, Some(1.0));
        assert_eq!(r.overall.count, 1);
    }

    #[test]
    fn empty_horizon_is_absent() {
        let p = Tensor::zeros(&[2, 2]);
        let m = Tensor::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let t = Tensor::full(&[2, 2], 3.0);
        let r = evaluate(&[p], &[t], &[m], &[1, 2], 1.0).unwrap();
        assert!(r.per_horizon[0].1.mae.is_some());
        assert_eq!(r.per_horizon[1].1.mae, None);
        assert_eq!(r.per_horizon[1].1.mape, None);
        assert!(r.to_string().contains("absent"));
    }

    #[test]
    fn mape_floor_excludes_small_actuals() {
        let p = Tensor::from_rows(&[vec![1.0, 11.0]]).unwrap();
        let t = Tensor::from_rows(&[vec![0.5, 10.0]]).unwrap();
        let m = Tensor::full(&[1, 2], 1.0);
        let r = evaluate(&[p], &[t], &[m], &[1], 1.0).unwrap();
        assert_eq!(r.overall.mape_count, 1);
        assert!((r.overall.mape.unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn bad_horizon_is_rejected() {
        let p = Tensor::zeros(&[2, 2]);
        assert!(evaluate(&[p.clone()], &[p.clone()], &[p], &[3], 1.0).is_err());
    }
}
