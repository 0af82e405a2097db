use crate::error::{Error, Result};

use super::series::SpeedSeries;

const MIN_STD: f64 = 1e-12;

/// Z-score statistics over observed entries (population convention).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn fit(series: &SpeedSeries) -> Result<Self> {
        let observed: Vec<f64> = series
            .values
            .data()
            .iter()
            .zip(&series.mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect();
        if observed.is_empty() {
            return Err(Error::Data("no observed entries to normalise".into()));
        }
        let n = observed.len() as f64;
        let mean = observed.iter().sum::<f64>() / n;
        let var = observed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std < MIN_STD {
            return Err(Error::Data(format!(
                "standard deviation {:e} of observed entries is degenerate",
                std
            )));
        }
        Ok(NormStats { mean, std })
    }

    #[inline]
    pub fn apply_value(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    #[inline]
    pub fn invert_value(&self, x: f64) -> f64 {
        x * self.std + self.mean
    }

    /// Normalises observed entries; missing entries stay 0 and unobserved.
    pub fn apply(&self, series: &SpeedSeries) -> SpeedSeries {
        let mut out = series.clone();
        for (v, &m) in out.values.data_mut().iter_mut().zip(&series.mask) {
            *v = if m { self.apply_value(*v) } else { 0.0 };
        }
        out
    }
}

/// Fits statistics on `series` and returns them with the normalised series.
pub fn zscore_fit_apply(series: &SpeedSeries) -> Result<(NormStats, SpeedSeries)> {
    let stats = NormStats::fit(series)?;
    Ok((stats, stats.apply(series)))
}

pub fn invert_zscore(stats: &NormStats, x: f64) -> f64 {
    stats.invert_value(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn series(values: &[f64]) -> SpeedSeries {
        let t = values.len();
        let ts = (0..t as i64).map(|k| 1_330_560_000 + 300 * k).collect();
        SpeedSeries::new(ts, Tensor::column(values), vec!["a".into()]).unwrap()
    }

    #[test]
    fn constant_series_is_error() {
        assert!(zscore_fit_apply(&series(&[5.0, 5.0, 5.0])).is_err());
    }

    #[test]
    fn one_two_three() {
        let (stats, norm) = zscore_fit_apply(&series(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(stats.mean, 2.0);
        assert!((stats.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let want = [-1.2247, 0.0, 1.2247];
        for (got, w) in norm.values.data().iter().zip(want) {
            assert!((got - w).abs() < 1e-4);
        }
        assert!((invert_zscore(&stats, 1.2247) - 3.0).abs() < 1e-4);
    }

    #[test]
    fn missing_cells_stay_zero_and_excluded() {
        let (stats, norm) = zscore_fit_apply(&series(&[1.0, 0.0, 3.0])).unwrap();
        assert_eq!(stats.mean, 2.0);
        assert_eq!(norm.values.get(1, 0), 0.0);
        assert!(!norm.mask[1]);
    }

    #[test]
    fn invert_simple() {
        let s = NormStats { mean: 2.0, std: 1.0 };
        assert_eq!(invert_zscore(&s, 0.0), 2.0);
    }

    #[test]
    fn round_trip_on_observed() {
        let raw = [61.3, 0.0, 58.25, 70.0, 12.5, 64.0];
        let s = series(&raw);
        let (stats, norm) = zscore_fit_apply(&s).unwrap();
        for (k, &v) in raw.iter().enumerate() {
            if v != 0.0 {
                assert!((stats.invert_value(norm.values.data()[k]) - v).abs() < 1e-12);
            }
        }
    }
}
