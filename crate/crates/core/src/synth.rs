//! Ground-truth time-varying DBN generation, linear SEM simulation and
//! structure-recovery scoring.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::constraint::topological_order;
use crate::data::{format_datetime, parse_datetime, SpeedSeries, STEP_SECONDS};
use crate::error::{Error, Result};
use crate::grcsl::{CausalGraphSeq, GRAPH_CSV_HEADER};
use crate::numerics::{seeded_rng, SeededRng, Tensor};

/// First timestamp of generated series.
pub const SYNTH_START: &str = "2012-03-01 00:00:00";
/// Largest accepted spectral radius of the per-regime transition matrix.
pub const STABILITY_LIMIT: f64 = 0.95;
const MAX_WEIGHT_DRAWS: usize = 20;
const MAX_SUPPORT_DRAWS: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_nodes: usize,
    pub num_regimes: usize,
    pub density: f64,
    /// Magnitude range of edge weights.
    pub weight_range: (f64, f64),
    /// Draw a random sign for every weight.
    pub signed: bool,
    pub len: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_nodes: 10,
            num_regimes: 4,
            density: 0.2,
            weight_range: (0.3, 0.8),
            signed: false,
            len: 2000,
            noise_std: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_nodes == 0 || self.num_regimes == 0 {
            return Err(Error::Config("num_nodes and num_regimes must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.density) {
            return Err(Error::Config(format!("density must lie in [0, 1), got {}", self.density)));
        }
        let (lo, hi) = self.weight_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!(
                "weight range must satisfy 0 < lo <= hi, got ({}, {})",
                lo, hi
            )));
        }
        if self.len < self.num_regimes {
            return Err(Error::Config(format!(
                "len {} is shorter than the number of regimes {}",
                self.len, self.num_regimes
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        Ok(())
    }
}

/// Coefficients of one regime. `b0[i][j]` / `b1[i][j]` is the effect of
/// `x_j` at lag 0 / lag 1 on `x_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Regime {
    pub start: usize,
    pub b0: Tensor,
    pub b1: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthTvdbn {
    pub num_nodes: usize,
    /// Regimes in time order; regime `r` covers `[start_r, start_{r+1})`.
    pub regimes: Vec<Regime>,
    pub len: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl GroundTruthTvdbn {
    pub fn change_points(&self) -> Vec<usize> {
        self.regimes.iter().skip(1).map(|r| r.start).collect()
    }

    pub fn regime_at(&self, t: usize) -> usize {
        self.regimes.partition_point(|r| r.start <= t) - 1
    }

    pub fn regime_end(&self, r: usize) -> usize {
        self.regimes.get(r + 1).map_or(self.len, |n| n.start)
    }

    pub fn sensor_ids(&self) -> Vec<String> {
        (0..self.num_nodes).map(|i| format!("s{}", i)).collect()
    }
}

fn draw_weight<R: Rng>(rng: &mut R, cfg: &SynthConfig) -> f64 {
    let (lo, hi) = cfg.weight_range;
    let w = if hi > lo { rng.random_range(lo..hi) } else { lo };
    if cfg.signed && rng.random_bool(0.5) {
        -w
    } else {
        w
    }
}

/// `(I - B0)^{-1} B1`, solved by substitution in topological order.
pub fn transition_matrix(b0: &Tensor, b1: &Tensor) -> Result<Tensor> {
    let order = support_order(b0)
        .ok_or_else(|| Error::Data("intra-slice coefficients contain a directed cycle".into()))?;
    let n = b0.rows();
    let mut m = Tensor::zeros(&[n, n]);
    for c in 0..n {
        for &i in &order {
            let mut v = b1.get(i, c);
            for j in 0..n {
                let w = b0.get(i, j);
                if w != 0.0 {
                    v += w * m.get(j, c);
                }
            }
            m.set(i, c, v);
        }
    }
    Ok(m)
}

/// Spectral radius estimate from the mean log growth rate of power
/// iteration.
pub fn spectral_radius(m: &Tensor, iters: usize) -> f64 {
    let n = m.rows();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    // A fixed irregular start avoids landing exactly in an invariant subspace.
    for (i, x) in v.iter_mut().enumerate() {
        *x *= 1.0 + 0.1 * ((i * 7919) % 13) as f64 / 13.0;
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let burn = iters / 2;
    let mut log_growth = 0.0;
    for k in 0..iters {
        let w: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| m.get(i, j) * v[j]).sum())
            .collect();
        let g = norm(&w);
        if g == 0.0 {
            return 0.0;
        }
        if k >= burn {
            log_growth += g.ln();
        }
        v = w.into_iter().map(|x| x / g).collect();
    }
    (log_growth / (iters - burn) as f64).exp()
}

fn support_order(b: &Tensor) -> Option<Vec<usize>> {
    topological_order(&b.map(f64::abs), f64::MIN_POSITIVE)
}

/// Samples a ground truth with one DAG `B0` and one unconstrained `B1` per
/// regime. Regimes split `[0, len)` into equal consecutive blocks.
pub fn sample_tvdbn(cfg: &SynthConfig) -> Result<GroundTruthTvdbn> {
    cfg.validate()?;
    let n = cfg.num_nodes;
    let mut rng = seeded_rng(cfg.seed);
    let mut regimes = Vec::with_capacity(cfg.num_regimes);
    for r in 0..cfg.num_regimes {
        let start = r * cfg.len / cfg.num_regimes;
        let (b0, b1) = sample_regime(&mut rng, cfg).ok_or_else(|| {
            Error::Config(format!(
                "could not draw a regime with transition spectral radius <= {} (density {}, weights {:?})",
                STABILITY_LIMIT, cfg.density, cfg.weight_range
            ))
        })?;
        debug_assert_eq!(b0.rows(), n);
        regimes.push(Regime { start, b0, b1 });
    }
    Ok(GroundTruthTvdbn {
        num_nodes: n,
        regimes,
        len: cfg.len,
        noise_std: cfg.noise_std,
        seed: cfg.seed,
    })
}

/// The intra-slice support is drawn once; inter-slice supports and all
/// weights are redrawn until the transition matrix is stable, so the
/// rejection step never thins the intra-slice edge count.
fn sample_regime(rng: &mut SeededRng, cfg: &SynthConfig) -> Option<(Tensor, Tensor)> {
    let n = cfg.num_nodes;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    // perm[a] precedes perm[b] whenever a < b: edges go from earlier to later.
    let mut s0 = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(cfg.density) {
                s0.push((perm[b], perm[a]));
            }
        }
    }
    for _ in 0..MAX_SUPPORT_DRAWS {
        let mut s1 = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if rng.random_bool(cfg.density) {
                    s1.push((i, j));
                }
            }
        }
        for _ in 0..MAX_WEIGHT_DRAWS {
            let mut b0 = Tensor::zeros(&[n, n]);
            for &(i, j) in &s0 {
                b0.set(i, j, draw_weight(rng, cfg));
            }
            let mut b1 = Tensor::zeros(&[n, n]);
            for &(i, j) in &s1 {
                b1.set(i, j, draw_weight(rng, cfg));
            }
            let m = transition_matrix(&b0, &b1).expect("permutation support is acyclic");
            if spectral_radius(&m, 200) <= STABILITY_LIMIT {
                return Some((b0, b1));
            }
        }
    }
    None
}

/// Simulates `x_t = B0 x_t + B1 x_{t-1} + z_t` with the regime active at
/// `t`, no lagged term at `t = 0` and `z ~ N(0, noise_std²)`. The result has one column
/// per node, 5-minute timestamps and a full mask.
pub fn simulate_linear_sem(truth: &GroundTruthTvdbn) -> Result<SpeedSeries> {
    let n = truth.num_nodes;
    let mut rng = seeded_rng(truth.seed);
    rng.set_stream(1);
    let noise = Normal::new(0.0, truth.noise_std)
        .map_err(|e| Error::Config(format!("noise_std {}: {}", truth.noise_std, e)))?;
    let z = Tensor::from_fn(truth.len, n, |_, _| noise.sample(&mut rng));
    let values = propagate(truth, &z)?;
    let t0 = parse_datetime(SYNTH_START).expect("valid start timestamp");
    let timestamps = (0..truth.len as i64).map(|k| t0 + k * STEP_SECONDS).collect();
    let mask = vec![true; truth.len * n];
    SpeedSeries::with_mask(timestamps, values, mask, truth.sensor_ids())
}

/// Runs the SEM recursion on a given `len x N` innovation matrix, solving
/// each intra-slice system by substitution in topological order.
pub fn propagate(truth: &GroundTruthTvdbn, z: &Tensor) -> Result<Tensor> {
    let n = truth.num_nodes;
    z.require_matrix(truth.len, n, "innovations")?;
    let orders = truth
        .regimes
        .iter()
        .enumerate()
        .map(|(r, reg)| {
            support_order(&reg.b0).ok_or_else(|| {
                Error::Data(format!("regime {}: intra-slice coefficients contain a directed cycle", r))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = Tensor::zeros(&[truth.len, n]);
    for t in 0..truth.len {
        let r = truth.regime_at(t);
        let reg = &truth.regimes[r];
        for &i in &orders[r] {
            let mut v = z.get(t, i);
            for j in 0..n {
                let w1 = reg.b1.get(i, j);
                if w1 != 0.0 && t > 0 {
                    v += w1 * values.get(t - 1, j);
                }
                let w0 = reg.b0.get(i, j);
                if w0 != 0.0 {
                    v += w0 * values.get(t, j);
                }
            }
            values.set(t, i, v);
        }
    }
    Ok(values)
}

/// Writes the truth in the learned-graph edge format. Each regime is one
/// block whose `window_start_ts` is the regime's first timestamp and whose
/// `step` is the 1-based regime index.
pub fn write_truth_csv(path: &Path, truth: &GroundTruthTvdbn) -> Result<()> {
    let mut buf = Vec::new();
    let t0 = parse_datetime(SYNTH_START).expect("valid start timestamp");
    let ids = truth.sensor_ids();
    let io = |e| Error::io(path, e);
    writeln!(buf, "{}", GRAPH_CSV_HEADER).map_err(io)?;
    for (r, reg) in truth.regimes.iter().enumerate() {
        let ts = format_datetime(t0 + reg.start as i64 * STEP_SECONDS);
        for (lag, m) in [(0, &reg.b0), (1, &reg.b1)] {
            for i in 0..truth.num_nodes {
                for j in 0..truth.num_nodes {
                    let w = m.get(i, j);
                    if w != 0.0 {
                        writeln!(buf, "{},{},{},{},{},{:?}", ts, r + 1, lag, ids[j], ids[i], w).map_err(io)?;
                    }
                }
            }
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LagScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub shd: f64,
}

impl LagScore {
    fn mean(scores: &[LagScore]) -> LagScore {
        let k = scores.len().max(1) as f64;
        let mean = |f: fn(&LagScore) -> f64| scores.iter().map(f).sum::<f64>() / k;
        LagScore {
            precision: mean(|s| s.precision),
            recall: mean(|s| s.recall),
            f1: mean(|s| s.f1),
            shd: mean(|s| s.shd),
        }
    }
}

/// Recovery scores per lag (index 0 intra-slice, 1 inter-slice). Each entry
/// averages graphs within a regime, then averages across regimes that have
/// at least one scored graph.
#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryScore {
    pub per_lag: [LagScore; 2],
    pub per_regime: Vec<Option<[LagScore; 2]>>,
    pub graphs_scored: usize,
}

impl RecoveryScore {
    /// F1 averaged over both lags.
    pub fn mean_f1(&self) -> f64 {
        0.5 * (self.per_lag[0].f1 + self.per_lag[1].f1)
    }
}

/// Compares binary supports. `skip_diag` excludes self-edges; `pairwise`
/// counts SHD over unordered pairs so that a reversed edge costs 1.
pub fn compare_supports(est: &[bool], truth: &[bool], n: usize, skip_diag: bool, pairwise: bool) -> LagScore {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for i in 0..n {
        for j in 0..n {
            if skip_diag && i == j {
                continue;
            }
            match (est[i * n + j], truth[i * n + j]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => {}
            }
        }
    }
    let shd = if pairwise {
        let mut d = 0;
        for i in 0..n {
            for j in i + 1..n {
                if (est[i * n + j], est[j * n + i]) != (truth[i * n + j], truth[j * n + i]) {
                    d += 1;
                }
            }
        }
        if !skip_diag {
            d += (0..n).filter(|&i| est[i * n + i] != truth[i * n + i]).count();
        }
        d
    } else {
        fp + fneg
    };
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fneg == 0 { 1.0 } else { tp as f64 / (tp + fneg) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    LagScore {
        precision,
        recall,
        f1,
        shd: shd as f64,
    }
}

fn support(m: &Tensor, threshold: f64) -> Vec<bool> {
    m.data().iter().map(|&w| w.abs() >= threshold).collect()
}

fn truth_support(m: &Tensor) -> Vec<bool> {
    m.data().iter().map(|&w| w != 0.0).collect()
}

fn score_one(b: &Tensor, truth: &Tensor, lag: usize, threshold: f64) -> LagScore {
    let n = truth.rows();
    compare_supports(&support(b, threshold), &truth_support(truth), n, lag == 0, lag == 0)
}

fn aggregate(per_regime_scores: Vec<[Vec<LagScore>; 2]>, graphs_scored: usize) -> RecoveryScore {
    let per_regime: Vec<Option<[LagScore; 2]>> = per_regime_scores
        .iter()
        .map(|s| (!s[0].is_empty()).then(|| [LagScore::mean(&s[0]), LagScore::mean(&s[1])]))
        .collect();
    let covered: Vec<[LagScore; 2]> = per_regime.iter().flatten().copied().collect();
    let lag = |k: usize| LagScore::mean(&covered.iter().map(|s| s[k]).collect::<Vec<_>>());
    RecoveryScore {
        per_lag: [lag(0), lag(1)],
        per_regime,
        graphs_scored,
    }
}

/// Scores learned graphs against the truth. Each entry pairs a window's
/// first series index with its graph sequence; the graph pair at position
/// `k` belongs to series index `start + k + 1`.
pub fn score_recovery(
    estimated: &[(usize, CausalGraphSeq)],
    truth: &GroundTruthTvdbn,
    threshold: f64,
) -> Result<RecoveryScore> {
    let n = truth.num_nodes;
    let mut acc: Vec<[Vec<LagScore>; 2]> = vec![[Vec::new(), Vec::new()]; truth.regimes.len()];
    let mut scored = 0;
    for (start, seq) in estimated {
        for (k, (b0, b1)) in seq.steps.iter().enumerate() {
            let t = start + k + 1;
            if t >= truth.len {
                return Err(Error::Data(format!(
                    "graph at series index {} lies outside the truth range [0, {})",
                    t, truth.len
                )));
            }
            b0.require_matrix(n, n, "estimated intra-slice graph")?;
            b1.require_matrix(n, n, "estimated inter-slice graph")?;
            let r = truth.regime_at(t);
            let reg = &truth.regimes[r];
            acc[r][0].push(score_one(b0, &reg.b0, 0, threshold));
            acc[r][1].push(score_one(b1, &reg.b1, 1, threshold));
            scored += 1;
        }
    }
    Ok(aggregate(acc, scored))
}

/// Monte-Carlo recovery score of random graphs whose edge probability
/// matches the empirical density of each regime and lag.
pub fn random_baseline(truth: &GroundTruthTvdbn, draws: usize, seed: u64) -> RecoveryScore {
    let n = truth.num_nodes;
    let mut rng = seeded_rng(seed);
    let mut acc: Vec<[Vec<LagScore>; 2]> = Vec::with_capacity(truth.regimes.len());
    for reg in &truth.regimes {
        let mut lags = [Vec::with_capacity(draws), Vec::with_capacity(draws)];
        for (lag, m) in [(0usize, &reg.b0), (1, &reg.b1)] {
            let ts = truth_support(m);
            let slots = if lag == 0 { n * (n - 1) } else { n * n };
            let edges = ts.iter().filter(|&&e| e).count();
            let p = if slots == 0 { 0.0 } else { edges as f64 / slots as f64 };
            for _ in 0..draws {
                let est: Vec<bool> = (0..n * n)
                    .map(|idx| !(lag == 0 && idx / n == idx % n) && rng.random_bool(p))
                    .collect();
                lags[lag].push(compare_supports(&est, &ts, n, lag == 0, lag == 0));
            }
        }
        acc.push(lags);
    }
    aggregate(acc, draws * truth.regimes.len())
}

impl std::fmt::Display for RecoveryScore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "lag  precision  recall  f1      shd")?;
        for (lag, s) in self.per_lag.iter().enumerate() {
            writeln!(
                f,
                "{:<4} {:<10.4} {:<7.4} {:<7.4} {:.2}",
                lag, s.precision, s.recall, s.f1, s.shd
            )?;
        }
        write!(f, "graphs scored: {}", self.graphs_scored)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_edge_truth(len: usize) -> GroundTruthTvdbn {
        let n = 3;
        let mut b1 = Tensor::zeros(&[n, n]);
        b1.set(2, 1, 0.5);
        GroundTruthTvdbn {
            num_nodes: n,
            regimes: vec![Regime {
                start: 0,
                b0: Tensor::zeros(&[n, n]),
                b1,
            }],
            len,
            noise_std: 1.0,
            seed: 3,
        }
    }

    #[test]
    fn zero_density_gives_empty_graphs() {
        let cfg = SynthConfig {
            density: 0.0,
            ..SynthConfig::default()
        };
        let truth = sample_tvdbn(&cfg).unwrap();
        for r in &truth.regimes {
            assert!(r.b0.data().iter().all(|&w| w == 0.0));
            assert!(r.b1.data().iter().all(|&w| w == 0.0));
        }
    }

    #[test]
    fn regimes_partition_the_range() {
        let truth = sample_tvdbn(&SynthConfig::default()).unwrap();
        assert_eq!(truth.change_points(), vec![500, 1000, 1500]);
        assert_eq!(truth.regime_at(0), 0);
        assert_eq!(truth.regime_at(499), 0);
        assert_eq!(truth.regime_at(500), 1);
        assert_eq!(truth.regime_at(1999), 3);
        assert_eq!(truth.regime_end(3), 2000);
    }

    #[test]
    fn sampled_regimes_are_stable() {
        let truth = sample_tvdbn(&SynthConfig::default()).unwrap();
        for r in &truth.regimes {
            let m = transition_matrix(&r.b0, &r.b1).unwrap();
            assert!(spectral_radius(&m, 200) <= STABILITY_LIMIT);
        }
    }

    #[test]
    fn spectral_radius_of_diagonal_and_rotation() {
        assert!((spectral_radius(&Tensor::diag(&[0.3, -0.9, 0.5]), 400) - 0.9).abs() < 1e-9);
        let c = 0.8 * (0.7f64).cos();
        let s = 0.8 * (0.7f64).sin();
        let rot = Tensor::from_rows(&[vec![c, -s], vec![s, c]]).unwrap();
        assert!((spectral_radius(&rot, 400) - 0.8).abs() < 1e-9);
    }

    #[test]
    fn single_lagged_edge_propagates_exactly() {
        let truth = single_edge_truth(50);
        let mut z = Tensor::zeros(&[50, 3]);
        z.data_mut()[..3].copy_from_slice(&[0.7, -1.3, 2.1]);
        let x = propagate(&truth, &z).unwrap();
        assert_eq!(x.get(1, 2), 0.5 * -1.3);
        for t in 1..50 {
            assert_eq!(x.get(t, 2), 0.5 * x.get(t - 1, 1));
        }
    }

    #[test]
    fn cyclic_intra_slice_is_rejected() {
        let mut truth = single_edge_truth(10);
        truth.regimes[0].b0.set(0, 1, 0.5);
        truth.regimes[0].b0.set(1, 0, 0.5);
        assert!(matches!(simulate_linear_sem(&truth), Err(Error::Data(_))));
    }

    #[test]
    fn simulation_is_deterministic() {
        let truth = sample_tvdbn(&SynthConfig::default()).unwrap();
        let a = simulate_linear_sem(&truth).unwrap();
        let b = simulate_linear_sem(&truth).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn perfect_and_empty_estimates() {
        let truth = sample_tvdbn(&SynthConfig {
            len: 40,
            ..SynthConfig::default()
        })
        .unwrap();
        let exact: Vec<(usize, CausalGraphSeq)> = (0..3)
            .map(|w| {
                let steps = (1..12)
                    .map(|k| {
                        let r = &truth.regimes[truth.regime_at(w * 10 + k)];
                        (r.b0.map(|v| (v != 0.0) as u8 as f64), r.b1.map(|v| (v != 0.0) as u8 as f64))
                    })
                    .collect();
                (w * 10, CausalGraphSeq { steps })
            })
            .collect();
        let s = score_recovery(&exact, &truth, 0.5).unwrap();
        for l in &s.per_lag {
            assert_eq!((l.precision, l.recall, l.f1, l.shd), (1.0, 1.0, 1.0, 0.0));
        }
        let n = truth.num_nodes;
        let empty: Vec<(usize, CausalGraphSeq)> = vec![(
            0,
            CausalGraphSeq {
                steps: vec![(Tensor::zeros(&[n, n]), Tensor::zeros(&[n, n])); 11],
            },
        )];
        let s = score_recovery(&empty, &truth, 0.5).unwrap();
        assert_eq!(s.per_lag[1].precision, 1.0);
        assert_eq!(s.per_lag[1].recall, 0.0);
        assert_eq!(s.per_lag[1].f1, 0.0);
        let late = vec![(35usize, empty[0].1.clone())];
        assert!(score_recovery(&late, &truth, 0.5).is_err());
    }

    #[test]
    fn reversed_edge_costs_one() {
        let n = 2;
        let truth = [false, false, true, false];
        let est = [false, true, false, false];
        assert_eq!(compare_supports(&est, &truth, n, true, true).shd, 1.0);
        assert_eq!(compare_supports(&est, &truth, n, false, false).shd, 2.0);
    }
}
