//! Acyclicity functional, structure-learning loss and the augmented
//! Lagrangian outer loop.
//!
//! The structure learner minimises
//!
//! ```text
//! L(Θ, α) = f(Θ) + α S + ρ/2 S²,    S = Σ_t |h(B⁰_t)|,    h(B) = tr(exp(B ∘ B)) - N
//! ```
//!
//! by repeated inner gradient descent on `Θ` followed by the multiplier and
//! penalty updates `α ← α + ρ S` and `ρ ← η ρ` whenever `S` failed to shrink
//! below `γ` times its previous value. Iteration stops once `S < ξ`.

use std::io::Write;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;

use crate::data::{PriorGraph, Window, WindowSet};
use crate::error::{Error, Result};
use crate::grcsl::{CausalGraphSeq, GraphMode, Grcsl, RecordedWindow};
use crate::numerics::{self, expm, Adam, Graph, Tensor, Var};

/// `tr(exp(B ∘ B)) - N`.
pub fn notears_h(b: &Tensor) -> Result<f64> {
    if !b.is_square() {
        return Err(Error::shape(format!(
            "acyclicity functional needs a square matrix, got {:?}",
            b.shape()
        )));
    }
    let sq = b.map(|v| v * v);
    Ok(expm(&sq)?.trace() - b.rows() as f64)
}

/// `Σ_t max(h(B⁰_t), 0)` over a graph sequence.
pub fn constraint_sum(graphs: &CausalGraphSeq) -> Result<f64> {
    graphs
        .steps
        .iter()
        .map(|(b0, _)| notears_h(b0).map(|h| h.max(0.0)))
        .sum()
}

/// A topological order of the directed graph whose edges are the entries of
/// `adj` at or above `threshold` (`adj[i][j]` is the edge `j -> i`), or
/// `None` when that graph has a cycle.
pub fn topological_order(adj: &Tensor, threshold: f64) -> Option<Vec<usize>> {
    let n = adj.rows();
    let mut indegree = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if adj.get(i, j) >= threshold {
                indegree[i] += 1;
            }
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(j) = ready.pop() {
        order.push(j);
        for i in 0..n {
            if adj.get(i, j) >= threshold {
                indegree[i] -= 1;
                if indegree[i] == 0 {
                    ready.push(i);
                }
            }
        }
    }
    (order.len() == n).then_some(order)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub reconstruction: f64,
    pub sparsity: f64,
}

/// Mean over steps of `½‖X̂_t - X_t‖² + λ(‖B⁰_t‖₁ + ‖B¹_t‖₁)`.
pub fn grcsl_loss(
    reconstructions: &[Tensor],
    targets: &[Tensor],
    graphs: &CausalGraphSeq,
    lambda: f64,
) -> Result<(f64, LossParts)> {
    let steps = graphs.len();
    if reconstructions.len() != steps || targets.len() != steps || steps == 0 {
        return Err(Error::shape(format!(
            "loss needs matching non-empty sequences: {} reconstructions, {} targets, {} graph pairs",
            reconstructions.len(),
            targets.len(),
            steps
        )));
    }
    let mut recon = 0.0;
    let mut sparsity = 0.0;
    for ((xh, x), (b0, b1)) in reconstructions.iter().zip(targets).zip(&graphs.steps) {
        let diff = xh.sub(x)?;
        recon += 0.5 * diff.data().iter().map(|v| v * v).sum::<f64>();
        sparsity += lambda
            * (b0.data().iter().map(|v| v.abs()).sum::<f64>()
                + b1.data().iter().map(|v| v.abs()).sum::<f64>());
    }
    let k = steps as f64;
    let parts = LossParts {
        reconstruction: recon / k,
        sparsity: sparsity / k,
    };
    Ok((parts.reconstruction + parts.sparsity, parts))
}

/// Recorded loss `f` and constraint sum `S` for one window.
pub fn record_window_objective(g: &mut Graph, rec: &RecordedWindow, lambda: f64) -> (Var, Var) {
    let steps = rec.recon.len();
    let mut terms = Vec::with_capacity(steps);
    let mut hs = Vec::with_capacity(steps);
    for (k, (&xh, &(b0, b1))) in rec.recon.iter().zip(&rec.graphs).enumerate() {
        let x = rec.features[k + 1];
        let diff = g.sub(xh, x);
        let w = g.input(rec.recon_weights[k].clone());
        let diff = g.mul(diff, w);
        let sq = g.mul(diff, diff);
        let sse = g.sum(sq);
        let sse = g.scale(sse, 0.5);
        let a0 = g.abs(b0);
        let l0 = g.sum(a0);
        let a1 = g.abs(b1);
        let l1 = g.sum(a1);
        let l1 = g.add(l0, l1);
        let l1 = g.scale(l1, lambda);
        terms.push(g.add(sse, l1));
        let h = g.notears_h(b0);
        hs.push(g.relu(h));
    }
    let total = |g: &mut Graph, vs: &[Var]| {
        let cat = g.concat_cols(vs);
        g.sum(cat)
    };
    let f = total(g, &terms);
    let f = g.scale(f, 1.0 / steps as f64);
    let s = total(g, &hs);
    (f, s)
}

/// `f + α S + ρ/2 S²` with `S = Σ|h|`.
pub fn auglag_objective(f: f64, hs: &[f64], alpha: f64, rho: f64) -> f64 {
    let s: f64 = hs.iter().map(|h| h.abs()).sum();
    f + alpha * s + 0.5 * rho * s * s
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrcslTrainConfig {
    pub lambda: f64,
    pub eta: f64,
    pub gamma: f64,
    pub xi: f64,
    pub alpha0: f64,
    pub rho0: f64,
    pub inner_epochs: usize,
    pub max_outer_iters: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Global gradient-norm clip for the inner solver.
    pub max_grad_norm: f64,
    pub seed: u64,
}

impl Default for GrcslTrainConfig {
    fn default() -> Self {
        GrcslTrainConfig {
            lambda: 2e-5,
            eta: 10.0,
            gamma: 0.5,
            xi: 1e-8,
            alpha0: 0.0,
            rho0: 1e-3,
            inner_epochs: 5,
            max_outer_iters: 30,
            learning_rate: 1e-3,
            batch_size: 16,
            max_grad_norm: 10.0,
            seed: 0,
        }
    }
}

impl GrcslTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 1.0) {
            return Err(Error::Config(format!("eta must be > 1, got {}", self.eta)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.rho0 > 0.0) {
            return Err(Error::Config(format!("rho0 must be > 0, got {}", self.rho0)));
        }
        if !(self.xi > 0.0) {
            return Err(Error::Config(format!("xi must be > 0, got {}", self.xi)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Outer-loop state of the augmented Lagrangian method.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugLagState {
    pub alpha: f64,
    pub rho: f64,
    pub iter: usize,
    pub last_constraint: f64,
}

impl AugLagState {
    pub fn new(cfg: &GrcslTrainConfig, initial_constraint: f64) -> Self {
        AugLagState {
            alpha: cfg.alpha0,
            rho: cfg.rho0,
            iter: 0,
            last_constraint: initial_constraint,
        }
    }
}

/// `α ← α + ρ S_new`; `ρ ← η ρ` if `S_new > γ S_old`.
pub fn auglag_update(state: &AugLagState, s_new: f64, cfg: &GrcslTrainConfig) -> AugLagState {
    debug_assert!(s_new >= 0.0);
    let alpha = state.alpha + state.rho * s_new;
    let rho = if s_new > cfg.gamma * state.last_constraint {
        cfg.eta * state.rho
    } else {
        state.rho
    };
    AugLagState {
        alpha,
        rho,
        iter: state.iter + 1,
        last_constraint: s_new,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OuterRecord {
    pub iter: usize,
    /// Mean loss `f` over training windows (deterministic graphs).
    pub f: f64,
    /// Mean constraint sum over training windows (deterministic graphs).
    pub s: f64,
    pub alpha: f64,
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    /// Row 0 is the state before training; row `k` holds the multiplier and
    /// penalty after the `k`-th update.
    pub records: Vec<OuterRecord>,
    pub converged: bool,
}

impl TrainHistory {
    pub fn final_constraint(&self) -> f64 {
        self.records.last().map_or(f64::INFINITY, |r| r.s)
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "outer_iter,f,S,alpha,rho")?;
        for r in &self.records {
            writeln!(out, "{},{:?},{:?},{:?},{:?}", r.iter, r.f, r.s, r.alpha, r.rho)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Mean `f` and mean `S` over windows with deterministic graphs.
pub fn evaluate_objective(
    model: &Grcsl,
    windows: &[Window],
    prior_hat: &Tensor,
    lambda: f64,
) -> Result<(f64, f64)> {
    if windows.is_empty() {
        return Err(Error::Data("no windows to evaluate".into()));
    }
    let mut f_sum = 0.0;
    let mut s_sum = 0.0;
    for w in windows {
        let mut g = Graph::new();
        let b = model.store.bind_frozen(&mut g);
        let rec = model.record_forward(&mut g, &b, w, prior_hat, &mut GraphMode::Eval)?;
        let (f, s) = record_window_objective(&mut g, &rec, lambda);
        f_sum += g.scalar(f);
        s_sum += g.scalar(s);
    }
    let k = windows.len() as f64;
    Ok((f_sum / k, s_sum / k))
}

fn ensure_finite(what: &str, v: f64, iter: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "non-finite {} ({}) at outer iteration {}",
            what, v, iter
        )))
    }
}

/// Trains the structure learner with the augmented Lagrangian method.
///
/// The inner subproblem runs `inner_epochs` shuffled mini-batch passes of
/// Adam with Gumbel-sigmoid graphs; the batch penalty uses the batch mean of
/// the per-window constraint sums. After each pass the mean `S` over the
/// training windows with deterministic graphs drives the multiplier update
/// and the stopping test. If `S` never drops below `ξ`, the parameters with
/// the smallest `S` are restored and `converged` is false.
pub fn train_grcsl(
    model: &mut Grcsl,
    train: &WindowSet,
    val: Option<&WindowSet>,
    prior: &PriorGraph,
    cfg: &GrcslTrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("no training windows".into()));
    }
    let prior_hat = model.prior_hat(prior)?;
    let mut rng = numerics::seeded_rng(cfg.seed);
    let mut opt = Adam::new(cfg.learning_rate).with_max_grad_norm(cfg.max_grad_norm);

    let (f0, s0) = evaluate_objective(model, &train.windows, &prior_hat, cfg.lambda)?;
    ensure_finite("loss", f0, 0)?;
    let mut state = AugLagState::new(cfg, s0);
    let mut records = vec![OuterRecord {
        iter: 0,
        f: f0,
        s: s0,
        alpha: state.alpha,
        rho: state.rho,
    }];
    info!("outer 0: f={:.6e} S={:.3e}", f0, s0);

    let mut best = (s0, model.store.clone());
    let mut converged = false;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for outer in 1..=cfg.max_outer_iters {
        for _ in 0..cfg.inner_epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                inner_step(model, &mut opt, train, batch, &prior_hat, &state, cfg, &mut rng, outer)?;
            }
        }
        let (f, s) = evaluate_objective(model, &train.windows, &prior_hat, cfg.lambda)?;
        ensure_finite("loss", f, outer)?;
        ensure_finite("constraint", s, outer)?;
        state = auglag_update(&state, s, cfg);
        records.push(OuterRecord {
            iter: outer,
            f,
            s,
            alpha: state.alpha,
            rho: state.rho,
        });
        match val {
            Some(v) if !v.is_empty() => {
                let (vf, vs) = evaluate_objective(model, &v.windows, &prior_hat, cfg.lambda)?;
                info!(
                    "outer {}: f={:.6e} S={:.3e} alpha={:.3e} rho={:.3e} | val f={:.6e} S={:.3e}",
                    outer, f, s, state.alpha, state.rho, vf, vs
                );
            }
            _ => info!(
                "outer {}: f={:.6e} S={:.3e} alpha={:.3e} rho={:.3e}",
                outer, f, s, state.alpha, state.rho
            ),
        }
        if s < best.0 {
            best = (s, model.store.clone());
        }
        if s < cfg.xi {
            converged = true;
            break;
        }
    }
    if !converged {
        if cfg.max_outer_iters > 0 {
            warn!(
                "constraint sum {:.3e} did not fall below xi = {:.1e} within {} outer iterations; keeping the parameters with S = {:.3e}",
                state.last_constraint, cfg.xi, cfg.max_outer_iters, best.0
            );
        }
        model.store = best.1;
    }
    Ok(TrainHistory { records, converged })
}

#[allow(clippy::too_many_arguments)]
fn inner_step(
    model: &mut Grcsl,
    opt: &mut Adam,
    train: &WindowSet,
    batch: &[usize],
    prior_hat: &Tensor,
    state: &AugLagState,
    cfg: &GrcslTrainConfig,
    rng: &mut numerics::SeededRng,
    outer: usize,
) -> Result<()> {
    let mut tapes = Vec::with_capacity(batch.len());
    let mut s_total = 0.0;
    for &idx in batch {
        let mut g = Graph::new();
        let b = model.store.bind(&mut g);
        let rec = model.record_forward(&mut g, &b, &train.windows[idx], prior_hat, &mut GraphMode::Train(rng))?;
        let (f, s) = record_window_objective(&mut g, &rec, cfg.lambda);
        ensure_finite("loss", g.scalar(f), outer)?;
        s_total += g.scalar(s);
        tapes.push((g, b, f, s));
    }
    let k = batch.len() as f64;
    let s_batch = s_total / k;
    // d/dΘ [mean f + α S + ρ/2 S²] = mean ∇f + (α + ρ S) mean ∇S
    let penalty_slope = state.alpha + state.rho * s_batch;
    let mut total = model.store.zeros_like();
    for (g, b, f, s) in tapes {
        let mut grads = g.backward_seeded(&[(f, 1.0 / k), (s, penalty_slope / k)]);
        for (acc, gr) in total.iter_mut().zip(b.collect(&mut grads, &model.store)) {
            acc.axpy(1.0, &gr);
        }
    }
    if total.iter().any(|t| !t.all_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite gradient at outer iteration {}",
            outer
        )));
    }
    opt.step(model.store.values_mut(), &total);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn h_of_zero_and_two_cycle() {
        assert_eq!(notears_h(&Tensor::zeros(&[4, 4])).unwrap(), 0.0);
        let b = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let want = 2.0 * 1f64.cosh() - 2.0;
        assert!((notears_h(&b).unwrap() - want).abs() < 1e-12);
        assert!((want - 1.086161).abs() < 1e-6);
        assert!(notears_h(&Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn loss_examples() {
        let n = 3;
        let zero_graphs = CausalGraphSeq {
            steps: vec![(Tensor::zeros(&[n, n]), Tensor::zeros(&[n, n])); 2],
        };
        let x = vec![Tensor::full(&[n, 2], 0.5); 2];
        let (f, _) = grcsl_loss(&x, &x, &zero_graphs, 2e-5).unwrap();
        assert_eq!(f, 0.0);

        let mut off = x.clone();
        off[0].set(1, 1, 2.5);
        let (f, parts) = grcsl_loss(&off, &x, &zero_graphs, 0.0).unwrap();
        assert!((f - 0.5 * 4.0 / 2.0).abs() < 1e-15);
        assert_eq!(parts.sparsity, 0.0);

        let ones = CausalGraphSeq {
            steps: vec![(Tensor::full(&[n, n], 1.0), Tensor::full(&[n, n], 1.0))],
        };
        let (f, parts) = grcsl_loss(&x[..1], &x[..1], &ones, 2e-5).unwrap();
        assert!((f - 3.6e-4).abs() < 1e-15);
        assert!((parts.sparsity - 3.6e-4).abs() < 1e-15);

        assert!(grcsl_loss(&x, &x[..1], &zero_graphs, 0.0).is_err());
    }

    #[test]
    fn objective_examples() {
        assert_eq!(auglag_objective(1.25, &[0.0, 0.0], 3.0, 7.0), 1.25);
        assert_eq!(auglag_objective(1.0, &[1.5, 0.5], 0.5, 1.0), 4.0);
    }

    #[test]
    fn update_examples() {
        let cfg = GrcslTrainConfig::default();
        let s = AugLagState {
            alpha: 0.0,
            rho: 1e-3,
            iter: 0,
            last_constraint: 1.0,
        };
        let up = auglag_update(&s, 0.6, &cfg);
        assert!((up.rho - 1e-2).abs() < 1e-18);
        let keep = auglag_update(&s, 0.4, &cfg);
        assert_eq!(keep.rho, 1e-3);
        assert_eq!(keep.iter, 1);
        let a = auglag_update(&s, 2.0, &cfg);
        assert!((a.alpha - 2e-3).abs() < 1e-18);
    }

    #[test]
    fn topological_order_detects_cycles() {
        let chain = Tensor::from_rows(&[vec![0.0, 0.0, 0.0], vec![0.9, 0.0, 0.0], vec![0.0, 0.7, 0.0]]).unwrap();
        let order = topological_order(&chain, 0.5).unwrap();
        assert_eq!(order, vec![0, 1, 2]);
        let mut cyc = chain.clone();
        cyc.set(0, 2, 0.6);
        assert!(topological_order(&cyc, 0.5).is_none());
        assert!(topological_order(&cyc, 0.65).is_some());
    }

    #[test]
    fn config_validation() {
        let mut c = GrcslTrainConfig::default();
        assert!(c.validate().is_ok());
        c.eta = 1.0;
        assert!(c.validate().is_err());
        c = GrcslTrainConfig::default();
        c.gamma = 1.0;
        assert!(c.validate().is_err());
    }
}
