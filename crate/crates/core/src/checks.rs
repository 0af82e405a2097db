//! Finite-difference gradient suite over every trainable operation.

use rand::Rng;

use crate::constraint::record_window_objective;
use crate::data::Window;
use crate::dgcpm::{Dgcpm, DgcpmConfig};
use crate::graphops;
use crate::grcsl::{CausalGraphSeq, GraphMode, Grcsl, GrcslConfig};
use crate::numerics::{grad_check, seeded_rng, Bindings, GradReport, ParamStore, Graph, Tensor, Var, DEFAULT_EPS};
use crate::Result;

/// Relative-error tolerance of the suite.
pub const SUITE_TOLERANCE: f64 = 1e-4;

fn small_grcsl_config() -> GrcslConfig {
    GrcslConfig {
        feature_width: 2,
        gconv_layers: 2,
        heads: 2,
        att_dim: 3,
        gru_hidden: 4,
        sem_width: 3,
        mlp_hidden: 4,
        head_bias_init: -1.5,
        tau: 1.0,
        ..GrcslConfig::new(4)
    }
}

fn random(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// A window with random observed speeds and time of day.
pub fn random_window(rng: &mut impl Rng, t_in: usize, t_out: usize, n: usize) -> Window {
    Window {
        start_index: 0,
        start_ts: 0,
        values: random(rng, t_in, n, -1.5, 1.5),
        mask: Tensor::full(&[t_in, n], 1.0),
        tod: random(rng, t_in, n, 0.0, 1.0),
        target: random(rng, t_out, n, -1.5, 1.5),
        target_mask: Tensor::full(&[t_out, n], 1.0),
    }
}

/// Shifts every parameter so zero-initialised biases do not sit on a ReLU kink.
fn jitter(store: &mut ParamStore, rng: &mut impl Rng) {
    for t in store.values_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-1.0..1.0);
        }
    }
}

/// Runs `grad_check` with the store's parameters as the leading inputs.
fn check_with_params<F>(name: &str, params: &[Tensor], extra: &[Tensor], op: F) -> GradReport
where
    F: Fn(&mut Graph, &Bindings, &[Var]) -> Var,
{
    let k = params.len();
    let inputs: Vec<Tensor> = params.iter().chain(extra).cloned().collect();
    grad_check(
        name,
        |g, vars| {
            let b = Bindings::from_vars(vars[..k].to_vec());
            op(g, &b, &vars[k..])
        },
        &inputs,
        DEFAULT_EPS,
    )
}

/// Gradient reports for attention, the GRU step, the graph head, all graph
/// convolutions, reconstruction, the acyclicity functional, the full
/// structure-learning objective and the forecaster.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradReport>> {
    let mut rng = seeded_rng(seed);
    let cfg = small_grcsl_config();
    let n = cfg.num_nodes;
    let d = cfg.feature_dim();
    let mut model = Grcsl::new(cfg.clone(), &mut rng)?;
    jitter(&mut model.store, &mut rng);
    let params = model.store.values();
    let mut reports = Vec::new();

    let q = random(&mut rng, n, d, -1.0, 1.0);
    let k = random(&mut rng, n, d, -1.0, 1.0);
    reports.push(check_with_params("attention", params, &[q, k], |g, b, x| {
        model.record_msdot(g, b, x[0], x[1])
    }));

    let c = random(&mut rng, n * n, cfg.heads, -1.0, 1.0);
    let h = random(&mut rng, n * n, cfg.gru_hidden, -0.5, 0.5);
    reports.push(check_with_params("gru_step", params, &[c, h.clone()], |g, b, x| {
        model.record_gru_step(g, b, &model.gru[0], x[0], x[1])
    }));

    reports.push(check_with_params("graph_head", params, &[h], |g, b, x| {
        let logits = model.record_head_logits(g, b, &model.head[1], x[0]);
        model.record_activation(g, logits, &mut GraphMode::Eval, true)
    }));

    let prior = graphops::normalize_symmetric(&random(&mut rng, n, n, 0.0, 1.0))?;
    let v = random(&mut rng, n, 1, -1.0, 1.0);
    reports.push(check_with_params("gconv_spectral", params, &[v], |g, b, x| {
        let p = g.input(prior.clone());
        graphops::gconv_spectral_var(g, b, &model.feature.gconv, x[0], p)
    }));

    let x_t = random(&mut rng, n, d, -1.0, 1.0);
    let x_prev = random(&mut rng, n, d, -1.0, 1.0);
    let b0 = random(&mut rng, n, n, 0.1, 1.0);
    let b1 = random(&mut rng, n, n, 0.1, 1.0);
    reports.push(check_with_params(
        "gconv_spatial",
        params,
        &[x_t.clone(), b0.clone()],
        |g, b, x| graphops::gconv_spatial_var(g, b, &model.sem.gconv0, x[0], x[1]),
    ));

    reports.push(check_with_params(
        "sem_reconstruction",
        params,
        &[x_prev, x_t, b0.clone(), b1.clone()],
        |g, b, x| model.record_sem(g, b, x[0], x[1], x[2], x[3]),
    ));

    reports.push(grad_check(
        "notears_h",
        |g, x| g.notears_h(x[0]),
        &[random(&mut rng, n, n, -1.0, 1.0)],
        DEFAULT_EPS,
    ));

    let window = random_window(&mut rng, 4, 2, n);
    let prior_hat = model.prior_hat(&crate::data::PriorGraph {
        weights: random(&mut rng, n, n, 0.0, 1.0),
        sensor_ids: (0..n).map(|i| i.to_string()).collect(),
    })?;
    reports.push(check_with_params("grcsl_objective", params, &[], |g, b, _| {
        let rec = model
            .record_forward(g, b, &window, &prior_hat, &mut GraphMode::Eval)
            .expect("window matches the model");
        let (f, s) = record_window_objective(g, &rec, 2e-5);
        let s = g.scale(s, 0.7);
        g.add(f, s)
    }));

    let fc = DgcpmConfig {
        dynamic_width: 3,
        prior_width: 2,
        gconv_layers: 2,
        ..DgcpmConfig::new(n, 4, 2)
    };
    let mut forecaster = Dgcpm::new(fc, &mut rng)?;
    jitter(&mut forecaster.store, &mut rng);
    let fparams = forecaster.store.values();
    let x_in = random(&mut rng, n, 2, -1.0, 1.0);
    reports.push(check_with_params(
        "dygconv",
        fparams,
        &[x_in, b0, b1],
        |g, b, x| {
            let eye = g.input(Tensor::eye(n));
            let p = &forecaster.params;
            graphops::dygconv_var(g, b, &p.dy_inter, &p.dy_intra, x[0], x[1], x[2], eye)
        },
    ));

    let graphs = CausalGraphSeq {
        steps: (0..3)
            .map(|_| (random(&mut rng, n, n, 0.0, 1.0), random(&mut rng, n, n, 0.0, 1.0)))
            .collect(),
    };
    reports.push(check_with_params("dgcpm_forward", fparams, &[], |g, b, _| {
        forecaster
            .record_forward(g, b, &window, &graphs, &prior_hat)
            .expect("window matches the forecaster")
    }));

    Ok(reports)
}
