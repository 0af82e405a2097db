//! Randomised oracle comparisons; each returns the worst absolute gap over
//! `INSTANCES` small instances.

use super::*;
use tvdbn::checks::random_window;
use tvdbn::dgcpm::{Dgcpm, DgcpmConfig};
use tvdbn::graphops::{self, GconvParams};
use tvdbn::grcsl::{CausalGraphSeq, Grcsl, GrcslConfig};
use tvdbn::numerics::{seeded_rng, ParamStore};

pub const INSTANCES: u64 = 20;

fn worst(f: impl Fn(u64) -> f64) -> f64 {
    (0..INSTANCES).map(f).fold(0.0, f64::max)
}

pub fn gconv_spectral_gap() -> f64 {
    worst(|seed| {
        let mut rng = seeded_rng(seed);
        let n = 2 + seed as usize % 6;
        let mut store = ParamStore::new();
        let p = GconvParams::init(&mut store, "g", 3, 4, 1 + seed as usize % 3, &mut rng);
        let x = random_tensor(&mut rng, n, 3, -1.0, 1.0);
        let a = random_tensor(&mut rng, n, n, 0.0, 1.0);
        let got = graphops::gconv_spectral(&store, &p, &x, &a).unwrap();
        let want = layer_stack(&store, &p, &to_mat(&x), &sym_norm(&to_mat(&a)));
        max_abs_diff(&want, &got)
    })
}

pub fn gconv_spatial_gap() -> f64 {
    worst(|seed| {
        let mut rng = seeded_rng(100 + seed);
        let n = 2 + seed as usize % 6;
        let mut store = ParamStore::new();
        let p = GconvParams::init(&mut store, "g", 2, 5, 1 + seed as usize % 3, &mut rng);
        let x = random_tensor(&mut rng, n, 2, -1.0, 1.0);
        let mut a = random_tensor(&mut rng, n, n, 0.0, 1.0);
        // one all-zero row must stay zero after normalisation
        for j in 0..n {
            a.set(0, j, 0.0);
        }
        let got = graphops::gconv_spatial(&store, &p, &x, &a).unwrap();
        let want = layer_stack(&store, &p, &to_mat(&x), &row_norm(&to_mat(&a)));
        max_abs_diff(&want, &got)
    })
}

pub fn dygconv_gap() -> f64 {
    worst(|seed| {
        let mut rng = seeded_rng(200 + seed);
        let n = 2 + seed as usize % 6;
        let mut store = ParamStore::new();
        let inter = GconvParams::init(&mut store, "a", 2, 4, 2, &mut rng);
        let intra = GconvParams::init(&mut store, "b", 4, 4, 2, &mut rng);
        let x = random_tensor(&mut rng, n, 2, -1.0, 1.0);
        let b0 = random_tensor(&mut rng, n, n, 0.0, 1.0);
        let b1 = random_tensor(&mut rng, n, n, 0.0, 1.0);
        let got = graphops::dygconv(&store, &inter, &intra, &x, &b0, &b1).unwrap();
        let want = dygconv(&store, &inter, &intra, &to_mat(&x), &to_mat(&b0), &to_mat(&b1));
        max_abs_diff(&want, &got)
    })
}

/// Both lag cells.
pub fn gru_step_gap() -> f64 {
    worst(|seed| {
        let mut rng = seeded_rng(300 + seed);
        let n = 2 + seed as usize % 4;
        let cfg = GrcslConfig {
            heads: 3,
            gru_hidden: 5,
            ..GrcslConfig::new(n)
        };
        let model = Grcsl::new(cfg, &mut rng).unwrap();
        let c = random_tensor(&mut rng, n * n, 3, -1.0, 1.0);
        let h = random_tensor(&mut rng, n * n, 5, -1.0, 1.0);
        (0..2)
            .map(|lag| {
                let got = model.gru_step(lag, &c, &h).unwrap();
                max_abs_diff(&gru_step(&model.store, &model.gru[lag], &to_mat(&c), &to_mat(&h)), &got)
            })
            .fold(0.0, f64::max)
    })
}

pub fn dgcpm_forward_gap() -> f64 {
    worst(|seed| {
        let mut rng = seeded_rng(400 + seed);
        let n = 2 + seed as usize % 5;
        let (t_in, t_out) = (3 + seed as usize % 3, 1 + seed as usize % 4);
        let cfg = DgcpmConfig {
            dynamic_width: 3,
            prior_width: 2,
            gconv_layers: 2,
            ..DgcpmConfig::new(n, t_in, t_out)
        };
        let mut model = Dgcpm::new(cfg, &mut rng).unwrap();
        let bias = random_tensor(&mut rng, 1, t_out, -1.0, 1.0);
        *model.store.get_mut(model.params.b_out) = bias;
        let w = random_window(&mut rng, t_in, t_out, n);
        let graphs = CausalGraphSeq {
            steps: (1..t_in)
                .map(|_| (random_tensor(&mut rng, n, n, 0.0, 1.0), random_tensor(&mut rng, n, n, 0.0, 1.0)))
                .collect(),
        };
        let prior = graphops::normalize_symmetric(&random_tensor(&mut rng, n, n, 0.0, 1.0)).unwrap();
        let got = model.forward(&w, &graphs, &prior).unwrap();
        max_abs_diff(&dgcpm_forward(&model, &w, &graphs, &to_mat(&prior)), &got)
    })
}
