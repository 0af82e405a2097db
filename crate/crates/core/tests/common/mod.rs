#![allow(dead_code)]

//! Naive reference implementations written directly from the formulas,
//! with plain loops over `Vec<Vec<f64>>`.

pub mod cases;

use rand::Rng;
use tvdbn::data::Window;
use tvdbn::graphops::GconvParams;
use tvdbn::grcsl::{CausalGraphSeq, GruLagCell};
use tvdbn::numerics::{ParamStore, Tensor};

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i][l] * b[l][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn max_abs_diff(a: &Mat, t: &Tensor) -> f64 {
    let mut worst: f64 = 0.0;
    assert_eq!(a.len(), t.rows());
    for (i, row) in a.iter().enumerate() {
        assert_eq!(row.len(), t.cols());
        for (j, v) in row.iter().enumerate() {
            worst = worst.max((v - t.get(i, j)).abs());
        }
    }
    worst
}

pub fn sym_norm(a: &Mat) -> Mat {
    let n = a.len();
    let mut t = a.clone();
    for (i, row) in t.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    let d: Vec<f64> = t.iter().map(|r| r.iter().sum()).collect();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            out[i][j] = t[i][j] / (d[i] * d[j]).sqrt();
        }
    }
    out
}

pub fn row_norm(a: &Mat) -> Mat {
    a.iter()
        .map(|r| {
            let s: f64 = r.iter().sum();
            r.iter().map(|v| if s == 0.0 { 0.0 } else { v / s }).collect()
        })
        .collect()
}

/// `H0 = X Θ0`, `Hl = ReLU(Â H(l-1) Θl) + H(l-1)`.
pub fn layer_stack(store: &ParamStore, p: &GconvParams, x: &Mat, a_hat: &Mat) -> Mat {
    let mut h = matmul(x, &to_mat(store.get(p.theta[0])));
    for &id in &p.theta[1..] {
        let lin = matmul(&matmul(a_hat, &h), &to_mat(store.get(id)));
        for i in 0..h.len() {
            for j in 0..h[0].len() {
                h[i][j] += lin[i][j].max(0.0);
            }
        }
    }
    h
}

pub fn plus_eye(a: &Mat) -> Mat {
    let mut out = a.clone();
    for (i, row) in out.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    out
}

pub fn dygconv(store: &ParamStore, inter: &GconvParams, intra: &GconvParams, x: &Mat, b0: &Mat, b1: &Mat) -> Mat {
    let xt = layer_stack(store, inter, x, &row_norm(&plus_eye(b1)));
    layer_stack(store, intra, &xt, &row_norm(&plus_eye(b0)))
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `r = σ(cW_cr + hW_hr + b_r)`, `z = σ(cW_cz + hW_hz + b_z)`,
/// `h~ = tanh(cW_ch + (r∘h)W_hh + b_h)`, `h' = z∘h + (1-z)∘h~`.
pub fn gru_step(store: &ParamStore, cell: &GruLagCell, c: &Mat, h: &Mat) -> Mat {
    let w = |id| to_mat(store.get(id));
    let (rows, hr) = (h.len(), h[0].len());
    let gate = |wc: &Mat, hh: &Mat, wh: &Mat, bias: &Mat| -> Mat {
        let a = matmul(c, wc);
        let b = matmul(hh, wh);
        (0..rows)
            .map(|i| (0..hr).map(|j| a[i][j] + b[i][j] + bias[0][j]).collect())
            .collect()
    };
    let r = gate(&w(cell.w_cr), h, &w(cell.w_hr), &w(cell.b_r));
    let z = gate(&w(cell.w_cz), h, &w(cell.w_hz), &w(cell.b_z));
    let mut rh = h.clone();
    for i in 0..rows {
        for j in 0..hr {
            rh[i][j] = sigmoid(r[i][j]) * h[i][j];
        }
    }
    let cand = gate(&w(cell.w_ch), &rh, &w(cell.w_hh), &w(cell.b_h));
    let mut out = h.clone();
    for i in 0..rows {
        for j in 0..hr {
            let zz = sigmoid(z[i][j]);
            out[i][j] = zz * h[i][j] + (1.0 - zz) * cand[i][j].tanh();
        }
    }
    out
}

/// Per step `s = 1..T_in-1`: dynamic convolution of `[v_{s-1}, tod_{s-1}]`
/// on `(B⁰_s, B¹_s)` next to the prior-graph convolution of `v_s`; all
/// steps are concatenated per node and read out to `T_out x N`.
pub fn dgcpm_forward(model: &tvdbn::dgcpm::Dgcpm, w: &Window, graphs: &CausalGraphSeq, prior_hat: &Mat) -> Mat {
    let store = &model.store;
    let p = &model.params;
    let n = w.num_nodes();
    let mut z: Mat = vec![Vec::new(); n];
    for (k, (b0, b1)) in graphs.steps.iter().enumerate() {
        let s = k + 1;
        let x: Mat = (0..n).map(|i| vec![w.values.get(s - 1, i), w.tod.get(s - 1, i)]).collect();
        let h = dygconv(store, &p.dy_inter, &p.dy_intra, &x, &to_mat(b0), &to_mat(b1));
        let v: Mat = (0..n).map(|i| vec![w.values.get(s, i)]).collect();
        let sp = layer_stack(store, &p.prior_gconv, &v, prior_hat);
        for i in 0..n {
            z[i].extend_from_slice(&h[i]);
            z[i].extend_from_slice(&sp[i]);
        }
    }
    let out = matmul(&z, &to_mat(store.get(p.w_out)));
    let bias = store.get(p.b_out);
    let t_out = out[0].len();
    (0..t_out).map(|s| (0..n).map(|i| out[i][s] + bias.get(0, s)).collect()).collect()
}

/// Depth-first search for a directed cycle over `adj[i][j] != 0`.
pub fn has_cycle(adj: &Mat) -> bool {
    fn visit(u: usize, adj: &Mat, state: &mut [u8]) -> bool {
        state[u] = 1;
        for v in 0..adj.len() {
            if adj[u][v] != 0.0 {
                if state[v] == 1 || (state[v] == 0 && visit(v, adj, state)) {
                    return true;
                }
            }
        }
        state[u] = 2;
        false
    }
    let mut state = vec![0u8; adj.len()];
    (0..adj.len()).any(|u| state[u] == 0 && visit(u, adj, &mut state))
}

/// Off-diagonal binary digraph from the low bits of `code`.
pub fn digraph_from_bits(n: usize, code: u64) -> Tensor {
    let mut bit = 0;
    let mut t = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                if code >> bit & 1 == 1 {
                    t.set(i, j, 1.0);
                }
                bit += 1;
            }
        }
    }
    t
}
