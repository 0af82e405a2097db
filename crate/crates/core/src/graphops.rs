//! Graph convolutions with residual skip connections.
//!
//! All three share one layer stack: `H0 = X Θ0`, then for `l = 1..=L`
//! `Hl = ReLU(Â H(l-1) Θl) + H(l-1)`. They differ only in how `Â` is built:
//!
//! - spectral: `Â = D^-1/2 (A + I) D^-1/2` on the constant prior graph,
//! - spatial: `Â = D^-1 A` (row-normalised, zero rows stay zero),
//! - dynamic: a spatial pass over `B1 + I` followed by one over `B0 + I`.
//!
//! There are no bias terms.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{autodiff, Bindings, Graph, ParamId, ParamStore, Tensor, Var};

/// `Θ0: d_in x width` followed by `L` square `width x width` layers.
#[derive(Clone, Debug, PartialEq)]
pub struct GconvParams {
    pub theta: Vec<ParamId>,
}

impl GconvParams {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        width: usize,
        layers: usize,
        rng: &mut R,
    ) -> Self {
        assert!(layers >= 1, "graph convolution needs at least one layer");
        let mut theta = vec![store.add_glorot(format!("{}.theta0", prefix), d_in, width, rng)];
        for l in 1..=layers {
            theta.push(store.add_glorot(format!("{}.theta{}", prefix, l), width, width, rng));
        }
        GconvParams { theta }
    }

    pub fn layers(&self) -> usize {
        self.theta.len() - 1
    }

    pub fn d_in(&self, store: &ParamStore) -> usize {
        store.get(self.theta[0]).rows()
    }

    pub fn width(&self, store: &ParamStore) -> usize {
        store.get(self.theta[0]).cols()
    }
}

/// `D^-1/2 (A + I) D^-1/2` with `D_ii = sum_j (A + I)_ij`.
pub fn normalize_symmetric(a: &Tensor) -> Result<Tensor> {
    require_adjacency(a)?;
    let n = a.rows();
    let tilde = a.add(&Tensor::eye(n))?;
    let deg: Vec<f64> = (0..n).map(|i| tilde.row(i).iter().sum()).collect();
    Ok(Tensor::from_fn(n, n, |i, j| tilde.get(i, j) / (deg[i] * deg[j]).sqrt()))
}

/// `D^-1 A`; rows summing to zero stay zero.
pub fn normalize_row(a: &Tensor) -> Result<Tensor> {
    require_adjacency(a)?;
    Ok(autodiff::row_normalize(a))
}

fn require_adjacency(a: &Tensor) -> Result<()> {
    if !a.is_square() {
        return Err(Error::shape(format!("adjacency must be square, got {:?}", a.shape())));
    }
    if a.data().iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
        return Err(Error::Data("adjacency entries must be finite and non-negative".into()));
    }
    Ok(())
}

fn check_shapes(store: &ParamStore, p: &GconvParams, x: &Tensor, a: &Tensor) -> Result<()> {
    if !x.is_matrix() {
        return Err(Error::shape("node features must be rank 2"));
    }
    let n = x.rows();
    a.require_matrix(n, n, "adjacency")?;
    if p.theta.len() < 2 {
        return Err(Error::shape("graph convolution needs L >= 1"));
    }
    let d_in = p.d_in(store);
    if x.cols() != d_in {
        return Err(Error::shape(format!(
            "node features have width {}, Θ0 expects {}",
            x.cols(),
            d_in
        )));
    }
    let w = p.width(store);
    for &t in &p.theta[1..] {
        store.get(t).require_matrix(w, w, "hidden graph convolution layer")?;
    }
    Ok(())
}

/// Residual layer stack over an already normalised adjacency node.
pub fn gconv_layers(g: &mut Graph, b: &Bindings, p: &GconvParams, x: Var, a_hat: Var) -> Var {
    let mut h = g.matmul(x, b[p.theta[0]]);
    for &theta in &p.theta[1..] {
        let agg = g.matmul(a_hat, h);
        let lin = g.matmul(agg, b[theta]);
        let act = g.relu(lin);
        h = g.add(act, h);
    }
    h
}

/// Spectral convolution; `prior_hat` must come from [`normalize_symmetric`].
pub fn gconv_spectral_var(
    g: &mut Graph,
    b: &Bindings,
    p: &GconvParams,
    x: Var,
    prior_hat: Var,
) -> Var {
    gconv_layers(g, b, p, x, prior_hat)
}

/// Spatial convolution on a (possibly learned) adjacency node.
pub fn gconv_spatial_var(g: &mut Graph, b: &Bindings, p: &GconvParams, x: Var, adj: Var) -> Var {
    let a_hat = g.row_normalize(adj);
    gconv_layers(g, b, p, x, a_hat)
}

/// Two-step dynamic convolution: inter-slice pass over `B1 + I`, then
/// intra-slice pass over `B0 + I`. `eye` is an `N x N` identity node.
#[allow(clippy::too_many_arguments)]
pub fn dygconv_var(
    g: &mut Graph,
    b: &Bindings,
    p_inter: &GconvParams,
    p_intra: &GconvParams,
    x_prev: Var,
    b0: Var,
    b1: Var,
    eye: Var,
) -> Var {
    let a1 = g.add(b1, eye);
    let x_tilde = gconv_spatial_var(g, b, p_inter, x_prev, a1);
    let a0 = g.add(b0, eye);
    gconv_spatial_var(g, b, p_intra, x_tilde, a0)
}

pub fn gconv_spectral(store: &ParamStore, p: &GconvParams, x: &Tensor, a: &Tensor) -> Result<Tensor> {
    check_shapes(store, p, x, a)?;
    let a_hat = normalize_symmetric(a)?;
    let mut g = Graph::new();
    let b = store.bind_frozen(&mut g);
    let xv = g.input(x.clone());
    let av = g.input(a_hat);
    let out = gconv_spectral_var(&mut g, &b, p, xv, av);
    Ok(g.value(out).clone())
}

pub fn gconv_spatial(store: &ParamStore, p: &GconvParams, x: &Tensor, a: &Tensor) -> Result<Tensor> {
    check_shapes(store, p, x, a)?;
    require_adjacency(a)?;
    let mut g = Graph::new();
    let b = store.bind_frozen(&mut g);
    let xv = g.input(x.clone());
    let av = g.input(a.clone());
    let out = gconv_spatial_var(&mut g, &b, p, xv, av);
    Ok(g.value(out).clone())
}

pub fn dygconv(
    store: &ParamStore,
    p_inter: &GconvParams,
    p_intra: &GconvParams,
    x_prev: &Tensor,
    b0: &Tensor,
    b1: &Tensor,
) -> Result<Tensor> {
    check_shapes(store, p_inter, x_prev, b1)?;
    let n = x_prev.rows();
    b0.require_matrix(n, n, "intra-slice graph")?;
    require_adjacency(b0)?;
    require_adjacency(b1)?;
    if p_intra.d_in(store) != p_inter.width(store) {
        return Err(Error::shape(format!(
            "intra-slice Θ0 expects width {}, inter-slice pass produces {}",
            p_intra.d_in(store),
            p_inter.width(store)
        )));
    }
    let mut g = Graph::new();
    let b = store.bind_frozen(&mut g);
    let xv = g.input(x_prev.clone());
    let b0v = g.input(b0.clone());
    let b1v = g.input(b1.clone());
    let eye = g.input(Tensor::eye(n));
    let out = dygconv_var(&mut g, &b, p_inter, p_intra, xv, b0v, b1v, eye);
    Ok(g.value(out).clone())
}
