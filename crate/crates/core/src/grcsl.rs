//! Recurrent causal structure learner.
//!
//! For one input window of `T_in` steps the learner
//!
//! 1. extracts node features `X_t = V_t ‖ T_t ‖ S_t`, where `S_t` is a
//!    spectral convolution of the speeds over the prior graph,
//! 2. scores every ordered node pair with multi-head scaled dot products,
//!    within a step (`C⁰_t` from `X_t, X_t`) and across one lag (`C¹_t` from
//!    `X_t, X_{t-1}`), flattened row-major so row `i*N + j` tracks edge
//!    `(i, j)`,
//! 3. runs one GRU per lag over those `N² x h` sequences,
//! 4. maps each hidden state through three 1x1 convolutions to edge logits
//!    and squashes them with a Gumbel-sigmoid (training) or a tempered
//!    sigmoid (evaluation); intra-slice diagonals are forced to zero,
//! 5. reconstructs `X_t` from the emitted graphs with a graph-convolutional
//!    structural equation model.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Gumbel};

use crate::data::{PriorGraph, Window};
use crate::error::{Error, Result};
use crate::graphops::{self, GconvParams};
use crate::numerics::{Bindings, Graph, ParamId, ParamStore, SeededRng, Tensor, Var};

/// Architecture hyperparameters of the structure learner.
#[derive(Clone, Debug, PartialEq)]
pub struct GrcslConfig {
    pub num_nodes: usize,
    /// Width `d_s` of the prior-graph features.
    pub feature_width: usize,
    /// Layer count `L` of every graph convolution.
    pub gconv_layers: usize,
    pub heads: usize,
    pub att_dim: usize,
    pub gru_hidden: usize,
    /// Hidden width of the reconstruction graph convolutions.
    pub sem_width: usize,
    pub mlp_hidden: usize,
    pub tau: f64,
    /// Initial bias of the last 1x1 convolution.
    pub head_bias_init: f64,
    /// Feed the prior graph into feature extraction; when false the spectral
    /// branch sees an empty graph.
    pub use_prior: bool,
    /// Drop the node's own current features (the `XΘ0` residual term) from
    /// the intra-slice reconstruction branch.
    pub sem_exclude_self: bool,
}

impl GrcslConfig {
    pub fn new(num_nodes: usize) -> Self {
        GrcslConfig {
            num_nodes,
            feature_width: 8,
            gconv_layers: 4,
            heads: 4,
            att_dim: 16,
            gru_hidden: 32,
            sem_width: 16,
            mlp_hidden: 32,
            tau: 0.2,
            head_bias_init: -1.0,
            use_prior: true,
            sem_exclude_self: false,
        }
    }

    /// Feature width `D = 2 + d_s`.
    pub fn feature_dim(&self) -> usize {
        2 + self.feature_width
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_nodes", self.num_nodes),
            ("feature_width", self.feature_width),
            ("gconv_layers", self.gconv_layers),
            ("heads", self.heads),
            ("att_dim", self.att_dim),
            ("gru_hidden", self.gru_hidden),
            ("sem_width", self.sem_width),
            ("mlp_hidden", self.mlp_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{} must be >= 1", name)));
            }
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }

    pub fn to_meta(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("model".into(), "grcsl".into());
        m.insert("num_nodes".into(), self.num_nodes.to_string());
        m.insert("feature_width".into(), self.feature_width.to_string());
        m.insert("gconv_layers".into(), self.gconv_layers.to_string());
        m.insert("heads".into(), self.heads.to_string());
        m.insert("att_dim".into(), self.att_dim.to_string());
        m.insert("gru_hidden".into(), self.gru_hidden.to_string());
        m.insert("sem_width".into(), self.sem_width.to_string());
        m.insert("mlp_hidden".into(), self.mlp_hidden.to_string());
        m.insert("tau".into(), format!("{:?}", self.tau));
        m.insert("head_bias_init".into(), format!("{:?}", self.head_bias_init));
        m.insert("use_prior".into(), self.use_prior.to_string());
        m.insert("sem_exclude_self".into(), self.sem_exclude_self.to_string());
        m
    }

    pub fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        if meta.get("model").map(String::as_str) != Some("grcsl") {
            return Err(Error::Checkpoint("not a structure-learner checkpoint".into()));
        }
        let get = |k: &str| -> Result<&String> {
            meta.get(k)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint is missing meta '{}'", k)))
        };
        let int = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("meta '{}' is not an integer", k)))
        };
        let real = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("meta '{}' is not a number", k)))
        };
        let flag = |k: &str| -> Result<bool> {
            get(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("meta '{}' is not a boolean", k)))
        };
        Ok(GrcslConfig {
            num_nodes: int("num_nodes")?,
            feature_width: int("feature_width")?,
            gconv_layers: int("gconv_layers")?,
            heads: int("heads")?,
            att_dim: int("att_dim")?,
            gru_hidden: int("gru_hidden")?,
            sem_width: int("sem_width")?,
            mlp_hidden: int("mlp_hidden")?,
            tau: real("tau")?,
            head_bias_init: real("head_bias_init")?,
            use_prior: flag("use_prior")?,
            sem_exclude_self: flag("sem_exclude_self")?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureParams {
    pub gconv: GconvParams,
}

/// Independent query/key projections per head.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnParams {
    pub w_q: Vec<ParamId>,
    pub w_k: Vec<ParamId>,
    pub att_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruLagCell {
    pub w_cr: ParamId,
    pub w_cz: ParamId,
    pub w_ch: ParamId,
    pub w_hr: ParamId,
    pub w_hz: ParamId,
    pub w_hh: ParamId,
    pub b_r: ParamId,
    pub b_z: ParamId,
    pub b_h: ParamId,
}

/// Three 1x1 convolutions over the hidden channels: `H_r -> H_r -> H_r -> 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphHead {
    pub weights: [ParamId; 3],
    pub biases: [ParamId; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemParams {
    pub gconv0: GconvParams,
    pub gconv1: GconvParams,
    pub mlp_w1: ParamId,
    pub mlp_b1: ParamId,
    pub mlp_w2: ParamId,
    pub mlp_b2: ParamId,
}

/// One `(B⁰_t, B¹_t)` pair per window step `t = 2..=T_in`.
#[derive(Clone, Debug, PartialEq)]
pub struct CausalGraphSeq {
    pub steps: Vec<(Tensor, Tensor)>,
}

impl CausalGraphSeq {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// How edge probabilities are produced from logits.
pub enum GraphMode<'a> {
    /// `σ(ℓ/τ)`, deterministic.
    Eval,
    /// `σ((ℓ + g¹ - g²)/τ)` with fresh standard-Gumbel draws.
    Train(&'a mut SeededRng),
}

/// Graph nodes produced by one recorded forward pass.
pub struct RecordedWindow {
    /// `X_t` for every window step.
    pub features: Vec<Var>,
    /// `(B⁰, B¹)` for steps `2..=T_in`.
    pub graphs: Vec<(Var, Var)>,
    /// `X̂_t` for steps `2..=T_in`.
    pub recon: Vec<Var>,
    /// Per-step `N x D` loss weights: the observation mask on the speed
    /// column, ones elsewhere.
    pub recon_weights: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grcsl {
    pub config: GrcslConfig,
    pub store: ParamStore,
    pub feature: FeatureParams,
    pub attn: AttnParams,
    pub gru: [GruLagCell; 2],
    pub head: [GraphHead; 2],
    pub sem: SemParams,
}

impl Grcsl {
    pub fn new<R: Rng>(config: GrcslConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let c = &config;
        let d = c.feature_dim();
        let feature = FeatureParams {
            gconv: GconvParams::init(&mut store, "feature", 1, c.feature_width, c.gconv_layers, rng),
        };
        let mut w_q = Vec::new();
        let mut w_k = Vec::new();
        for h in 0..c.heads {
            w_q.push(store.add_glorot(format!("attn.wq{}", h), d, c.att_dim, rng));
            w_k.push(store.add_glorot(format!("attn.wk{}", h), d, c.att_dim, rng));
        }
        let attn = AttnParams {
            w_q,
            w_k,
            att_dim: c.att_dim,
        };
        let gru_cell = |k: usize, store: &mut ParamStore, rng: &mut R| {
            let hr = c.gru_hidden;
            let bias = |store: &mut ParamStore, name: &str| {
                store.add(format!("gru{}.{}", k, name), Tensor::zeros(&[1, hr]))
            };
            GruLagCell {
                w_cr: store.add_glorot(format!("gru{}.w_cr", k), c.heads, hr, rng),
                w_cz: store.add_glorot(format!("gru{}.w_cz", k), c.heads, hr, rng),
                w_ch: store.add_glorot(format!("gru{}.w_ch", k), c.heads, hr, rng),
                w_hr: store.add_glorot(format!("gru{}.w_hr", k), hr, hr, rng),
                w_hz: store.add_glorot(format!("gru{}.w_hz", k), hr, hr, rng),
                w_hh: store.add_glorot(format!("gru{}.w_hh", k), hr, hr, rng),
                b_r: bias(store, "b_r"),
                b_z: bias(store, "b_z"),
                b_h: bias(store, "b_h"),
            }
        };
        let gru = [gru_cell(0, &mut store, rng), gru_cell(1, &mut store, rng)];
        let graph_head = |k: usize, store: &mut ParamStore, rng: &mut R| {
            let hr = c.gru_hidden;
            GraphHead {
                weights: [
                    store.add_glorot(format!("head{}.w1", k), hr, hr, rng),
                    store.add_glorot(format!("head{}.w2", k), hr, hr, rng),
                    store.add_glorot(format!("head{}.w3", k), hr, 1, rng),
                ],
                biases: [
                    store.add(format!("head{}.b1", k), Tensor::zeros(&[1, hr])),
                    store.add(format!("head{}.b2", k), Tensor::zeros(&[1, hr])),
                    store.add(format!("head{}.b3", k), Tensor::full(&[1, 1], c.head_bias_init)),
                ],
            }
        };
        let head = [graph_head(0, &mut store, rng), graph_head(1, &mut store, rng)];
        let sem = SemParams {
            gconv0: GconvParams::init(&mut store, "sem.gconv0", d, c.sem_width, c.gconv_layers, rng),
            gconv1: GconvParams::init(&mut store, "sem.gconv1", d, c.sem_width, c.gconv_layers, rng),
            mlp_w1: store.add_glorot("sem.mlp_w1", c.sem_width, c.mlp_hidden, rng),
            mlp_b1: store.add("sem.mlp_b1", Tensor::zeros(&[1, c.mlp_hidden])),
            mlp_w2: store.add_glorot("sem.mlp_w2", c.mlp_hidden, d, rng),
            mlp_b2: store.add("sem.mlp_b2", Tensor::zeros(&[1, d])),
        };
        Ok(Grcsl {
            config,
            store,
            feature,
            attn,
            gru,
            head,
            sem,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.store.save(path, &self.config.to_meta())
    }

    /// Rebuilds the architecture recorded in the checkpoint and loads its
    /// weights.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let meta = text
            .lines()
            .filter_map(|l| l.strip_prefix("meta "))
            .filter_map(|l| l.split_once(' '))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let config = GrcslConfig::from_meta(&meta)?;
        let mut model = Grcsl::new(config, &mut crate::numerics::seeded_rng(0))?;
        model.store.load_text(&text)?;
        Ok(model)
    }

    /// Normalised prior adjacency used by feature extraction.
    pub fn prior_hat(&self, prior: &PriorGraph) -> Result<Tensor> {
        let n = self.config.num_nodes;
        if prior.num_nodes() != n {
            return Err(Error::shape(format!(
                "prior graph has {} nodes, model has {}",
                prior.num_nodes(),
                n
            )));
        }
        if self.config.use_prior {
            graphops::normalize_symmetric(&prior.weights)
        } else {
            Ok(Tensor::eye(n))
        }
    }

    // ---- recorded building blocks -------------------------------------

    pub fn record_features(&self, g: &mut Graph, b: &Bindings, v: Var, tod: Var, prior_hat: Var) -> Var {
        let s = graphops::gconv_spectral_var(g, b, &self.feature.gconv, v, prior_hat);
        g.concat_cols(&[v, tod, s])
    }

    fn project(&self, g: &mut Graph, b: &Bindings, x: Var, keys: bool) -> Vec<Var> {
        let ws = if keys { &self.attn.w_k } else { &self.attn.w_q };
        ws.iter().map(|&w| g.matmul(x, b[w])).collect()
    }

    /// Scaled scores `N² x h` from per-head projections.
    fn record_scores(&self, g: &mut Graph, q: &[Var], k: &[Var]) -> Var {
        let n = g.shape(q[0]).0;
        let scale = 1.0 / (self.attn.att_dim as f64).sqrt();
        let heads: Vec<Var> = q
            .iter()
            .zip(k)
            .map(|(&qh, &kh)| {
                let kt = g.transpose(kh);
                let s = g.matmul(qh, kt);
                let s = g.scale(s, scale);
                g.reshape(s, n * n, 1)
            })
            .collect();
        if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)
        }
    }

    pub fn record_msdot(&self, g: &mut Graph, b: &Bindings, q: Var, k: Var) -> Var {
        let qp = self.project(g, b, q, false);
        let kp = self.project(g, b, k, true);
        self.record_scores(g, &qp, &kp)
    }

    pub fn record_gru_step(&self, g: &mut Graph, b: &Bindings, cell: &GruLagCell, c: Var, h_prev: Var) -> Var {
        let gate = |g: &mut Graph, wc: ParamId, wh: ParamId, bias: ParamId, h: Var| {
            let a = g.matmul(c, b[wc]);
            let r = g.matmul(h, b[wh]);
            let s = g.add(a, r);
            g.add_row(s, b[bias])
        };
        let r = gate(g, cell.w_cr, cell.w_hr, cell.b_r, h_prev);
        let r = g.sigmoid(r);
        let z = gate(g, cell.w_cz, cell.w_hz, cell.b_z, h_prev);
        let z = g.sigmoid(z);
        let rh = g.mul(r, h_prev);
        let cand = gate(g, cell.w_ch, cell.w_hh, cell.b_h, rh);
        let cand = g.tanh(cand);
        let keep = g.mul(z, h_prev);
        let one_minus_z = g.one_minus(z);
        let update = g.mul(one_minus_z, cand);
        g.add(keep, update)
    }

    /// Edge logits `N x N` from a hidden state `N² x H_r`.
    pub fn record_head_logits(&self, g: &mut Graph, b: &Bindings, head: &GraphHead, h: Var) -> Var {
        let rows = g.shape(h).0;
        let n = (rows as f64).sqrt().round() as usize;
        let mut x = h;
        for layer in 0..3 {
            let y = g.matmul(x, b[head.weights[layer]]);
            let y = g.add_row(y, b[head.biases[layer]]);
            x = if layer < 2 { g.relu(y) } else { y };
        }
        g.reshape(x, n, n)
    }

    /// Squashes logits into `[0, 1]` edge weights.
    pub fn record_activation(&self, g: &mut Graph, logits: Var, mode: &mut GraphMode<'_>, mask_diag: bool) -> Var {
        let (n, _) = g.shape(logits);
        let pre = match mode {
            GraphMode::Eval => logits,
            GraphMode::Train(rng) => {
                let gumbel = Gumbel::new(0.0, 1.0).expect("standard Gumbel");
                let noise = Tensor::from_fn(n, n, |_, _| gumbel.sample(*rng) - gumbel.sample(*rng));
                let noise = g.input(noise);
                g.add(logits, noise)
            }
        };
        let scaled = g.scale(pre, 1.0 / self.config.tau);
        let b = g.sigmoid(scaled);
        if mask_diag {
            let off = g.input(Tensor::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }));
            g.mul(b, off)
        } else {
            b
        }
    }

    pub fn record_sem(&self, g: &mut Graph, b: &Bindings, x_prev: Var, x_t: Var, b0: Var, b1: Var) -> Var {
        let sem = &self.sem;
        let intra = if self.config.sem_exclude_self {
            let a_hat = g.row_normalize(b0);
            let h = graphops::gconv_layers(g, b, &sem.gconv0, x_t, a_hat);
            let own = g.matmul(x_t, b[sem.gconv0.theta[0]]);
            g.sub(h, own)
        } else {
            graphops::gconv_spatial_var(g, b, &sem.gconv0, x_t, b0)
        };
        let inter = graphops::gconv_spatial_var(g, b, &sem.gconv1, x_prev, b1);
        let z = g.add(intra, inter);
        let h = g.matmul(z, b[sem.mlp_w1]);
        let h = g.add_row(h, b[sem.mlp_b1]);
        let h = g.relu(h);
        let o = g.matmul(h, b[sem.mlp_w2]);
        g.add_row(o, b[sem.mlp_b2])
    }

    /// Records the full forward pass for one window.
    pub fn record_forward(
        &self,
        g: &mut Graph,
        b: &Bindings,
        window: &Window,
        prior_hat: &Tensor,
        mode: &mut GraphMode<'_>,
    ) -> Result<RecordedWindow> {
        let n = self.config.num_nodes;
        let t_in = window.t_in();
        if window.num_nodes() != n {
            return Err(Error::shape(format!(
                "window has {} nodes, model has {}",
                window.num_nodes(),
                n
            )));
        }
        if t_in < 2 {
            return Err(Error::shape("structure learning needs T_in >= 2"));
        }
        prior_hat.require_matrix(n, n, "normalised prior")?;

        let prior = g.input(prior_hat.clone());
        let d = self.config.feature_dim();
        let mut features = Vec::with_capacity(t_in);
        for t in 0..t_in {
            let v = g.input(Tensor::column(window.values.row(t)));
            let tod = g.input(Tensor::column(window.tod.row(t)));
            features.push(self.record_features(g, b, v, tod, prior));
        }
        let queries: Vec<Vec<Var>> = features.iter().map(|&x| self.project(g, b, x, false)).collect();
        let keys: Vec<Vec<Var>> = features.iter().map(|&x| self.project(g, b, x, true)).collect();

        let hr = self.config.gru_hidden;
        let mut hidden = [g.input(Tensor::zeros(&[n * n, hr])), g.input(Tensor::zeros(&[n * n, hr]))];
        let mut graphs = Vec::with_capacity(t_in - 1);
        let mut recon = Vec::with_capacity(t_in - 1);
        let mut recon_weights = Vec::with_capacity(t_in - 1);
        for t in 1..t_in {
            let mut pair = [features[t]; 2];
            for (lag, slot) in pair.iter_mut().enumerate() {
                let c = self.record_scores(g, &queries[t], &keys[t - lag]);
                hidden[lag] = self.record_gru_step(g, b, &self.gru[lag], c, hidden[lag]);
                let logits = self.record_head_logits(g, b, &self.head[lag], hidden[lag]);
                *slot = self.record_activation(g, logits, mode, lag == 0);
            }
            let [b0, b1] = pair;
            recon.push(self.record_sem(g, b, features[t - 1], features[t], b0, b1));
            graphs.push((b0, b1));
            let mask = window.mask.row(t);
            recon_weights.push(Tensor::from_fn(n, d, |i, j| if j == 0 { mask[i] } else { 1.0 }));
        }
        Ok(RecordedWindow {
            features,
            graphs,
            recon,
            recon_weights,
        })
    }

    // ---- tensor-level operations --------------------------------------

    fn frozen(&self) -> (Graph, Bindings) {
        let mut g = Graph::new();
        let b = self.store.bind_frozen(&mut g);
        (g, b)
    }

    /// `X_t = V_t ‖ T_t ‖ S_t` for `N x 1` speed and time-of-day columns.
    pub fn extract_features(&self, v: &Tensor, tod: &Tensor, prior: &PriorGraph) -> Result<Tensor> {
        let n = self.config.num_nodes;
        v.require_matrix(n, 1, "speed column")?;
        tod.require_matrix(n, 1, "time-of-day column")?;
        let prior_hat = self.prior_hat(prior)?;
        let (mut g, b) = self.frozen();
        let vv = g.input(v.clone());
        let tv = g.input(tod.clone());
        let pv = g.input(prior_hat);
        let x = self.record_features(&mut g, &b, vv, tv, pv);
        Ok(g.value(x).clone())
    }

    /// Multi-head scaled dot-product scores, shape `N x N x h`.
    pub fn msdot(&self, q: &Tensor, k: &Tensor) -> Result<Tensor> {
        let d = self.config.feature_dim();
        if !q.is_matrix() || q.cols() != d || q.shape() != k.shape() {
            return Err(Error::shape(format!(
                "msdot needs two N x {} matrices, got {:?} and {:?}",
                d,
                q.shape(),
                k.shape()
            )));
        }
        let n = q.rows();
        let (mut g, b) = self.frozen();
        let qv = g.input(q.clone());
        let kv = g.input(k.clone());
        let s = self.record_msdot(&mut g, &b, qv, kv);
        g.value(s).clone().reshape(&[n, n, self.config.heads])
    }

    /// `(C⁰_t, C¹_t)` (each `N² x h`) for `t = 2..=T_in` of a feature sequence.
    pub fn correlation_features(&self, xs: &[Tensor]) -> Result<Vec<(Tensor, Tensor)>> {
        if xs.len() < 2 {
            return Err(Error::shape("correlation features need at least two steps"));
        }
        let n = xs[0].rows();
        let h = self.config.heads;
        (1..xs.len())
            .map(|t| {
                let c0 = self.msdot(&xs[t], &xs[t])?.reshape(&[n * n, h])?;
                let c1 = self.msdot(&xs[t], &xs[t - 1])?.reshape(&[n * n, h])?;
                Ok((c0, c1))
            })
            .collect()
    }

    pub fn gru_step(&self, lag: usize, c: &Tensor, h_prev: &Tensor) -> Result<Tensor> {
        let cell = self.gru.get(lag).ok_or_else(|| Error::shape("lag must be 0 or 1"))?;
        let hr = self.config.gru_hidden;
        if !c.is_matrix() || c.cols() != self.config.heads {
            return Err(Error::shape(format!("GRU input must have {} columns", self.config.heads)));
        }
        h_prev.require_matrix(c.rows(), hr, "GRU hidden state")?;
        let (mut g, b) = self.frozen();
        let cv = g.input(c.clone());
        let hv = g.input(h_prev.clone());
        let out = self.record_gru_step(&mut g, &b, cell, cv, hv);
        Ok(g.value(out).clone())
    }

    pub fn graph_head(&self, lag: usize, h: &Tensor, mode: &mut GraphMode<'_>, mask_diag: bool) -> Result<Tensor> {
        let head = self.head.get(lag).ok_or_else(|| Error::shape("lag must be 0 or 1"))?;
        if !(self.config.tau > 0.0) {
            return Err(Error::Config("tau must be > 0".into()));
        }
        let n = (h.rows() as f64).sqrt().round() as usize;
        h.require_matrix(n * n, self.config.gru_hidden, "graph head input")?;
        let (mut g, b) = self.frozen();
        let hv = g.input(h.clone());
        let logits = self.record_head_logits(&mut g, &b, head, hv);
        let out = self.record_activation(&mut g, logits, mode, mask_diag);
        Ok(g.value(out).clone())
    }

    pub fn sem_reconstruct(&self, x_prev: &Tensor, x_t: &Tensor, b0: &Tensor, b1: &Tensor) -> Result<Tensor> {
        let n = x_t.rows();
        let d = self.config.feature_dim();
        x_t.require_matrix(n, d, "X_t")?;
        x_prev.require_matrix(n, d, "X_{t-1}")?;
        b0.require_matrix(n, n, "B0")?;
        b1.require_matrix(n, n, "B1")?;
        let (mut g, b) = self.frozen();
        let xp = g.input(x_prev.clone());
        let xt = g.input(x_t.clone());
        let b0v = g.input(b0.clone());
        let b1v = g.input(b1.clone());
        let out = self.record_sem(&mut g, &b, xp, xt, b0v, b1v);
        Ok(g.value(out).clone())
    }

    /// Graphs and reconstructions for one window.
    pub fn forward(
        &self,
        window: &Window,
        prior: &PriorGraph,
        mode: &mut GraphMode<'_>,
    ) -> Result<(CausalGraphSeq, Vec<Tensor>)> {
        let prior_hat = self.prior_hat(prior)?;
        let (mut g, b) = self.frozen();
        let rec = self.record_forward(&mut g, &b, window, &prior_hat, mode)?;
        let steps = rec
            .graphs
            .iter()
            .map(|&(b0, b1)| (g.value(b0).clone(), g.value(b1).clone()))
            .collect();
        let recon = rec.recon.iter().map(|&r| g.value(r).clone()).collect();
        Ok((CausalGraphSeq { steps }, recon))
    }

    /// Deterministic graphs for a window.
    pub fn graphs(&self, window: &Window, prior_hat: &Tensor) -> Result<CausalGraphSeq> {
        let (mut g, b) = self.frozen();
        let rec = self.record_forward(&mut g, &b, window, prior_hat, &mut GraphMode::Eval)?;
        Ok(CausalGraphSeq {
            steps: rec
                .graphs
                .iter()
                .map(|&(b0, b1)| (g.value(b0).clone(), g.value(b1).clone()))
                .collect(),
        })
    }
}

/// Writes `window_start_ts,step,lag,src_id,dst_id,weight` rows for every
/// entry with weight at least `threshold`. `step` is the 1-based window
/// step `2..=T_in`; an entry `B[i][j]` is the edge `j -> i` (parent `j`
/// feeds child `i`).
pub fn write_graph_rows<W: Write>(
    out: &mut W,
    window_start_ts: i64,
    seq: &CausalGraphSeq,
    sensor_ids: &[String],
    threshold: f64,
) -> std::io::Result<()> {
    let ts = crate::data::format_datetime(window_start_ts);
    for (s, (b0, b1)) in seq.steps.iter().enumerate() {
        for (lag, m) in [(0, b0), (1, b1)] {
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    let w = m.get(i, j);
                    if w >= threshold {
                        writeln!(
                            out,
                            "{},{},{},{},{},{:?}",
                            ts,
                            s + 2,
                            lag,
                            sensor_ids[j],
                            sensor_ids[i],
                            w
                        )?;
                    }
                }
            }
        }
    }
    Ok(())
}

pub const GRAPH_CSV_HEADER: &str = "window_start_ts,step,lag,src_id,dst_id,weight";

fn open_table(path: &std::path::Path, required: &[&str]) -> Result<(csv::Reader<std::fs::File>, Vec<usize>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("{:?}", other),
            },
        })?;
    let header = reader.headers().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: e.to_string(),
    })?;
    let cols = required
        .iter()
        .map(|name| {
            header.iter().position(|h| h == *name).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("missing column '{}'", name),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((reader, cols))
}

/// Iterates data rows of a CSV with named columns, yielding the 1-based
/// line number and the requested cells in order.
pub(crate) fn read_table(path: &std::path::Path, required: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let (mut reader, cols) = open_table(path, required)?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, cols.iter().map(|&c| rec.get(c).unwrap_or("").to_string()).collect()));
    }
    Ok(rows)
}

/// Reads an edge CSV in the export format and averages every `(lag, src,
/// dst)` weight over the distinct `(window_start_ts, step)` blocks, giving
/// one static `(B⁰, B¹)` pair.
pub fn load_static_graphs(path: &std::path::Path, sensor_ids: &[String]) -> Result<(Tensor, Tensor)> {
    let rows = read_table(path, &["window_start_ts", "step", "lag", "src_id", "dst_id", "weight"])?;
    let n = sensor_ids.len();
    let index = |line: usize, id: &str| {
        sensor_ids.iter().position(|s| s == id).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("unknown sensor '{}'", id),
        })
    };
    let mut sums = [Tensor::zeros(&[n, n]), Tensor::zeros(&[n, n])];
    let mut blocks = std::collections::BTreeSet::new();
    for (line, cells) in rows {
        let bad = |what: &str, cell: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("bad {} '{}'", what, cell),
        };
        let lag: usize = cells[2].parse().map_err(|_| bad("lag", &cells[2]))?;
        if lag > 1 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("lag must be 0 or 1, got {}", lag),
            });
        }
        let w: f64 = cells[5].parse().map_err(|_| bad("weight", &cells[5]))?;
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("edge weight must be finite and non-negative, got {}", w),
            });
        }
        let src = index(line, &cells[3])?;
        let dst = index(line, &cells[4])?;
        blocks.insert((cells[0].clone(), cells[1].clone()));
        let m = &mut sums[lag];
        m.set(dst, src, m.get(dst, src) + w);
    }
    let k = blocks.len().max(1) as f64;
    let [b0, b1] = sums;
    Ok((b0.scale(1.0 / k), b1.scale(1.0 / k)))
}
