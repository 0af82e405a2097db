//! Forecaster driven by the learned causal graphs.
//!
//! For every window step `s = 2..=T_in` the input `X_{s-1} = V ‖ T` is
//! convolved over `(B⁰_s, B¹_s)` with the two-step dynamic convolution and
//! concatenated with a spectral convolution of `V_s` over the prior graph.
//! The stacked `N x ((T_in - 1) H_f)` features are mapped to `T_out` steps
//! by one affine readout shared across nodes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{format_datetime, NormStats, PriorGraph, SpeedSeries, Window, WindowSet};
use crate::error::{Error, Result};
use crate::graphops::{self, GconvParams};
use crate::grcsl::{CausalGraphSeq, Grcsl};
use crate::numerics::{self, Adam, Bindings, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct DgcpmConfig {
    pub num_nodes: usize,
    pub t_in: usize,
    pub t_out: usize,
    /// Width of the dynamic convolution output.
    pub dynamic_width: usize,
    /// Width of the prior-graph branch.
    pub prior_width: usize,
    pub gconv_layers: usize,
}

impl DgcpmConfig {
    pub fn new(num_nodes: usize, t_in: usize, t_out: usize) -> Self {
        DgcpmConfig {
            num_nodes,
            t_in,
            t_out,
            dynamic_width: 16,
            prior_width: 8,
            gconv_layers: 4,
        }
    }

    /// Fused per-step width `H_f`.
    pub fn fused_width(&self) -> usize {
        self.dynamic_width + self.prior_width
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_nodes", self.num_nodes),
            ("t_out", self.t_out),
            ("dynamic_width", self.dynamic_width),
            ("prior_width", self.prior_width),
            ("gconv_layers", self.gconv_layers),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{} must be >= 1", name)));
            }
        }
        if self.t_in < 2 {
            return Err(Error::Config(format!("t_in must be >= 2, got {}", self.t_in)));
        }
        Ok(())
    }

    fn to_meta(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("model".into(), "dgcpm".into());
        m.insert("num_nodes".into(), self.num_nodes.to_string());
        m.insert("t_in".into(), self.t_in.to_string());
        m.insert("t_out".into(), self.t_out.to_string());
        m.insert("dynamic_width".into(), self.dynamic_width.to_string());
        m.insert("prior_width".into(), self.prior_width.to_string());
        m.insert("gconv_layers".into(), self.gconv_layers.to_string());
        m
    }

    fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        if meta.get("model").map(String::as_str) != Some("dgcpm") {
            return Err(Error::Checkpoint("not a forecaster checkpoint".into()));
        }
        let int = |k: &str| -> Result<usize> {
            meta.get(k)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint is missing meta '{}'", k)))?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("meta '{}' is not an integer", k)))
        };
        Ok(DgcpmConfig {
            num_nodes: int("num_nodes")?,
            t_in: int("t_in")?,
            t_out: int("t_out")?,
            dynamic_width: int("dynamic_width")?,
            prior_width: int("prior_width")?,
            gconv_layers: int("gconv_layers")?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DgcpmParams {
    pub dy_inter: GconvParams,
    pub dy_intra: GconvParams,
    pub prior_gconv: GconvParams,
    /// `(T_in - 1) H_f x T_out`.
    pub w_out: ParamId,
    /// `1 x T_out`.
    pub b_out: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dgcpm {
    pub config: DgcpmConfig,
    pub store: ParamStore,
    pub params: DgcpmParams,
}

/// Speed and time-of-day input width.
const INPUT_DIM: usize = 2;

impl Dgcpm {
    pub fn new<R: Rng>(config: DgcpmConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut store = ParamStore::new();
        let dy_inter = GconvParams::init(&mut store, "dy_inter", INPUT_DIM, c.dynamic_width, c.gconv_layers, rng);
        let dy_intra = GconvParams::init(&mut store, "dy_intra", c.dynamic_width, c.dynamic_width, c.gconv_layers, rng);
        let prior_gconv = GconvParams::init(&mut store, "prior", 1, c.prior_width, c.gconv_layers, rng);
        let w_out = store.add_glorot("readout.w", (c.t_in - 1) * c.fused_width(), c.t_out, rng);
        let b_out = store.add("readout.b", Tensor::zeros(&[1, c.t_out]));
        Ok(Dgcpm {
            config,
            store,
            params: DgcpmParams {
                dy_inter,
                dy_intra,
                prior_gconv,
                w_out,
                b_out,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.save_with_meta(path, &BTreeMap::new())
    }

    /// Saves with additional `meta` entries, which must not collide with
    /// the architecture keys.
    pub fn save_with_meta(&self, path: &Path, extra: &BTreeMap<String, String>) -> Result<()> {
        let mut meta = self.config.to_meta();
        for (k, v) in extra {
            if meta.insert(k.clone(), v.clone()).is_some() {
                return Err(Error::Checkpoint(format!("meta key '{}' is reserved", k)));
            }
        }
        self.store.save(path, &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Dgcpm::load_with_meta(path)?.0)
    }

    /// Loads the model and every `meta` entry of the checkpoint.
    pub fn load_with_meta(path: &Path) -> Result<(Self, BTreeMap<String, String>)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let meta: BTreeMap<String, String> = text
            .lines()
            .filter_map(|l| l.strip_prefix("meta "))
            .filter_map(|l| l.split_once(' '))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let config = DgcpmConfig::from_meta(&meta)?;
        let mut model = Dgcpm::new(config, &mut numerics::seeded_rng(0))?;
        model.store.load_text(&text)?;
        Ok((model, meta))
    }

    fn check_inputs(&self, window: &Window, graphs: &CausalGraphSeq, prior_hat: &Tensor) -> Result<()> {
        let c = &self.config;
        let n = c.num_nodes;
        if window.num_nodes() != n || window.t_in() != c.t_in {
            return Err(Error::shape(format!(
                "window is {} x {}, forecaster expects {} x {}",
                window.t_in(),
                window.num_nodes(),
                c.t_in,
                n
            )));
        }
        if graphs.len() != c.t_in - 1 {
            return Err(Error::shape(format!(
                "{} graph pairs for a window with {} steps; expected {}",
                graphs.len(),
                c.t_in,
                c.t_in - 1
            )));
        }
        for (b0, b1) in &graphs.steps {
            b0.require_matrix(n, n, "intra-slice graph")?;
            b1.require_matrix(n, n, "inter-slice graph")?;
        }
        prior_hat.require_matrix(n, n, "normalised prior")
    }

    /// Records the normalised `T_out x N` forecast.
    pub fn record_forward(
        &self,
        g: &mut Graph,
        b: &Bindings,
        window: &Window,
        graphs: &CausalGraphSeq,
        prior_hat: &Tensor,
    ) -> Result<Var> {
        self.check_inputs(window, graphs, prior_hat)?;
        let n = self.config.num_nodes;
        let p = &self.params;
        let eye = g.input(Tensor::eye(n));
        let prior = g.input(prior_hat.clone());
        let mut fused = Vec::with_capacity(graphs.len());
        for (k, (b0, b1)) in graphs.steps.iter().enumerate() {
            let s = k + 1;
            let x_prev = g.input(Tensor::from_fn(n, INPUT_DIM, |i, j| {
                if j == 0 {
                    window.values.get(s - 1, i)
                } else {
                    window.tod.get(s - 1, i)
                }
            }));
            let b0 = g.input(b0.clone());
            let b1 = g.input(b1.clone());
            let h = graphops::dygconv_var(g, b, &p.dy_inter, &p.dy_intra, x_prev, b0, b1, eye);
            let v = g.input(Tensor::column(window.values.row(s)));
            let sp = graphops::gconv_spectral_var(g, b, &p.prior_gconv, v, prior);
            fused.push(h);
            fused.push(sp);
        }
        let z = g.concat_cols(&fused);
        let out = g.matmul(z, b[p.w_out]);
        let out = g.add_row(out, b[p.b_out]);
        Ok(g.transpose(out))
    }

    /// Normalised `T_out x N` forecast.
    pub fn forward(&self, window: &Window, graphs: &CausalGraphSeq, prior_hat: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.store.bind_frozen(&mut g);
        let out = self.record_forward(&mut g, &b, window, graphs, prior_hat)?;
        Ok(g.value(out).clone())
    }
}

/// Normalised forecast of one window.
pub fn dgcpm_forward(model: &Dgcpm, window: &Window, graphs: &CausalGraphSeq, prior_hat: &Tensor) -> Result<Tensor> {
    model.forward(window, graphs, prior_hat)
}

fn horizon_mask(mask: &Tensor, limit: usize) -> Tensor {
    Tensor::from_fn(mask.rows(), mask.cols(), |s, i| if s < limit { mask.get(s, i) } else { 0.0 })
}

/// Mean `|pred - target|` over valid cells of the first `horizon_limit`
/// steps; 0 when no cell is valid.
pub fn masked_mae_loss(pred: &Tensor, target: &Tensor, mask: &Tensor, horizon_limit: usize) -> Result<f64> {
    pred.require_same_shape(target, "forecast vs target")?;
    pred.require_same_shape(mask, "forecast vs mask")?;
    if horizon_limit == 0 || horizon_limit > pred.rows() {
        return Err(Error::shape(format!(
            "horizon limit {} outside 1..={}",
            horizon_limit,
            pred.rows()
        )));
    }
    let (sum, count) = masked_abs_sum(pred, target, mask, horizon_limit);
    if count == 0.0 {
        warn!("masked MAE over an empty set of valid cells");
        return Ok(0.0);
    }
    Ok(sum / count)
}

fn masked_abs_sum(pred: &Tensor, target: &Tensor, mask: &Tensor, limit: usize) -> (f64, f64) {
    let mut sum = 0.0;
    let mut count = 0.0;
    for s in 0..limit {
        for i in 0..pred.cols() {
            let m = mask.get(s, i);
            if m != 0.0 {
                sum += m * (pred.get(s, i) - target.get(s, i)).abs();
                count += m;
            }
        }
    }
    (sum, count)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DgcpmTrainConfig {
    pub epochs: usize,
    /// Epochs per curriculum stage `E`.
    pub curriculum_step: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs without validation improvement tolerated once the full
    /// horizon is reached.
    pub patience: usize,
    pub max_grad_norm: f64,
    pub seed: u64,
}

impl Default for DgcpmTrainConfig {
    fn default() -> Self {
        DgcpmTrainConfig {
            epochs: 30,
            curriculum_step: 1,
            learning_rate: 1e-3,
            batch_size: 16,
            patience: 10,
            max_grad_norm: 5.0,
            seed: 0,
        }
    }
}

impl DgcpmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.curriculum_step == 0 || self.batch_size == 0 {
            return Err(Error::Config("curriculum_step and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Horizon limit used at 0-based `epoch`.
pub fn curriculum_horizon(epoch: usize, step: usize, t_out: usize) -> usize {
    (1 + epoch / step.max(1)).min(t_out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub horizon: usize,
    /// Masked MAE over the epoch's training batches at the active horizon,
    /// normalised units.
    pub train_mae: f64,
    /// Masked MAE over every validation cell and the full horizon,
    /// normalised units.
    pub val_mae: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl ForecastHistory {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "epoch,horizon,train_mae,val_mae")?;
        for r in &self.epochs {
            let val = r.val_mae.map_or_else(String::new, |v| format!("{:?}", v));
            writeln!(out, "{},{},{:?},{}", r.epoch, r.horizon, r.train_mae, val)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Windows paired with the graphs the forecaster consumes.
pub struct GraphedWindows<'a> {
    pub windows: &'a WindowSet,
    pub graphs: Vec<CausalGraphSeq>,
}

impl<'a> GraphedWindows<'a> {
    /// Deterministic graphs from a trained structure learner.
    pub fn from_grcsl(windows: &'a WindowSet, grcsl: &Grcsl, prior: &PriorGraph) -> Result<Self> {
        let prior_hat = grcsl.prior_hat(prior)?;
        let graphs = windows
            .windows
            .iter()
            .map(|w| grcsl.graphs(w, &prior_hat))
            .collect::<Result<_>>()?;
        Ok(GraphedWindows { windows, graphs })
    }

    /// The same graph pair at every step of every window.
    pub fn constant(windows: &'a WindowSet, b0: &Tensor, b1: &Tensor) -> Self {
        let steps = vec![(b0.clone(), b1.clone()); windows.t_in.saturating_sub(1)];
        let graphs = vec![CausalGraphSeq { steps }; windows.len()];
        GraphedWindows { windows, graphs }
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }
}

/// Mean masked MAE over every cell of every window at the full horizon.
pub fn evaluate_mae(model: &Dgcpm, data: &GraphedWindows<'_>, prior_hat: &Tensor) -> Result<Option<f64>> {
    let mut sum = 0.0;
    let mut count = 0.0;
    for (w, gs) in data.windows.windows.iter().zip(&data.graphs) {
        let pred = model.forward(w, gs, prior_hat)?;
        let (s, c) = masked_abs_sum(&pred, &w.target, &w.target_mask, w.t_out());
        sum += s;
        count += c;
    }
    Ok((count > 0.0).then(|| sum / count))
}

/// Curriculum training with early stopping on validation MAE. The graphs
/// are fixed inputs, so the structure learner that produced them is never
/// touched. Returns the history; `model` holds the best parameters.
pub fn curriculum_train(
    model: &mut Dgcpm,
    train: &GraphedWindows<'_>,
    val: Option<&GraphedWindows<'_>>,
    prior_hat: &Tensor,
    cfg: &DgcpmTrainConfig,
) -> Result<ForecastHistory> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("no training windows".into()));
    }
    let t_out = model.config.t_out;
    let mut rng = numerics::seeded_rng(cfg.seed);
    let mut opt = Adam::new(cfg.learning_rate).with_max_grad_norm(cfg.max_grad_norm);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        let horizon = curriculum_horizon(epoch, cfg.curriculum_step, t_out);
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_count = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (s, c) = train_batch(model, &mut opt, train, batch, prior_hat, horizon, epoch)?;
            epoch_sum += s;
            epoch_count += c;
        }
        let train_mae = if epoch_count > 0.0 { epoch_sum / epoch_count } else { 0.0 };
        let val_mae = match val {
            Some(v) if !v.is_empty() => evaluate_mae(model, v, prior_hat)?,
            _ => None,
        };
        if let Some(v) = val_mae {
            if !v.is_finite() {
                return Err(Error::Numerical(format!("non-finite validation MAE at epoch {}", epoch)));
            }
        }
        info!(
            "epoch {}: horizon {} train MAE {:.5} val MAE {}",
            epoch,
            horizon,
            train_mae,
            val_mae.map_or("-".to_string(), |v| format!("{:.5}", v))
        );
        records.push(EpochRecord {
            epoch,
            horizon,
            train_mae,
            val_mae,
        });
        let score = val_mae.unwrap_or(train_mae);
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, model.store.clone()));
            stale = 0;
        } else if horizon == t_out {
            stale += 1;
            if stale >= cfg.patience {
                info!("early stop at epoch {}", epoch);
                break;
            }
        }
    }
    let best_epoch = match best {
        Some((_, e, store)) => {
            model.store = store;
            e
        }
        None => 0,
    };
    Ok(ForecastHistory {
        epochs: records,
        best_epoch,
    })
}

fn train_batch(
    model: &mut Dgcpm,
    opt: &mut Adam,
    data: &GraphedWindows<'_>,
    batch: &[usize],
    prior_hat: &Tensor,
    horizon: usize,
    epoch: usize,
) -> Result<(f64, f64)> {
    let mut tapes = Vec::with_capacity(batch.len());
    let mut total_count = 0.0;
    let mut total_sum = 0.0;
    for &idx in batch {
        let w = &data.windows.windows[idx];
        let mut g = Graph::new();
        let b = model.store.bind(&mut g);
        let pred = model.record_forward(&mut g, &b, w, &data.graphs[idx], prior_hat)?;
        let mask = horizon_mask(&w.target_mask, horizon);
        let count = mask.sum();
        let target = g.input(w.target.clone());
        let diff = g.sub(pred, target);
        let m = g.input(mask);
        let diff = g.mul(diff, m);
        let abs = g.abs(diff);
        let sum = g.sum(abs);
        let s = g.scalar(sum);
        if !s.is_finite() {
            return Err(Error::Numerical(format!("non-finite forecast loss at epoch {}", epoch)));
        }
        total_sum += s;
        total_count += count;
        tapes.push((g, b, sum));
    }
    if total_count == 0.0 {
        return Ok((0.0, 0.0));
    }
    let mut grads_total = model.store.zeros_like();
    for (g, b, sum) in tapes {
        let mut grads = g.backward_seeded(&[(sum, 1.0 / total_count)]);
        for (acc, gr) in grads_total.iter_mut().zip(b.collect(&mut grads, &model.store)) {
            acc.axpy(1.0, &gr);
        }
    }
    if grads_total.iter().any(|t| !t.all_finite()) {
        return Err(Error::Numerical(format!("non-finite forecast gradient at epoch {}", epoch)));
    }
    opt.step(model.store.values_mut(), &grads_total);
    Ok((total_sum, total_count))
}

/// Forecast in original units.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecast {
    pub window_start_ts: i64,
    /// `T_out x N`.
    pub values: Tensor,
}

/// Converts a normalised forecast to original units.
pub fn denormalize(pred: &Tensor, stats: &NormStats) -> Tensor {
    pred.map(|x| stats.invert_value(x))
}

/// Graphs in eval mode, forward pass, inverse Z-score.
pub fn predict(
    window: &Window,
    grcsl: &Grcsl,
    model: &Dgcpm,
    prior: &PriorGraph,
    stats: &NormStats,
) -> Result<Forecast> {
    let grcsl_hat = grcsl.prior_hat(prior)?;
    let graphs = grcsl.graphs(window, &grcsl_hat)?;
    let prior_hat = graphops::normalize_symmetric(&prior.weights)?;
    let pred = model.forward(window, &graphs, &prior_hat)?;
    Ok(Forecast {
        window_start_ts: window.start_ts,
        values: denormalize(&pred, stats),
    })
}

pub const FORECAST_CSV_HEADER: &str = "window_start_ts,horizon_step,sensor_id,predicted,actual,valid";

/// Writes forecast rows; `actual` is in original units for valid cells and
/// 0 for missing ones.
pub fn write_forecast_rows<W: Write>(
    out: &mut W,
    forecast: &Forecast,
    window: &Window,
    stats: &NormStats,
    sensor_ids: &[String],
) -> std::io::Result<()> {
    let ts = format_datetime(forecast.window_start_ts);
    for s in 0..forecast.values.rows() {
        for (i, id) in sensor_ids.iter().enumerate() {
            let valid = window.target_mask.get(s, i) != 0.0;
            let actual = if valid { stats.invert_value(window.target.get(s, i)) } else { 0.0 };
            writeln!(
                out,
                "{},{},{},{:?},{:?},{}",
                ts,
                s + 1,
                id,
                forecast.values.get(s, i),
                actual,
                valid as u8
            )?;
        }
    }
    Ok(())
}

/// Forecast rows read back from CSV, one `T_out x N` block per window.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastTable {
    pub window_starts: Vec<String>,
    pub sensor_ids: Vec<String>,
    pub predicted: Vec<Tensor>,
    pub actual: Vec<Tensor>,
    pub valid: Vec<Tensor>,
}

/// Reads a forecast CSV. Windows and sensors keep their order of first
/// appearance; every window must list every `(horizon_step, sensor_id)`
/// cell exactly once.
pub fn read_forecast_csv(path: &Path) -> Result<ForecastTable> {
    let rows = crate::grcsl::read_table(
        path,
        &["window_start_ts", "horizon_step", "sensor_id", "predicted", "actual", "valid"],
    )?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut window_starts: Vec<String> = Vec::new();
    let mut sensor_ids: Vec<String> = Vec::new();
    let mut t_out = 0;
    let mut cells = Vec::with_capacity(rows.len());
    for (line, c) in &rows {
        let w = match window_starts.iter().position(|s| s == &c[0]) {
            Some(w) => w,
            None => {
                window_starts.push(c[0].clone());
                window_starts.len() - 1
            }
        };
        let i = match sensor_ids.iter().position(|s| s == &c[2]) {
            Some(i) => i,
            None => {
                sensor_ids.push(c[2].clone());
                sensor_ids.len() - 1
            }
        };
        let step: usize = c[1]
            .parse()
            .ok()
            .filter(|&s| s >= 1)
            .ok_or_else(|| perr(*line, format!("bad horizon_step '{}'", c[1])))?;
        let num = |k: usize, name: &str| -> Result<f64> {
            c[k].parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| perr(*line, format!("bad {} '{}'", name, c[k])))
        };
        let valid = match c[5].as_str() {
            "0" | "false" => 0.0,
            "1" | "true" => 1.0,
            other => return Err(perr(*line, format!("bad valid flag '{}'", other))),
        };
        t_out = t_out.max(step);
        cells.push((*line, w, step - 1, i, num(3, "predicted")?, num(4, "actual")?, valid));
    }
    let n = sensor_ids.len();
    let blank = || vec![Tensor::full(&[t_out, n], f64::NAN); window_starts.len()];
    let (mut predicted, mut actual, mut valid) = (blank(), blank(), blank());
    for (line, w, s, i, p, a, v) in cells {
        if !predicted[w].get(s, i).is_nan() {
            return Err(perr(line, format!("duplicate cell for window {} step {} sensor {}", window_starts[w], s + 1, sensor_ids[i])));
        }
        predicted[w].set(s, i, p);
        actual[w].set(s, i, a);
        valid[w].set(s, i, v);
    }
    for (w, m) in predicted.iter().enumerate() {
        if m.data().iter().any(|x| x.is_nan()) {
            return Err(perr(0, format!("window {} does not list every horizon step and sensor", window_starts[w])));
        }
    }
    Ok(ForecastTable {
        window_starts,
        sensor_ids,
        predicted,
        actual,
        valid,
    })
}

/// Per-node mean of observed values, predicted at every horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoricalMean {
    pub means: Vec<f64>,
}

impl HistoricalMean {
    pub fn fit(series: &SpeedSeries) -> Self {
        let n = series.num_nodes();
        let mut sum = vec![0.0; n];
        let mut count = vec![0usize; n];
        for t in 0..series.len() {
            for i in 0..n {
                if series.observed(t, i) {
                    sum[i] += series.values.get(t, i);
                    count[i] += 1;
                }
            }
        }
        HistoricalMean {
            means: sum.iter().zip(&count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect(),
        }
    }

    pub fn predict(&self, t_out: usize) -> Tensor {
        Tensor::from_fn(t_out, self.means.len(), |_, i| self.means[i])
    }

    /// Masked MAE over every window and the full horizon.
    pub fn mae(&self, windows: &WindowSet) -> Option<f64> {
        let pred = self.predict(windows.t_out);
        let mut sum = 0.0;
        let mut count = 0.0;
        for w in &windows.windows {
            let (s, c) = masked_abs_sum(&pred, &w.target, &w.target_mask, w.t_out());
            sum += s;
            count += c;
        }
        (count > 0.0).then(|| sum / count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_reaches_full_horizon() {
        let hs: Vec<usize> = (0..20).map(|e| curriculum_horizon(e, 1, 12)).collect();
        assert_eq!(&hs[..12], &(1..=12).collect::<Vec<_>>()[..]);
        assert!(hs[12..].iter().all(|&h| h == 12));
        assert_eq!(curriculum_horizon(5, 2, 12), 3);
    }

    #[test]
    fn mae_examples() {
        let t = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let m = Tensor::full(&[1, 2], 1.0);
        assert_eq!(masked_mae_loss(&t, &t, &m, 1).unwrap(), 0.0);
        let p = Tensor::from_rows(&[vec![2.0, -1.0]]).unwrap();
        assert_eq!(masked_mae_loss(&p, &t, &m, 1).unwrap(), 2.0);
        assert_eq!(masked_mae_loss(&p, &t, &Tensor::zeros(&[1, 2]), 1).unwrap(), 0.0);
        assert!(masked_mae_loss(&p, &t, &m, 2).is_err());
    }

    #[test]
    fn horizon_limit_restricts_rows() {
        let p = Tensor::from_rows(&[vec![1.0], vec![5.0]]).unwrap();
        let t = Tensor::zeros(&[2, 1]);
        let m = Tensor::full(&[2, 1], 1.0);
        assert_eq!(masked_mae_loss(&p, &t, &m, 1).unwrap(), 1.0);
        assert_eq!(masked_mae_loss(&p, &t, &m, 2).unwrap(), 3.0);
    }

    #[test]
    fn zero_forecast_inverts_to_mean() {
        let stats = NormStats { mean: 57.5, std: 9.0 };
        let out = denormalize(&Tensor::zeros(&[12, 3]), &stats);
        assert!(out.data().iter().all(|&v| v == 57.5));
    }
}
