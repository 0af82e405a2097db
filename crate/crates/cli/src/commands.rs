use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use log::{info, warn};

use tvdbn::checks::{gradient_suite, SUITE_TOLERANCE};
use tvdbn::constraint::{topological_order, train_grcsl};
use tvdbn::data::{
    build_distance_graph, load_distance_table, load_speed_table, make_windows, split_chronological,
    write_speed_table, zscore_fit_apply, PriorGraph, SpeedSeries, SplitManifest, WindowSet,
};
use tvdbn::dgcpm::{
    curriculum_train, denormalize, evaluate_mae, read_forecast_csv, write_forecast_rows, Dgcpm,
    Forecast, GraphedWindows, HistoricalMean, FORECAST_CSV_HEADER,
};
use tvdbn::graphops::normalize_symmetric;
use tvdbn::grcsl::{load_static_graphs, write_graph_rows, Grcsl, GRAPH_CSV_HEADER};
use tvdbn::metrics::evaluate as score_forecasts;
use tvdbn::numerics::seeded_rng;
use tvdbn::synth::{sample_tvdbn, simulate_linear_sem, write_truth_csv};
use tvdbn::{Error, Result};

use crate::config::RunConfig;

const STRUCTURE_CKPT: &str = "structure.ckpt";
const STRUCTURE_HISTORY: &str = "structure_history.csv";
const FORECAST_CKPT: &str = "forecast.ckpt";
const FORECAST_HISTORY: &str = "forecast_history.csv";
const SPLIT_MANIFEST: &str = "split.txt";
const FORECASTS: &str = "forecasts.csv";
const GRAPHS: &str = "graphs.csv";
const TRUTH: &str = "truth_graphs.csv";
const REPORT_CSV: &str = "report.csv";
const REPORT_TXT: &str = "report.txt";
/// Non-binding published figures on the full 207-sensor METR-LA benchmark;
/// desk-scale runs are not expected to match them.
const PUBLISHED_REFERENCE: &str = "\nreference (METR-LA, 207 sensors, not reproduced here): \
horizon 3 MAE 2.73, MAPE 7.04%, RMSE 5.23; 20-node variant horizon 3 MAE 2.72\n";
/// Threshold at which learned intra-slice graphs are checked for cycles.
const DAG_THRESHOLD: f64 = 0.5;

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    info!("wrote {}", path.display());
    Ok(())
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Raw series, prior graph and the normalised series under fixed split
/// boundaries.
struct Dataset {
    prior: PriorGraph,
    manifest: SplitManifest,
    norm: SpeedSeries,
}

impl Dataset {
    fn num_nodes(&self) -> usize {
        self.norm.num_nodes()
    }

    fn segment(&self, name: &str) -> Result<SpeedSeries> {
        let m = &self.manifest;
        let (a, b) = match name {
            "train" => (0, m.train_end),
            "val" => (m.train_end, m.val_end),
            "test" => (m.val_end, m.total_len),
            "all" => (0, m.total_len),
            other => {
                return Err(Error::Config(format!(
                    "config key 'eval_split' must be train, val, test or all, got '{}'",
                    other
                )))
            }
        };
        Ok(self.norm.slice(a, b))
    }

    fn windows(&self, name: &str, stride: usize) -> Result<WindowSet> {
        make_windows(&self.segment(name)?, self.manifest.t_in, self.manifest.t_out, stride)
    }
}

fn load_prior(cfg: &RunConfig, sensor_ids: &[String]) -> Result<PriorGraph> {
    match cfg.path("distance_csv") {
        Some(path) => {
            let entries = load_distance_table(&path)?;
            build_distance_graph(&entries, sensor_ids, cfg.f64("kappa")?)
        }
        None => Ok(PriorGraph::empty(sensor_ids.to_vec())),
    }
}

fn speed_path(cfg: &RunConfig) -> Result<std::path::PathBuf> {
    cfg.path("speed_csv")
        .ok_or_else(|| Error::Config("config key 'speed_csv' is empty".into()))
}

/// Splits the series, fits normalisation on the training segment and
/// persists the boundaries.
fn prepare_fresh(cfg: &RunConfig) -> Result<Dataset> {
    let series = load_speed_table(&speed_path(cfg)?)?;
    let t_in = cfg.usize("t_in")?;
    let t_out = cfg.usize("t_out")?;
    let split = split_chronological(&series, cfg.ratios()?, t_in + t_out)?;
    let (stats, _) = zscore_fit_apply(&split.train)?;
    let manifest = SplitManifest {
        stats,
        total_len: series.len(),
        train_end: split.train_end,
        val_end: split.val_end,
        t_in,
        t_out,
    };
    manifest.save(&cfg.work_path(SPLIT_MANIFEST))?;
    let prior = load_prior(cfg, &series.sensor_ids)?;
    let norm = stats.apply(&series);
    Ok(Dataset { prior, manifest, norm })
}

/// Reuses the boundaries and statistics written by `train-structure`.
fn prepare_saved(cfg: &RunConfig) -> Result<Dataset> {
    let manifest = SplitManifest::load(&cfg.work_path(SPLIT_MANIFEST))?;
    let series = load_speed_table(&speed_path(cfg)?)?;
    if series.len() != manifest.total_len {
        return Err(Error::Data(format!(
            "speed table has {} rows but the split manifest was written for {}",
            series.len(),
            manifest.total_len
        )));
    }
    for (key, saved) in [("t_in", manifest.t_in), ("t_out", manifest.t_out)] {
        if cfg.usize(key)? != saved {
            return Err(Error::Config(format!(
                "config key '{}' is {} but the structure run used {}",
                key,
                cfg.usize(key)?,
                saved
            )));
        }
    }
    let prior = load_prior(cfg, &series.sensor_ids)?;
    let norm = manifest.stats.apply(&series);
    Ok(Dataset { prior, manifest, norm })
}

fn load_structure(cfg: &RunConfig, n: usize) -> Result<Grcsl> {
    let model = Grcsl::load(&cfg.work_path(STRUCTURE_CKPT))?;
    if model.config.num_nodes != n {
        return Err(Error::Checkpoint(format!(
            "structure checkpoint has {} nodes, data has {}",
            model.config.num_nodes, n
        )));
    }
    Ok(model)
}

fn graphs_for<'a>(
    cfg: &RunConfig,
    source: &str,
    windows: &'a WindowSet,
    ds: &Dataset,
) -> Result<GraphedWindows<'a>> {
    match source {
        "grcsl" => {
            let grcsl = load_structure(cfg, ds.num_nodes())?;
            GraphedWindows::from_grcsl(windows, &grcsl, &ds.prior)
        }
        "distance" => {
            if cfg.path("distance_csv").is_none() {
                return Err(Error::Config("graph_source = distance needs config key 'distance_csv'".into()));
            }
            Ok(GraphedWindows::constant(windows, &ds.prior.weights, &ds.prior.weights))
        }
        "static" => {
            let path = cfg
                .path("static_graph_csv")
                .ok_or_else(|| Error::Config("graph_source = static needs config key 'static_graph_csv'".into()))?;
            let (b0, b1) = load_static_graphs(&path, &ds.prior.sensor_ids)?;
            Ok(GraphedWindows::constant(windows, &b0, &b1))
        }
        other => Err(Error::Config(format!(
            "config key 'graph_source' must be grcsl, distance or static, got '{}'",
            other
        ))),
    }
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let sc = cfg.synth()?;
    let truth = sample_tvdbn(&sc)?;
    let mut series = simulate_linear_sem(&truth)?;
    let offset = cfg.f64("synth_offset")?;
    series.values = series.values.map(|v| v + offset);
    if series.values.data().iter().any(|&v| v == 0.0) {
        return Err(Error::Data("a synthetic value is exactly 0 and would read back as missing; change synth_offset".into()));
    }
    let speed = speed_path(cfg)?;
    if let Some(dir) = speed.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_speed_table(&speed, &series)?;
    info!("wrote {}", speed.display());
    ensure_dir(Path::new(cfg.str("work_dir")))?;
    let truth_path = cfg.work_path(TRUTH);
    write_truth_csv(&truth_path, &truth)?;
    info!("wrote {}", truth_path.display());
    info!(
        "{} nodes, {} steps, change points {:?}",
        truth.num_nodes,
        truth.len,
        truth.change_points()
    );
    Ok(())
}

pub fn train_structure(cfg: &RunConfig) -> Result<()> {
    ensure_dir(Path::new(cfg.str("work_dir")))?;
    let ds = prepare_fresh(cfg)?;
    let stride = cfg.usize("train_stride")?;
    let train = ds.windows("train", stride)?;
    let val = ds.windows("val", stride)?;
    info!("{} training and {} validation windows", train.len(), val.len());
    let mut rng = seeded_rng(cfg.u64("seed")?);
    let mut model = Grcsl::new(cfg.grcsl(ds.num_nodes())?, &mut rng)?;
    let history = train_grcsl(&mut model, &train, Some(&val), &ds.prior, &cfg.grcsl_train()?)?;
    model.save(&cfg.work_path(STRUCTURE_CKPT))?;
    history.save(&cfg.work_path(STRUCTURE_HISTORY))?;
    if !history.converged {
        warn!("structure training stopped without reaching xi; the checkpoint holds the smallest-constraint parameters");
    }
    let prior_hat = model.prior_hat(&ds.prior)?;
    let mut dags = 0;
    for w in &train.windows {
        let seq = model.graphs(w, &prior_hat)?;
        if seq.steps.iter().all(|(b0, _)| topological_order(b0, DAG_THRESHOLD).is_some()) {
            dags += 1;
        }
    }
    info!(
        "final constraint sum {:.3e}; {}/{} training windows give acyclic intra-slice graphs at threshold {}",
        history.final_constraint(),
        dags,
        train.len(),
        DAG_THRESHOLD
    );
    Ok(())
}

pub fn train_forecast(cfg: &RunConfig) -> Result<()> {
    let ds = prepare_saved(cfg)?;
    let source = cfg.str("graph_source").to_string();
    let stride = cfg.usize("train_stride")?;
    let train_w = ds.windows("train", stride)?;
    let val_w = ds.windows("val", stride)?;
    let train = graphs_for(cfg, &source, &train_w, &ds)?;
    let val = graphs_for(cfg, &source, &val_w, &ds)?;
    let prior_hat = normalize_symmetric(&ds.prior.weights)?;
    let mut rng = seeded_rng(cfg.u64("seed")?);
    let mut model = Dgcpm::new(cfg.dgcpm(ds.num_nodes())?, &mut rng)?;
    let history = curriculum_train(&mut model, &train, Some(&val), &prior_hat, &cfg.dgcpm_train()?)?;
    let mut meta = BTreeMap::new();
    meta.insert("graph_source".to_string(), source);
    model.save_with_meta(&cfg.work_path(FORECAST_CKPT), &meta)?;
    history.save(&cfg.work_path(FORECAST_HISTORY))?;
    let baseline = HistoricalMean::fit(&ds.segment("train")?);
    let std = ds.manifest.stats.std;
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.4}", x * std));
    info!(
        "best epoch {}: validation MAE {} vs historical mean {} (original units)",
        history.best_epoch,
        fmt(evaluate_mae(&model, &val, &prior_hat)?),
        fmt(baseline.mae(&val_w))
    );
    Ok(())
}

pub fn predict(cfg: &RunConfig) -> Result<()> {
    let ds = prepare_saved(cfg)?;
    let (model, meta) = Dgcpm::load_with_meta(&cfg.work_path(FORECAST_CKPT))?;
    if model.config.num_nodes != ds.num_nodes() {
        return Err(Error::Checkpoint(format!(
            "forecast checkpoint has {} nodes, data has {}",
            model.config.num_nodes,
            ds.num_nodes()
        )));
    }
    let source = meta.get("graph_source").cloned().unwrap_or_else(|| "grcsl".to_string());
    let windows = ds.windows(cfg.str("eval_split"), cfg.usize("eval_stride")?)?;
    let graphed = graphs_for(cfg, &source, &windows, &ds)?;
    let prior_hat = normalize_symmetric(&ds.prior.weights)?;
    let path = cfg.work_path(FORECASTS);
    let mut buf = Vec::new();
    writeln!(buf, "{}", FORECAST_CSV_HEADER).map_err(io_err(&path))?;
    for (w, gs) in windows.windows.iter().zip(&graphed.graphs) {
        let pred = model.forward(w, gs, &prior_hat)?;
        let forecast = Forecast {
            window_start_ts: w.start_ts,
            values: denormalize(&pred, &ds.manifest.stats),
        };
        if !forecast.values.all_finite() {
            return Err(Error::Numerical(format!("non-finite forecast for window starting {}", w.start_ts)));
        }
        write_forecast_rows(&mut buf, &forecast, w, &ds.manifest.stats, &ds.norm.sensor_ids)
            .map_err(io_err(&path))?;
    }
    write_file(&path, &buf)?;
    info!("{} windows forecast with {} graphs", windows.len(), source);
    Ok(())
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let path = cfg.path("forecast_csv").unwrap_or_else(|| cfg.work_path(FORECASTS));
    let table = read_forecast_csv(&path)?;
    let t_out = table.predicted.first().map_or(0, |p| p.rows());
    let horizons = cfg.horizons()?;
    if let Some(h) = horizons.iter().find(|&&h| h == 0 || h > t_out) {
        return Err(Error::Config(format!(
            "config key 'horizons' lists {} but the forecasts cover steps 1..={}",
            h, t_out
        )));
    }
    let report = score_forecasts(&table.predicted, &table.actual, &table.valid, &horizons, cfg.f64("mape_floor")?)?;
    let mut csv = Vec::new();
    let csv_path = cfg.work_path(REPORT_CSV);
    report.write_csv(&mut csv).map_err(io_err(&csv_path))?;
    write_file(&csv_path, &csv)?;
    let text = format!("{}{}", report, PUBLISHED_REFERENCE);
    write_file(&cfg.work_path(REPORT_TXT), text.as_bytes())?;
    for line in report.to_string().lines() {
        info!("{}", line);
    }
    Ok(())
}

pub fn export_graphs(cfg: &RunConfig) -> Result<()> {
    let ds = prepare_saved(cfg)?;
    let model = load_structure(cfg, ds.num_nodes())?;
    let windows = ds.windows(cfg.str("eval_split"), cfg.usize("eval_stride")?)?;
    let prior_hat = model.prior_hat(&ds.prior)?;
    let threshold = cfg.f64("edge_threshold")?;
    let path = cfg.work_path(GRAPHS);
    let mut buf = Vec::new();
    writeln!(buf, "{}", GRAPH_CSV_HEADER).map_err(io_err(&path))?;
    let mut cyclic = 0;
    for w in &windows.windows {
        let seq = model.graphs(w, &prior_hat)?;
        if seq.steps.iter().any(|(b0, _)| topological_order(b0, DAG_THRESHOLD).is_none()) {
            cyclic += 1;
        }
        write_graph_rows(&mut buf, w.start_ts, &seq, &ds.norm.sensor_ids, threshold).map_err(io_err(&path))?;
    }
    write_file(&path, &buf)?;
    if cyclic > 0 {
        warn!("{} of {} windows have a cyclic intra-slice graph at threshold {}", cyclic, windows.len(), DAG_THRESHOLD);
    } else {
        info!("all {} windows have acyclic intra-slice graphs at threshold {}", windows.len(), DAG_THRESHOLD);
    }
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig) -> Result<()> {
    let reports = gradient_suite(cfg.u64("seed")?)?;
    let mut failed = Vec::new();
    for r in &reports {
        let ok = r.passes(SUITE_TOLERANCE);
        println!("{} {}", if ok { "PASS" } else { "FAIL" }, r);
        if !ok {
            failed.push(r.op_name.clone());
        }
    }
    if failed.is_empty() {
        println!("all {} gradient checks below {:e}", reports.len(), SUITE_TOLERANCE);
        Ok(())
    } else {
        Err(Error::Numerical(format!("gradient check failed for {}", failed.join(", "))))
    }
}
