mod common;

use common::*;
use tvdbn::checks::random_window;
use tvdbn::data::{NormStats, WindowSet};
use tvdbn::dgcpm::*;
use tvdbn::grcsl::CausalGraphSeq;
use tvdbn::numerics::{seeded_rng, Tensor};

fn small(n: usize, t_in: usize, t_out: usize, seed: u64) -> Dgcpm {
    let cfg = DgcpmConfig {
        dynamic_width: 4,
        prior_width: 3,
        gconv_layers: 2,
        ..DgcpmConfig::new(n, t_in, t_out)
    };
    Dgcpm::new(cfg, &mut seeded_rng(seed)).unwrap()
}

fn windows(seed: u64, count: usize, t_in: usize, t_out: usize, n: usize) -> WindowSet {
    let mut rng = seeded_rng(seed);
    WindowSet {
        windows: (0..count).map(|_| random_window(&mut rng, t_in, t_out, n)).collect(),
        t_in,
        t_out,
    }
}

#[test]
fn forecast_ignores_the_target() {
    let (n, t_in, t_out) = (4, 5, 3);
    let model = small(n, t_in, t_out, 1);
    let ws = windows(2, 1, t_in, t_out, n);
    let data = GraphedWindows::constant(&ws, &Tensor::zeros(&[n, n]), &Tensor::eye(n));
    let prior_hat = tvdbn::graphops::normalize_symmetric(&Tensor::full(&[n, n], 1.0)).unwrap();
    let a = model.forward(&ws.windows[0], &data.graphs[0], &prior_hat).unwrap();
    assert_eq!(a.shape(), &[t_out, n]);
    let mut w = ws.windows[0].clone();
    w.target = w.target.map(|v| v + 100.0);
    assert_eq!(model.forward(&w, &data.graphs[0], &prior_hat).unwrap(), a);
}

#[test]
fn wrong_graph_count_is_rejected() {
    let model = small(3, 4, 2, 3);
    let ws = windows(4, 1, 4, 2, 3);
    let short = CausalGraphSeq {
        steps: vec![(Tensor::zeros(&[3, 3]), Tensor::zeros(&[3, 3])); 2],
    };
    assert!(model.forward(&ws.windows[0], &short, &Tensor::eye(3)).is_err());
}

#[test]
fn curriculum_training_is_deterministic_and_keeps_the_best_epoch() {
    let (n, t_in, t_out) = (3, 4, 3);
    let train = windows(5, 12, t_in, t_out, n);
    let val = windows(6, 4, t_in, t_out, n);
    let b0 = Tensor::zeros(&[n, n]);
    let b1 = Tensor::eye(n);
    let cfg = DgcpmTrainConfig {
        epochs: 6,
        batch_size: 4,
        learning_rate: 1e-2,
        patience: 2,
        ..DgcpmTrainConfig::default()
    };
    let prior_hat = Tensor::eye(n);
    let run = || {
        let mut model = small(n, t_in, t_out, 7);
        let tr = GraphedWindows::constant(&train, &b0, &b1);
        let va = GraphedWindows::constant(&val, &b0, &b1);
        let h = curriculum_train(&mut model, &tr, Some(&va), &prior_hat, &cfg).unwrap();
        let best = evaluate_mae(&model, &va, &prior_hat).unwrap();
        (h, model, best)
    };
    let (h, model, best) = run();
    let (h2, model2, _) = run();
    assert_eq!(h, h2);
    assert_eq!(model, model2);
    let horizons: Vec<usize> = h.epochs.iter().map(|r| r.horizon).collect();
    assert_eq!(&horizons[..3], &[1, 2, 3]);
    assert!(horizons.iter().skip(3).all(|&k| k == 3));
    let best_val = h.epochs[h.best_epoch].val_mae.unwrap();
    assert!((best.unwrap() - best_val).abs() < 1e-12);
    assert!(h.epochs.iter().all(|r| r.val_mae.unwrap() >= best_val || r.horizon < t_out));
}

#[test]
fn checkpoint_round_trip_with_meta() {
    let model = small(3, 4, 2, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.ckpt");
    let mut meta = std::collections::BTreeMap::new();
    meta.insert("graph_source".to_string(), "grcsl".to_string());
    model.save_with_meta(&path, &meta).unwrap();
    let (back, meta2) = Dgcpm::load_with_meta(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(meta2.get("graph_source").map(String::as_str), Some("grcsl"));
}

#[test]
fn forecast_csv_round_trip() {
    let n = 2;
    let ws = windows(9, 2, 3, 2, n);
    let stats = NormStats { mean: 50.0, std: 10.0 };
    let ids = vec!["a".to_string(), "b".to_string()];
    let mut text = format!("{}\n", FORECAST_CSV_HEADER).into_bytes();
    let mut preds = Vec::new();
    for (k, w) in ws.windows.iter().enumerate() {
        let mut w = w.clone();
        w.start_ts += 300 * k as i64;
        let f = Forecast {
            window_start_ts: w.start_ts,
            values: Tensor::from_fn(2, n, |s, i| 40.0 + (s * 2 + i + k) as f64),
        };
        write_forecast_rows(&mut text, &f, &w, &stats, &ids).unwrap();
        preds.push(f.values);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fc.csv");
    std::fs::write(&path, text).unwrap();
    let table = read_forecast_csv(&path).unwrap();
    assert_eq!(table.sensor_ids, ids);
    assert_eq!(table.predicted, preds);
    for (k, w) in ws.windows.iter().enumerate() {
        let want = to_mat(&w.target.map(|x| stats.invert_value(x)));
        assert!(max_abs_diff(&want, &table.actual[k]) < 1e-9);
    }
}

#[test]
fn historical_mean_uses_observed_cells() {
    let ws = windows(10, 3, 2, 2, 2);
    let hm = HistoricalMean { means: vec![0.0, 0.0] };
    let mut sum = 0.0;
    let mut count = 0.0;
    for w in &ws.windows {
        for (v, m) in w.target.data().iter().zip(w.target_mask.data()) {
            sum += m * v.abs();
            count += m;
        }
    }
    assert!((hm.mae(&ws).unwrap() - sum / count).abs() < 1e-12);
}
