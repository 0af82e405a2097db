use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "synth_nodes=5",
    "synth_len=300",
    "t_in=6",
    "t_out=3",
    "horizons=1,3",
    "feature_width=2",
    "gconv_layers=1",
    "heads=2",
    "att_dim=4",
    "gru_hidden=4",
    "sem_width=3",
    "mlp_hidden=4",
    "inner_epochs=1",
    "max_outer_iters=2",
    "train_stride=3",
    "dynamic_width=4",
    "prior_width=2",
    "forecast_layers=1",
    "forecast_epochs=4",
];

fn tvdbn(work: &Path, extra: &[&str], args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tvdbn"));
    cmd.args(args).env_remove("TVDBN_SEED").env("RUST_LOG", "warn");
    let work_set = format!("work_dir={}", work.display());
    let speed_set = format!("speed_csv={}", work.join("speed.csv").display());
    for kv in SMALL.iter().copied().chain([work_set.as_str(), speed_set.as_str()]).chain(extra.iter().copied()) {
        cmd.arg("--set").arg(kv);
    }
    cmd.output().unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn pipeline(work: &Path) {
    for step in ["synth", "train-structure", "train-forecast", "predict", "evaluate", "export-graphs"] {
        ok(tvdbn(work, &[], &[step]));
    }
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(tvdbn(dir.path(), &[], &["gradcheck"]));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines.len() >= 10);
    assert!(lines[..lines.len() - 1].iter().all(|l| l.starts_with("PASS")), "{}", text);
    assert!(lines[lines.len() - 1].starts_with("all "));
}

#[test]
fn unknown_key_and_bad_value_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(tvdbn(dir.path(), &["no_such_key=1"], &["synth"]).status.code(), Some(1));
    assert_eq!(tvdbn(dir.path(), &["t_in=abc"], &["synth"]).status.code(), Some(1));
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "seed = 1\nmystery = 2\n").unwrap();
    let out = tvdbn(dir.path(), &[], &["synth", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_data_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(tvdbn(dir.path(), &[], &["train-structure"]).status.code(), Some(2));
}

#[test]
fn evaluating_a_perfect_forecast_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fc.csv");
    let mut text = String::from("window_start_ts,horizon_step,sensor_id,predicted,actual,valid\n");
    for (w, ts) in ["2012-03-01 00:00:00", "2012-03-01 00:05:00"].iter().enumerate() {
        for s in 1..=3 {
            for id in ["a", "b"] {
                let v = 50.0 + (w * 7 + s) as f64;
                text.push_str(&format!("{},{},{},{},{},1\n", ts, s, id, v, v));
            }
        }
    }
    std::fs::write(&path, text).unwrap();
    let fc = format!("forecast_csv={}", path.display());
    ok(tvdbn(dir.path(), &[&fc], &["evaluate"]));
    let report = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next().unwrap(), "horizon,mae,rmse,mape,count");
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        for c in &cells[1..4] {
            assert_eq!(c.parse::<f64>().unwrap(), 0.0, "{}", line);
        }
    }
    // horizon 12 is beyond the three steps in the file
    assert_eq!(tvdbn(dir.path(), &[&fc, "horizons=12"], &["evaluate"]).status.code(), Some(1));
}

#[test]
fn pipeline_is_deterministic_and_exports_acyclic_graphs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for f in [
        "speed.csv",
        "truth_graphs.csv",
        "structure_history.csv",
        "forecast_history.csv",
        "forecasts.csv",
        "graphs.csv",
        "report.csv",
    ] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{} differs between runs", f);
    }

    // per (window, step) intra-slice block must be acyclic
    let text = std::fs::read_to_string(a.path().join("graphs.csv")).unwrap();
    let mut blocks: std::collections::BTreeMap<(String, String), Vec<(String, String)>> = Default::default();
    for line in text.lines().skip(1) {
        let c: Vec<&str> = line.split(',').collect();
        if c[2] == "0" {
            blocks.entry((c[0].into(), c[1].into())).or_default().push((c[3].into(), c[4].into()));
        }
    }
    for edges in blocks.values() {
        assert!(acyclic(edges), "cycle among {:?}", edges);
    }

    let other = tempfile::tempdir().unwrap();
    ok(tvdbn(other.path(), &["seed=5"], &["synth"]));
    assert_ne!(
        std::fs::read(a.path().join("speed.csv")).unwrap(),
        std::fs::read(other.path().join("speed.csv")).unwrap()
    );
}

/// Kahn's algorithm over named edges.
fn acyclic(edges: &[(String, String)]) -> bool {
    let mut nodes: Vec<&String> = edges.iter().flat_map(|(s, d)| [s, d]).collect();
    nodes.sort();
    nodes.dedup();
    let mut indeg: Vec<usize> = nodes.iter().map(|n| edges.iter().filter(|e| &&e.1 == n).count()).collect();
    let mut ready: Vec<usize> = (0..nodes.len()).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0;
    while let Some(i) = ready.pop() {
        seen += 1;
        for e in edges.iter().filter(|e| &e.0 == nodes[i]) {
            let j = nodes.iter().position(|n| *n == &e.1).unwrap();
            indeg[j] -= 1;
            if indeg[j] == 0 {
                ready.push(j);
            }
        }
    }
    seen == nodes.len()
}
