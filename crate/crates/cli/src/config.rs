//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use tvdbn::constraint::GrcslTrainConfig;
use tvdbn::dgcpm::{DgcpmConfig, DgcpmTrainConfig};
use tvdbn::grcsl::GrcslConfig;
use tvdbn::synth::SynthConfig;
use tvdbn::{Error, Result};

/// Every accepted key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "seed for initialisation, shuffling and sampling (TVDBN_SEED overrides)"),
    ("work_dir", "run", "directory for checkpoints, histories and reports"),
    ("speed_csv", "run/speed.csv", "speed table: timestamp column then one column per sensor"),
    ("distance_csv", "", "distance table from,to,dist; empty means no prior graph"),
    ("kappa", "0.1", "distance-kernel sparsity threshold"),
    ("t_in", "12", "input window length"),
    ("t_out", "12", "forecast horizon"),
    ("train_ratio", "0.7", "chronological training fraction"),
    ("val_ratio", "0.1", "chronological validation fraction"),
    ("train_stride", "1", "step between consecutive training windows"),
    ("eval_stride", "1", "step between consecutive evaluation windows"),
    // structure learner
    ("feature_width", "8", "width of the prior-graph features"),
    ("gconv_layers", "4", "layers per graph convolution"),
    ("heads", "4", "attention heads"),
    ("att_dim", "16", "attention projection width"),
    ("gru_hidden", "32", "recurrent hidden width"),
    ("sem_width", "16", "reconstruction graph-convolution width"),
    ("mlp_hidden", "32", "reconstruction MLP hidden width"),
    ("tau", "0.2", "sigmoid temperature"),
    ("head_bias_init", "-1.0", "initial bias of the final graph-head layer"),
    ("use_prior", "true", "feed the distance graph into feature extraction"),
    ("sem_exclude_self", "false", "drop a node's own current value from its intra-slice reconstruction"),
    ("lambda", "2e-5", "L1 weight on both graphs"),
    ("eta", "10", "penalty growth factor"),
    ("gamma", "0.5", "required constraint shrink ratio"),
    ("xi", "1e-8", "constraint tolerance that ends training"),
    ("alpha0", "0", "initial Lagrange multiplier"),
    ("rho0", "1e-3", "initial penalty"),
    ("inner_epochs", "5", "epochs per augmented-Lagrangian subproblem"),
    ("max_outer_iters", "30", "augmented-Lagrangian iteration cap"),
    ("structure_lr", "1e-3", "structure-learner learning rate"),
    ("structure_batch_size", "16", "structure-learner batch size"),
    ("structure_grad_clip", "10", "global gradient-norm clip of the structure learner"),
    // forecaster
    ("graph_source", "grcsl", "forecaster graphs: grcsl, distance or static"),
    ("static_graph_csv", "", "edge CSV (lag,src_id,dst_id,weight columns) for graph_source = static"),
    ("dynamic_width", "16", "dynamic convolution width"),
    ("prior_width", "8", "prior-branch width"),
    ("forecast_layers", "4", "layers per forecaster graph convolution"),
    ("forecast_epochs", "30", "forecaster epoch cap"),
    ("curriculum_step", "1", "epochs per curriculum horizon increment"),
    ("forecast_lr", "1e-3", "forecaster learning rate"),
    ("forecast_batch_size", "16", "forecaster batch size"),
    ("patience", "10", "early-stopping patience at the full horizon"),
    ("forecast_grad_clip", "5", "global gradient-norm clip of the forecaster"),
    // evaluation and export
    ("eval_split", "test", "split used by predict and export-graphs: train, val, test or all"),
    ("horizons", "3,6,12", "reported horizon steps"),
    ("mape_floor", "1.0", "MAPE ignores actual values below this magnitude"),
    ("edge_threshold", "0.5", "minimum exported edge weight"),
    ("forecast_csv", "", "forecast file read by evaluate; empty means work_dir/forecasts.csv"),
    // synthetic data
    ("synth_nodes", "10", "synthetic node count"),
    ("synth_regimes", "4", "synthetic regime count"),
    ("synth_density", "0.2", "synthetic edge probability"),
    ("synth_len", "2000", "synthetic series length"),
    ("synth_noise_std", "0.1", "synthetic innovation std"),
    ("synth_weight_min", "0.3", "smallest synthetic edge weight magnitude"),
    ("synth_weight_max", "0.8", "largest synthetic edge weight magnitude"),
    ("synth_signed", "false", "draw random signs for synthetic weights"),
    ("synth_offset", "60", "constant added to synthetic values so they read like speeds"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown config key '{}'", key))),
        }
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected 'key = value', got '{}'", origin, no + 1, raw.trim()))
            })?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("{}:{}: {}", origin, no + 1, e)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config file {}: {}", path.display(), e)))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Parses every typed key so a malformed value fails before any work starts.
    pub fn check(&self) -> Result<()> {
        self.u64("seed")?;
        for k in [
            "t_in", "t_out", "train_stride", "eval_stride", "feature_width", "gconv_layers", "heads", "att_dim",
            "gru_hidden", "sem_width", "mlp_hidden", "inner_epochs", "max_outer_iters", "structure_batch_size",
            "dynamic_width", "prior_width", "forecast_layers", "forecast_epochs", "curriculum_step",
            "forecast_batch_size", "patience", "synth_nodes", "synth_regimes", "synth_len",
        ] {
            self.usize(k)?;
        }
        for k in [
            "kappa", "tau", "head_bias_init", "lambda", "eta", "gamma", "xi", "alpha0", "rho0", "structure_lr",
            "structure_grad_clip", "forecast_lr", "forecast_grad_clip", "mape_floor", "edge_threshold",
            "synth_density", "synth_noise_std", "synth_weight_min", "synth_weight_max", "synth_offset",
        ] {
            self.f64(k)?;
        }
        for k in ["use_prior", "sem_exclude_self", "synth_signed"] {
            self.bool(k)?;
        }
        self.horizons()?;
        self.ratios()?;
        Ok(())
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("key is declared")
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T> {
        self.str(key)
            .parse()
            .map_err(|_| Error::Config(format!("config key '{}' must be {}, got '{}'", key, what, self.str(key))))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parse(key, "a non-negative integer")
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.parse(key, "a non-negative integer")
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v: f64 = self.parse(key, "a number")?;
        if !v.is_finite() {
            return Err(Error::Config(format!("config key '{}' must be finite", key)));
        }
        Ok(v)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        self.parse(key, "true or false")
    }

    /// Empty values map to `None`.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let s = self.str(key);
        (!s.is_empty()).then(|| PathBuf::from(s))
    }

    pub fn work_path(&self, file: &str) -> PathBuf {
        Path::new(self.str("work_dir")).join(file)
    }

    pub fn horizons(&self) -> Result<Vec<usize>> {
        self.str("horizons")
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("config key 'horizons' has a bad entry '{}'", s)))
            })
            .collect()
    }

    pub fn ratios(&self) -> Result<(f64, f64, f64)> {
        let tr = self.f64("train_ratio")?;
        let va = self.f64("val_ratio")?;
        let te = 1.0 - tr - va;
        if !(tr > 0.0 && va >= 0.0 && te > 0.0) {
            return Err(Error::Config(format!(
                "train_ratio {} and val_ratio {} must be positive and leave room for a test split",
                tr, va
            )));
        }
        Ok((tr, va, te))
    }

    pub fn grcsl(&self, num_nodes: usize) -> Result<GrcslConfig> {
        let c = GrcslConfig {
            num_nodes,
            feature_width: self.usize("feature_width")?,
            gconv_layers: self.usize("gconv_layers")?,
            heads: self.usize("heads")?,
            att_dim: self.usize("att_dim")?,
            gru_hidden: self.usize("gru_hidden")?,
            sem_width: self.usize("sem_width")?,
            mlp_hidden: self.usize("mlp_hidden")?,
            tau: self.f64("tau")?,
            head_bias_init: self.f64("head_bias_init")?,
            use_prior: self.bool("use_prior")?,
            sem_exclude_self: self.bool("sem_exclude_self")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn grcsl_train(&self) -> Result<GrcslTrainConfig> {
        let c = GrcslTrainConfig {
            lambda: self.f64("lambda")?,
            eta: self.f64("eta")?,
            gamma: self.f64("gamma")?,
            xi: self.f64("xi")?,
            alpha0: self.f64("alpha0")?,
            rho0: self.f64("rho0")?,
            inner_epochs: self.usize("inner_epochs")?,
            max_outer_iters: self.usize("max_outer_iters")?,
            learning_rate: self.f64("structure_lr")?,
            batch_size: self.usize("structure_batch_size")?,
            max_grad_norm: self.f64("structure_grad_clip")?,
            seed: self.u64("seed")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn dgcpm(&self, num_nodes: usize) -> Result<DgcpmConfig> {
        let c = DgcpmConfig {
            num_nodes,
            t_in: self.usize("t_in")?,
            t_out: self.usize("t_out")?,
            dynamic_width: self.usize("dynamic_width")?,
            prior_width: self.usize("prior_width")?,
            gconv_layers: self.usize("forecast_layers")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn dgcpm_train(&self) -> Result<DgcpmTrainConfig> {
        let c = DgcpmTrainConfig {
            epochs: self.usize("forecast_epochs")?,
            curriculum_step: self.usize("curriculum_step")?,
            learning_rate: self.f64("forecast_lr")?,
            batch_size: self.usize("forecast_batch_size")?,
            patience: self.usize("patience")?,
            max_grad_norm: self.f64("forecast_grad_clip")?,
            seed: self.u64("seed")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        let c = SynthConfig {
            num_nodes: self.usize("synth_nodes")?,
            num_regimes: self.usize("synth_regimes")?,
            density: self.f64("synth_density")?,
            weight_range: (self.f64("synth_weight_min")?, self.f64("synth_weight_max")?),
            signed: self.bool("synth_signed")?,
            len: self.usize("synth_len")?,
            noise_std: self.f64("synth_noise_std")?,
            seed: self.u64("seed")?,
        };
        c.validate()?;
        Ok(c)
    }

    /// `key = default  # description` lines for every key.
    pub fn describe() -> String {
        KEYS.iter()
            .map(|(k, v, d)| format!("{:<22} = {:<14} # {}\n", k, v, d))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        let c = RunConfig::default();
        c.grcsl(5).unwrap();
        c.grcsl_train().unwrap();
        c.dgcpm(5).unwrap();
        c.dgcpm_train().unwrap();
        c.synth().unwrap();
        assert_eq!(c.horizons().unwrap(), vec![3, 6, 12]);
    }

    #[test]
    fn text_with_comments() {
        let mut c = RunConfig::default();
        c.apply_text("# header\nt_in = 6  # shorter\n\nlambda=0.5\n", "cfg").unwrap();
        assert_eq!(c.usize("t_in").unwrap(), 6);
        assert_eq!(c.f64("lambda").unwrap(), 0.5);
    }

    #[test]
    fn unknown_key_names_the_key() {
        let mut c = RunConfig::default();
        let err = c.apply_text("t_inn = 6\n", "cfg").unwrap_err().to_string();
        assert!(err.contains("t_inn"), "{}", err);
        assert!(err.contains("cfg:1"), "{}", err);
    }

    #[test]
    fn bad_value_names_the_key() {
        let mut c = RunConfig::default();
        c.set("heads", "four").unwrap();
        let err = c.grcsl(3).unwrap_err().to_string();
        assert!(err.contains("heads"), "{}", err);
    }
}
