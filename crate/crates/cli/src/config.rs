//! Run configuration: a flat `key = value` file overridden by flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hvgnn::data::FeatureSource;
use hvgnn::vgae::{AdamConfig, DecoderConfig, EvalSetting, KlScaling, ModelConfig, ModelKind, TrainConfig};

use crate::error::CliError;

/// Every knob of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub geometry: ModelKind,
    pub dim: usize,
    pub layers: usize,
    pub log_k: f64,
    pub trainable_k: bool,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub max_neighbors: usize,
    pub fd_r: f64,
    pub fd_t: f64,
    pub n_mc: usize,
    pub kl_scaling: KlScaling,
    pub link_prediction: bool,
    pub node_classification: bool,
    pub split_fractions: (f64, f64, f64),
    pub split: EvalSetting,
    pub features: Option<FeatureSource>,
    pub data: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        Self {
            geometry: m.kind,
            dim: m.dim,
            layers: m.layers,
            log_k: m.log_k,
            trainable_k: m.trainable_k,
            lr: t.adam.lr,
            epochs: t.epochs,
            batch_size: t.batch_size,
            max_steps: t.max_steps,
            seed: t.seed,
            max_neighbors: m.max_neighbors,
            fd_r: m.decoder.fd_r,
            fd_t: m.decoder.fd_t,
            n_mc: t.n_mc,
            kl_scaling: t.kl_scaling,
            link_prediction: true,
            node_classification: true,
            split_fractions: (0.8, 0.05, 0.15),
            split: EvalSetting::Transductive,
            features: None,
            data: None,
            labels: None,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.trim().parse().map_err(|_| CliError::Config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Config(format!("invalid boolean '{value}' for '{key}'"))),
    }
}

/// Parses `a,b,c` into three fractions.
pub fn parse_fractions(value: &str) -> Result<(f64, f64, f64), CliError> {
    let parts: Vec<f64> = value
        .split(',')
        .map(|p| parse::<f64>("split_fractions", p))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(CliError::Config(format!("split_fractions needs three values, got '{value}'"))),
    }
}

/// Parses a comma-separated list of `log K` values.
pub fn parse_grid(value: &str) -> Result<Vec<f64>, CliError> {
    let grid: Vec<f64> = value.split(',').map(|p| parse::<f64>("grid", p)).collect::<Result<_, _>>()?;
    if grid.is_empty() {
        return Err(CliError::Config("empty curvature grid".into()));
    }
    Ok(grid)
}

fn kl_name(k: KlScaling) -> &'static str {
    match k {
        KlScaling::PerQuery => "per_query",
        KlScaling::PerNode { .. } => "per_node",
    }
}

fn feature_name(f: FeatureSource) -> &'static str {
    match f {
        FeatureSource::Columns => "columns",
        FeatureSource::Degree => "degree",
        FeatureSource::Identity => "identity",
    }
}

fn split_name(s: EvalSetting) -> &'static str {
    match s {
        EvalSetting::Transductive => "transductive",
        EvalSetting::Inductive => "inductive",
    }
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "geometry" => self.geometry = v.parse()?,
            "dim" => self.dim = parse(key, v)?,
            "layers" => self.layers = parse(key, v)?,
            "logk" => self.log_k = parse(key, v)?,
            "trainable_k" => self.trainable_k = parse_bool(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "max_steps" => self.max_steps = if v == "none" { None } else { Some(parse(key, v)?) },
            "seed" => self.seed = parse(key, v)?,
            "max_neighbors" => self.max_neighbors = parse(key, v)?,
            "fd_r" => self.fd_r = parse(key, v)?,
            "fd_t" => self.fd_t = parse(key, v)?,
            "n_mc" => self.n_mc = parse(key, v)?,
            "kl_scaling" => self.kl_scaling = v.parse()?,
            "link_prediction" => self.link_prediction = parse_bool(key, v)?,
            "node_classification" => self.node_classification = parse_bool(key, v)?,
            "split_fractions" => self.split_fractions = parse_fractions(v)?,
            "split" => self.split = v.parse()?,
            "features" => self.features = if v == "auto" { None } else { Some(v.parse()?) },
            "data" => self.data = Some(PathBuf::from(v)),
            "labels" => self.labels = Some(PathBuf::from(v)),
            "out" => self.out = PathBuf::from(v),
            other => return Err(CliError::Config(format!("unknown configuration key '{other}'"))),
        }
        Ok(())
    }

    /// Reads settings from text; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Canonical `key = value` lines, one per setting, in a fixed order.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("geometry", self.geometry.to_string());
        put("dim", self.dim.to_string());
        put("layers", self.layers.to_string());
        put("logk", self.log_k.to_string());
        put("trainable_k", self.trainable_k.to_string());
        put("lr", self.lr.to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("max_steps", self.max_steps.map_or("none".into(), |m| m.to_string()));
        put("seed", self.seed.to_string());
        put("max_neighbors", self.max_neighbors.to_string());
        put("fd_r", self.fd_r.to_string());
        put("fd_t", self.fd_t.to_string());
        put("n_mc", self.n_mc.to_string());
        put("kl_scaling", kl_name(self.kl_scaling).into());
        put("link_prediction", self.link_prediction.to_string());
        put("node_classification", self.node_classification.to_string());
        let (a, b, c) = self.split_fractions;
        put("split_fractions", format!("{a},{b},{c}"));
        put("split", split_name(self.split).into());
        put("features", self.features.map_or("auto", feature_name).into());
        if let Some(p) = &self.data {
            put("data", p.display().to_string());
        }
        if let Some(p) = &self.labels {
            put("labels", p.display().to_string());
        }
        put("out", self.out.display().to_string());
        s
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.batch_size == 0 {
            return Err(CliError::Config("batch_size must be positive".into()));
        }
        if self.n_mc == 0 {
            return Err(CliError::Config("n_mc must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(CliError::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if !self.link_prediction && !self.node_classification {
            return Err(CliError::Config("at least one of link_prediction and node_classification is required".into()));
        }
        self.model_config(0)?.validate()?;
        Ok(())
    }

    /// Model hyperparameters; `n_classes = 0` disables the classifier.
    pub fn model_config(&self, n_classes: usize) -> Result<ModelConfig, CliError> {
        Ok(ModelConfig {
            kind: self.geometry,
            dim: self.dim,
            layers: self.layers,
            max_neighbors: self.max_neighbors,
            log_k: self.log_k,
            trainable_k: self.trainable_k,
            decoder: DecoderConfig::new(self.fd_r, self.fd_t, n_classes)?,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig { lr: self.lr, ..AdamConfig::default() },
            epochs: self.epochs,
            batch_size: self.batch_size,
            max_steps: self.max_steps,
            n_mc: self.n_mc,
            seed: self.seed,
            kl_scaling: self.kl_scaling,
            link_prediction: self.link_prediction,
        }
    }
}

/// Parses echoed `key = value` lines back into a map.
pub fn parse_echo(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}
