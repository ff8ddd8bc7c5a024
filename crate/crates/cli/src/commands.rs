//! Command implementations.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hvgnn::data::{
    chronological_split, convert_interactions, generate_synthetic, load_edge_list, load_labels, save_edge_list,
    write_labels, FormatConfig, Split, SyntheticConfig, TemporalGraph,
};
use hvgnn::tgnn::GeometryKind;
use hvgnn::vgae::{evaluate, train, EvalReport, EvalSetting, Model, TrainState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::CliError;

pub const METRICS_HEADER: &str = "step,elbo,recon,kl,grad_norm";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const DEFAULT_GRID: [f64; 5] = [-3.0, -2.0, -1.0, 0.0, 1.0];

/// A loaded dataset with its split.
pub struct Dataset {
    pub graph: TemporalGraph,
    pub split: Split,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let path = cfg.data.as_ref().ok_or_else(|| CliError::Config("no dataset given (--data)".into()))?;
    if !path.is_file() {
        return Err(CliError::MissingData(path.display().to_string()));
    }
    let mut graph = load_edge_list(path, FormatConfig { features: cfg.features })?;
    if let Some(lp) = &cfg.labels {
        if !lp.is_file() {
            return Err(CliError::MissingData(lp.display().to_string()));
        }
        let labels = load_labels(lp, graph.n_nodes())?;
        graph = graph.with_labels(labels)?;
    }
    let split = chronological_split(&graph, cfg.split_fractions)?;
    Ok(Dataset { graph, split })
}

fn n_classes(cfg: &RunConfig, g: &TemporalGraph) -> usize {
    if cfg.node_classification && g.n_classes() >= 2 {
        g.n_classes()
    } else {
        0
    }
}

/// A freshly initialised model for `cfg` on `g`.
pub fn init_model(cfg: &RunConfig, g: &TemporalGraph) -> Result<Model, CliError> {
    let mc = cfg.model_config(n_classes(cfg, g))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(Model::init(mc, g.n_features(), &mut rng)?)
}

/// Outcome of a training run.
pub struct TrainOutcome {
    pub model: Model,
    pub steps: usize,
    /// Set when the run stopped on a non-finite objective.
    pub diverged: Option<String>,
}

/// Trains, streaming one CSV row per step into `metrics` when given.
pub fn run_training(cfg: &RunConfig, data: &Dataset, mut metrics: Option<&mut dyn Write>) -> Result<TrainOutcome, CliError> {
    let model = init_model(cfg, &data.graph)?;
    let tc = cfg.train_config();
    let mut state = TrainState::new(model, tc.adam, cfg.seed);
    if let Some(w) = metrics.as_deref_mut() {
        writeln!(w, "{METRICS_HEADER}")?;
    }
    let result = train(&mut state, &data.graph, &data.split, &tc, |m, _| {
        if let Some(w) = metrics.as_deref_mut() {
            writeln!(w, "{},{},{},{},{}", m.step, m.elbo, m.recon, m.kl, m.grad_norm)
                .map_err(|e| hvgnn::Error::Io(e.to_string()))?;
        }
        Ok(())
    });
    let diverged = match result {
        Ok(()) => None,
        Err(hvgnn::Error::NonFinite(msg)) => Some(msg),
        Err(e) => return Err(e.into()),
    };
    Ok(TrainOutcome { steps: state.step, model: state.model, diverged })
}

fn echo_for(cfg: &RunConfig, model: &Model) -> String {
    checkpoint::shape_echo(&cfg.echo(), model)
}

fn create_out(cfg: &RunConfig) -> Result<&Path, CliError> {
    std::fs::create_dir_all(&cfg.out)?;
    Ok(&cfg.out)
}

/// `train`: writes the metrics CSV and a checkpoint; a diverged run keeps
/// the last good parameters and reports exit code 3.
pub fn cmd_train(cfg: &RunConfig) -> Result<String, CliError> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let out = create_out(cfg)?;
    let mut metrics = BufWriter::new(File::create(out.join(METRICS_FILE))?);
    let outcome = run_training(cfg, &data, Some(&mut metrics))?;
    metrics.flush()?;
    let ck = out.join(CHECKPOINT_FILE);
    checkpoint::save(&ck, &echo_for(cfg, &outcome.model), &outcome.model.flat())?;
    if let Some(msg) = outcome.diverged {
        return Err(CliError::NonFinite(format!("{msg}; last good checkpoint kept at {}", ck.display())));
    }
    Ok(format!("trained {} steps; checkpoint {}", outcome.steps, ck.display()))
}

/// Renders an evaluation report as `metric,value` CSV.
pub fn eval_csv(r: &EvalReport) -> String {
    let mut s = String::from("metric,value\n");
    if r.no_inductive_nodes {
        s.push_str("no_inductive_nodes,true\n");
        return s;
    }
    let _ = writeln!(s, "n_pairs,{}", r.n_pairs);
    if let Some(v) = r.accuracy {
        let _ = writeln!(s, "accuracy,{v}");
    }
    if let Some(v) = r.ap {
        let _ = writeln!(s, "ap,{v}");
    }
    if let Some(v) = r.auc {
        let _ = writeln!(s, "auc,{v}");
    }
    s
}

/// `eval`: scores a checkpoint on the configured split.
pub fn cmd_eval(cfg: &RunConfig, checkpoint_path: &Path) -> Result<String, CliError> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let mut model = init_model(cfg, &data.graph)?;
    let ck = checkpoint::load(checkpoint_path)?;
    let expected = echo_for(cfg, &model);
    checkpoint::restore(&ck, &mut model, &expected)?;
    let report = evaluate(&model, &data.graph, &data.split, cfg.split, cfg.seed)?;
    let csv = eval_csv(&report);
    let out = create_out(cfg)?;
    let name = match cfg.split {
        EvalSetting::Transductive => "eval_transductive.csv",
        EvalSetting::Inductive => "eval_inductive.csv",
    };
    std::fs::write(out.join(name), &csv)?;
    Ok(csv)
}

/// One row of a curvature sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub log_k: f64,
    pub report: EvalReport,
}

/// Trains and evaluates once per `log K`, each run seeded identically.
pub fn sweep(cfg: &RunConfig, data: &Dataset, grid: &[f64]) -> Result<Vec<SweepRow>, CliError> {
    if cfg.geometry.latent_geometry() != GeometryKind::Hyperbolic {
        return Err(CliError::Config(format!("curvature sweep needs a hyperbolic geometry, got {}", cfg.geometry)));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &log_k in grid {
        let run = RunConfig { log_k, ..cfg.clone() };
        run.validate()?;
        let outcome = run_training(&run, data, None)?;
        if let Some(msg) = outcome.diverged {
            return Err(CliError::NonFinite(format!("log K = {log_k}: {msg}")));
        }
        let report = evaluate(&outcome.model, &data.graph, &data.split, EvalSetting::Transductive, run.seed)?;
        rows.push(SweepRow { log_k, report });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let with_auc = rows.iter().any(|r| r.report.auc.is_some());
    let mut s = String::from(if with_auc { "logK,accuracy,ap,auc\n" } else { "logK,accuracy,ap\n" });
    let num = |v: Option<f64>| v.map_or("nan".to_string(), |x| x.to_string());
    for r in rows {
        let _ = write!(s, "{},{},{}", r.log_k, num(r.report.accuracy), num(r.report.ap));
        if with_auc {
            let _ = write!(s, ",{}", num(r.report.auc));
        }
        s.push('\n');
    }
    s
}

/// `sweep-curvature`: writes `sweep.csv` in the output directory.
pub fn cmd_sweep(cfg: &RunConfig, grid: &[f64]) -> Result<String, CliError> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let rows = sweep(cfg, &data, grid)?;
    let csv = sweep_csv(&rows);
    std::fs::write(create_out(cfg)?.join(SWEEP_FILE), &csv)?;
    Ok(csv)
}

/// `gen-synthetic`: writes `edges.csv` and `labels.csv`.
pub fn cmd_gen_synthetic(sc: &SyntheticConfig, out: &Path) -> Result<String, CliError> {
    let g = generate_synthetic(sc)?;
    std::fs::create_dir_all(out)?;
    let edges = out.join("edges.csv");
    save_edge_list(&g, &edges)?;
    let mut w = BufWriter::new(File::create(out.join("labels.csv"))?);
    write_labels(g.labels().expect("synthetic graphs are labelled"), &mut w).map_err(CliError::from)?;
    w.flush()?;
    Ok(format!("{} nodes, {} events -> {}", g.n_nodes(), g.events().len(), edges.display()))
}

/// `convert`: canonicalises an interaction CSV with string keys, writing
/// `edges.csv` and the id map `nodes.csv`.
pub fn cmd_convert(input: &Path, columns: (&str, &str, &str), out: &Path) -> Result<String, CliError> {
    if !input.is_file() {
        return Err(CliError::MissingData(input.display().to_string()));
    }
    let (g, keys) = convert_interactions(File::open(input)?, columns)?;
    std::fs::create_dir_all(out)?;
    save_edge_list(&g, &out.join("edges.csv"))?;
    let mut w = BufWriter::new(File::create(out.join("nodes.csv"))?);
    writeln!(w, "node,key")?;
    for (i, k) in keys.iter().enumerate() {
        writeln!(w, "{i},{}", csv_field(k))?;
    }
    w.flush()?;
    Ok(format!("{} nodes, {} events -> {}", g.n_nodes(), g.events().len(), out.display()))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Default checkpoint location for a run.
pub fn default_checkpoint(cfg: &RunConfig) -> PathBuf {
    cfg.out.join(CHECKPOINT_FILE)
}
