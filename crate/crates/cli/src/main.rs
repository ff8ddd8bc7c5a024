use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hvgnn::data::SyntheticConfig;
use hvgnn_cli::commands::{self, DEFAULT_GRID};
use hvgnn_cli::config::{parse_grid, RunConfig};
use hvgnn_cli::CliError;

/// Hyperbolic variational temporal graph networks.
#[derive(Parser, Debug)]
#[command(name = "hvgnn", version, args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model, writing metrics.csv and checkpoint.bin under --out.
    #[command(args_override_self = true)]
    Train(RunArgs),
    /// Evaluate a checkpoint on the test split.
    #[command(args_override_self = true)]
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to <out>/checkpoint.bin.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate once per log K, writing sweep.csv.
    #[command(args_override_self = true)]
    SweepCurvature {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated log K values.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
    },
    /// Write a labelled community graph as edges.csv and labels.csv.
    GenSynthetic {
        #[arg(long, default_value_t = 4)]
        communities: usize,
        #[arg(long, default_value_t = 100)]
        nodes: usize,
        #[arg(long, default_value_t = 5000)]
        events: usize,
        #[arg(long, default_value_t = 0.9)]
        p_in: f64,
        #[arg(long, default_value_t = 0.1)]
        p_out: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Convert an interaction CSV with string node keys to the edge-list format.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "src")]
        src_col: String,
        #[arg(long, default_value = "dst")]
        dst_col: String,
        #[arg(long, default_value = "timestamp")]
        time_col: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

/// Run settings; each overrides the matching key of --config.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// key = value file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// hvgnn, evgnn, tgnn_l or tgnn_r.
    #[arg(long)]
    geometry: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long, allow_hyphen_values = true, conflicts_with = "trainable_k")]
    logk: Option<f64>,
    #[arg(long)]
    trainable_k: bool,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_neighbors: Option<usize>,
    #[arg(long)]
    fd_r: Option<f64>,
    #[arg(long)]
    fd_t: Option<f64>,
    /// per_node or per_query.
    #[arg(long)]
    kl_scaling: Option<String>,
    /// columns, degree, identity or auto.
    #[arg(long)]
    features: Option<String>,
    /// Train, validation and test fractions, e.g. 0.8,0.05,0.15.
    #[arg(long)]
    split_fractions: Option<String>,
    /// transductive or inductive.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p)?;
        }
        let mut set = |k: &str, v: Option<String>| v.map_or(Ok(()), |v| cfg.set(k, &v));
        set("data", self.data.as_ref().map(|p| p.display().to_string()))?;
        set("labels", self.labels.as_ref().map(|p| p.display().to_string()))?;
        set("geometry", self.geometry.clone())?;
        set("dim", self.dim.map(|v| v.to_string()))?;
        set("layers", self.layers.map(|v| v.to_string()))?;
        set("logk", self.logk.map(|v| v.to_string()))?;
        set("trainable_k", self.trainable_k.then(|| "true".to_string()))?;
        set("lr", self.lr.map(|v| v.to_string()))?;
        set("epochs", self.epochs.map(|v| v.to_string()))?;
        set("batch_size", self.batch_size.map(|v| v.to_string()))?;
        set("max_steps", self.max_steps.map(|v| v.to_string()))?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("max_neighbors", self.max_neighbors.map(|v| v.to_string()))?;
        set("fd_r", self.fd_r.map(|v| v.to_string()))?;
        set("fd_t", self.fd_t.map(|v| v.to_string()))?;
        set("kl_scaling", self.kl_scaling.clone())?;
        set("features", self.features.clone())?;
        set("split_fractions", self.split_fractions.clone())?;
        set("split", self.split.clone())?;
        set("out", self.out.as_ref().map(|p| p.display().to_string()))?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Train(a) => commands::cmd_train(&a.resolve()?),
        Command::Eval { run, checkpoint } => {
            let cfg = run.resolve()?;
            let ck = checkpoint.unwrap_or_else(|| commands::default_checkpoint(&cfg));
            commands::cmd_eval(&cfg, &ck)
        }
        Command::SweepCurvature { run, grid } => {
            let cfg = run.resolve()?;
            let grid = match grid {
                Some(g) => parse_grid(&g)?,
                None => DEFAULT_GRID.to_vec(),
            };
            commands::cmd_sweep(&cfg, &grid)
        }
        Command::GenSynthetic { communities, nodes, events, p_in, p_out, seed, out } => {
            let sc = SyntheticConfig::new(communities, nodes, events, p_in, p_out, seed);
            commands::cmd_gen_synthetic(&sc, &out)
        }
        Command::Convert { input, src_col, dst_col, time_col, out } => {
            commands::cmd_convert(&input, (&src_col, &dst_col, &time_col), &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(CliError::Usage(String::new()).exit_code());
        }
    };
    match run(cli) {
        Ok(msg) => {
            print!("{msg}");
            if !msg.ends_with('\n') {
                println!();
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
