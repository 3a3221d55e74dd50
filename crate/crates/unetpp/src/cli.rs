//! Command-line parsing and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{self, Outcome};
use crate::config::RunConfig;
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "unetpp", version, about = "Build, train, prune and evaluate the UNet++ family")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// key = value configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Generate the synthetic dataset instead of reading `data_dir`
    #[arg(long, global = true)]
    pub synthetic: bool,
    /// Override any configuration key, e.g. `--set depth=3`
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the node table and write summary.csv and graph.dot
    Summary,
    /// Train, writing checkpoints, histories and learning curves
    Train,
    /// Per-image metrics of a checkpoint
    Eval {
        #[arg(long)]
        checkpoint: Option<String>,
        /// ensemble | pruned:K
        #[arg(long)]
        mode: Option<String>,
        /// none | size_bucket
        #[arg(long)]
        stratify: Option<String>,
        /// metrics.csv to t-test against
        #[arg(long)]
        baseline: Option<String>,
    },
    /// Parameters, inference time and IoU at every pruning level
    PruneStudy {
        #[arg(long)]
        checkpoint: Option<String>,
    },
    /// Finite-difference gradient checks; exits 1 if any fails
    Gradcheck {
        #[arg(long)]
        op: Option<String>,
        #[arg(long)]
        tolerance: Option<String>,
    },
    /// Train and score the nine ablation rows
    Ablate,
    /// Channel-mean feature maps of the top skip row as PGM files
    Featmap {
        #[arg(long)]
        checkpoint: Option<String>,
        #[arg(long)]
        image: Option<String>,
    },
    /// Embedded (train full, prune) versus isolated training of shallow levels
    Embedded,
}

/// Resolves the configuration: defaults, then the file, then flags.
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for pair in &g.set {
        cfg.set_pair(pair)?;
    }
    if let Some(s) = g.seed {
        cfg.set("seed", &s.to_string())?;
    }
    if let Some(t) = g.trials {
        cfg.set("trials", &t.to_string())?;
    }
    if g.synthetic {
        cfg.set("synthetic", "true")?;
    }
    let flags: Vec<(&str, &Option<String>)> = match &cli.command {
        Command::Eval {
            checkpoint,
            mode,
            stratify,
            baseline,
        } => vec![("checkpoint", checkpoint), ("mode", mode), ("stratify", stratify), ("baseline", baseline)],
        Command::PruneStudy { checkpoint } => vec![("checkpoint", checkpoint)],
        Command::Gradcheck { op, tolerance } => vec![("gradcheck_op", op), ("gradcheck_tolerance", tolerance)],
        Command::Featmap { checkpoint, image } => vec![("checkpoint", checkpoint), ("image", image)],
        _ => Vec::new(),
    };
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<Outcome> {
    let cfg = resolve(cli)?;
    let out = &cli.global.out;
    match cli.command {
        Command::Summary => commands::summary(&cfg, out),
        Command::Train => commands::train(&cfg, out),
        Command::Eval { .. } => commands::eval(&cfg, out),
        Command::PruneStudy { .. } => commands::prune_study(&cfg, out),
        Command::Gradcheck { .. } => commands::gradcheck(&cfg, out),
        Command::Ablate => commands::ablate(&cfg, out),
        Command::Featmap { .. } => commands::featmap(&cfg, out),
        Command::Embedded => commands::embedded(&cfg, out),
    }
}

/// Runs the tool and returns the process exit code: 0 on success, 1 on a
/// runtime failure or failed check, 2 on a configuration error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(o) => {
            print!("{}", o.stdout);
            if o.passed {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
