//! `trajopt` command-line pipeline. Every subcommand reads one resolved
//! [`PipelineConfig`], writes its artifacts under `--out` together with a
//! config echo (`config.toml`) and a run record (`run.json`), and prints the
//! run record as JSON on success.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use trajopt_piom::Stage;

pub mod check;
pub mod commands;
pub mod config;
pub mod error;

pub use config::PipelineConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "trajopt", version, about = "Hand-object trajectory synthesis, refinement, retargeting and evaluation")]
pub struct Cli {
    /// Pipeline config (TOML); unset keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.lr=0.001`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Global seed (same as `--set seed=N`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize ground-truth grasps, meshes and a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Number of clips (same as `--set dataset.count=N`).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Perturb a manifest's ground truth into network inputs.
    Perturb {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `pretrain` uses the default noise profile, `finetune` the harsher one.
        #[arg(long, default_value = "pretrain")]
        profile: Stage,
    },
    /// Train the refinement network on (input, ground truth) pairs.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stage: Stage,
        /// Checkpoint to fine-tune from or resume.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Refine every trajectory of a manifest with a trained checkpoint.
    Optimize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Map human clips onto the robot hand.
    Retarget {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay robot clips with zero residuals and score the grasps.
    Rollout {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute metrics of a manifest against its ground truth.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the gradient and oracle self-checks.
    Check,
}

fn resolve(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut overrides = cli.overrides.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    match &cli.command {
        Command::Synth { count: Some(n), .. } => overrides.push(format!("dataset.count={n}")),
        Command::Train { epochs, lr, .. } => {
            if let Some(e) = epochs {
                overrides.push(format!("train.epochs={e}"));
            }
            if let Some(l) = lr {
                overrides.push(format!("train.lr={l:e}"));
            }
        }
        _ => {}
    }
    PipelineConfig::load(cli.config.as_deref(), &overrides)
}

/// Runs a parsed command and returns its run record.
pub fn run(cli: &Cli) -> Result<Value, CliError> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Synth { out, .. } => commands::synth(&cfg, out),
        Command::Perturb { manifest, out, profile } => commands::perturb_cmd(&cfg, manifest, out, *profile),
        Command::Train { manifest, out, stage, init, .. } => commands::train_cmd(&cfg, manifest, out, *stage, init.as_deref()),
        Command::Optimize { checkpoint, manifest, out } => commands::optimize(&cfg, checkpoint, manifest, out),
        Command::Retarget { manifest, out } => commands::retarget_cmd(&cfg, manifest, out),
        Command::Rollout { manifest, out } => commands::rollout_cmd(&cfg, manifest, out),
        Command::Eval { manifest, out } => commands::eval_cmd(&cfg, manifest, out),
        Command::Check => {
            let outcomes = check::run_all(&cfg);
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            for o in &outcomes {
                println!("{}", serde_json::to_string(o).expect("serializable"));
            }
            if failed > 0 {
                Err(CliError::CheckFailed { failed })
            } else {
                Ok(json!({ "command": "check", "passed": outcomes.len() }))
            }
        }
    }
}

/// Parses `argv`, runs it, and returns the process exit code. Errors go to
/// stderr as one JSON record; help and version requests exit 0.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let err = CliError::Usage(e.to_string().trim().to_string());
            eprintln!("{}", serde_json::to_string(&err.record()).expect("serializable"));
            return err.exit_code();
        }
    };
    match run(&cli) {
        Ok(record) => {
            println!("{}", serde_json::to_string(&record).expect("serializable"));
            0
        }
        Err(err) => {
            eprintln!("{}", serde_json::to_string(&err.record()).expect("serializable"));
            err.exit_code()
        }
    }
}
