//! Command-line entry points: train, predict, eval, gradcheck, ablate,
//! synth. Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

mod ablate;
mod commands;
mod config;

pub use ablate::{cmd_ablate, Variant};
pub use commands::{cmd_eval, cmd_gradcheck, cmd_predict, cmd_synth, cmd_train};
pub use config::{DataConfig, RunConfig, RunSettings};

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::model::PGformerConfig;
use crate::xqa::ProxyMode;

#[derive(Parser, Debug)]
#[command(
    name = "pgformer",
    version,
    about = "Multi-person motion forecasting with proxy-bridged cross-query attention"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write checkpoints plus the loss log.
    Train(TrainArgs),
    /// Forecast future frames for every sequence in a motion file.
    Predict(PredictArgs),
    /// Evaluate a checkpoint: JME/AME/MPJPE tables and per-joint errors.
    Eval(EvalArgs),
    /// Finite-difference check of every parameter group's gradient.
    Gradcheck(GradcheckArgs),
    /// Train and compare architecture variants under identical seeds.
    Ablate(AblateArgs),
    /// Generate a synthetic coupled-motion file.
    Synth(SynthArgs),
}

/// Architecture switches shared by train/ablate-style commands.
#[derive(Args, Debug, Default, Clone)]
pub struct ModelOverrides {
    /// Disable the temporal DCT/IDCT stages.
    #[arg(long)]
    pub no_dct: bool,
    /// Disable the cross-query attention sub-layer.
    #[arg(long)]
    pub no_xqa: bool,
    /// Disable the proxy inside XQA.
    #[arg(long)]
    pub no_proxy: bool,
    /// Proxy combination: bilinear, gate_mul or gate_add.
    #[arg(long)]
    pub proxy_mode: Option<String>,
}

impl ModelOverrides {
    pub fn apply(&self, cfg: &mut PGformerConfig) -> Result<()> {
        if self.no_dct {
            cfg.use_dct = false;
        }
        if self.no_xqa {
            cfg.use_xqa = false;
        }
        if self.no_proxy {
            cfg.use_proxy = false;
        }
        if let Some(mode) = &self.proxy_mode {
            cfg.proxy_mode = ProxyMode::parse(mode)?;
        }
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `run.seed` from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `run.out` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: ModelOverrides,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Frames to forecast; defaults to the model's per-pass horizon.
    #[arg(long)]
    pub horizon_frames: Option<usize>,
    /// Output motion file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Which metrics to print: jme, ame or both.
    #[arg(long, default_value = "both")]
    pub metric: String,
    /// Comma-separated horizons in seconds.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.2, 0.4, 0.6, 1.0])]
    pub horizons: Vec<f64>,
    /// Reject horizons beyond this many seconds.
    #[arg(long, default_value_t = 2.0)]
    pub max_horizon: f64,
    /// Stride between evaluation windows.
    #[arg(long, default_value_t = 25)]
    pub eval_stride: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Configuration size; only `tiny` is defined.
    #[arg(long, default_value = "tiny")]
    pub size: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupt one recorded gradient (negative control for the harness).
    #[arg(long, hide = true)]
    pub corrupt: bool,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated variant names.
    #[arg(long, value_delimiter = ',', required = true)]
    pub variants: Vec<String>,
    /// Comma-separated seeds; one run per variant per seed.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0u64])]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output motion file.
    #[arg(long)]
    pub out: PathBuf,
}

/// Dispatch a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Predict(args) => cmd_predict(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Gradcheck(args) => cmd_gradcheck(&args),
        Command::Ablate(args) => cmd_ablate(&args),
        Command::Synth(args) => cmd_synth(&args),
    }
}

/// Map an error to the documented exit codes.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}
