//! `pisep`: train, predict, evaluate, gradient-check and synthesise data.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 verification failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pisep_core::loss::LossKind;
use pisep_core::synth::MotionKind;

use config::{ModelKind, OrderKind, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn config(e: impl std::fmt::Display) -> Self {
        Self::Config(e.to_string())
    }

    pub fn data(e: impl std::fmt::Display) -> Self {
        Self::Data(e.to_string())
    }

    fn code(&self) -> u8 {
        match self {
            Self::Config(_) => 1,
            Self::Data(_) => 2,
            Self::Verification(_) => 3,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "pisep", version, about = "Skeleton pose forecasting with pseudo-image encoder-dynamics-decoder networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on skeleton files and write checkpoints plus loss.csv.
    Train {
        #[command(flatten)]
        common: Common,
        /// Skeleton files or directories of `.txt` files.
        data: Vec<PathBuf>,
    },
    /// Predict the frames following a window of an input sequence.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Skeleton file holding at least `m` frames.
        #[arg(long)]
        input: PathBuf,
        /// First input frame (position in the file); defaults to the last `m`.
        #[arg(long)]
        start: Option<usize>,
    },
    /// Evaluate a checkpoint on every clip of the given data.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        data: Vec<PathBuf>,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        tolerance: Option<f64>,
        /// Scale one op's backward rule, as `op` or `op:factor`.
        #[arg(long, hide = true)]
        corrupt_backward: Option<String>,
    },
    /// Write synthetic skeleton sequences.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kind: Option<MotionKind>,
        #[arg(long)]
        sequences: Option<usize>,
        #[arg(long)]
        length: Option<usize>,
        #[arg(long)]
        test_fraction: Option<f64>,
    },
}

/// Flags shared by every subcommand; they override the config file.
#[derive(Args, Debug, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long, value_parser = ["g3d", "fntu", "tiny"])]
    preset: Option<String>,
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    #[arg(long, value_enum)]
    joint_order: Option<OrderKind>,
    /// Joint id mapping of the input files: default, kinect-v1 or kinect-v2.
    #[arg(long)]
    joints: Option<String>,
    /// Chain single-frame predictions instead of predicting all frames at once.
    #[arg(long)]
    recursive: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

impl Common {
    fn resolve(self, data: Vec<PathBuf>) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! overlay {
            ($($field:ident),*) => { $( if self.$field.is_some() { cfg.$field = self.$field; } )* };
        }
        overlay!(seed, loss, preset, model, joint_order, joints, out);
        if self.recursive {
            cfg.recursive = Some(true);
        }
        if !data.is_empty() {
            cfg.data = data;
        }
        let t = &mut cfg.train;
        t.steps = self.steps.unwrap_or(t.steps);
        t.batch_size = self.batch_size.unwrap_or(t.batch_size);
        t.adam.lr = self.lr.unwrap_or(t.adam.lr);
        t.checkpoint_every = self.checkpoint_every.unwrap_or(t.checkpoint_every);
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { common, data } => commands::train(&common.resolve(data)?),
        Command::Predict {
            common,
            checkpoint,
            input,
            start,
        } => commands::predict(&common.resolve(Vec::new())?, &checkpoint, &input, start),
        Command::Eval { common, checkpoint, data } => commands::eval(&common.resolve(data)?, &checkpoint),
        Command::Gradcheck {
            common,
            samples,
            tolerance,
            corrupt_backward,
        } => {
            let mut cfg = common.resolve(Vec::new())?;
            cfg.gradcheck.samples = samples.unwrap_or(cfg.gradcheck.samples);
            cfg.gradcheck.tolerance = tolerance.unwrap_or(cfg.gradcheck.tolerance);
            commands::gradcheck(&cfg, corrupt_backward.as_deref())
        }
        Command::Synth {
            common,
            kind,
            sequences,
            length,
            test_fraction,
        } => {
            let mut cfg = common.resolve(Vec::new())?;
            let s = &mut cfg.synth;
            s.kind = kind.unwrap_or(s.kind);
            s.sequences = sequences.unwrap_or(s.sequences);
            s.length = length.unwrap_or(s.length);
            s.test_fraction = test_fraction.unwrap_or(s.test_fraction);
            commands::synth(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
