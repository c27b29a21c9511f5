#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kws_core::labeling::LabelScheme;
use kws_core::KwsError;

#[derive(Parser)]
#[command(name = "kws", version, about = "Dilated-convolution keyword spotter")]
struct Cli {
    /// Worker threads for utterance-level parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
pub struct Overrides {
    /// Seed for initialization, shuffling and augmentation.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Frame labeling scheme.
    #[arg(long, value_enum)]
    pub labeling: Option<LabelingArg>,
    /// Keep background frames of positives in the loss.
    #[arg(long)]
    pub no_masking: bool,
    /// Replace gated activations with plain tanh.
    #[arg(long)]
    pub no_gating: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
}

#[derive(clap::ValueEnum, Clone, Copy)]
#[value(rename_all = "snake_case")]
pub enum LabelingArg {
    EndOfKeyword,
    DefaultAligned,
}

impl From<LabelingArg> for LabelScheme {
    fn from(a: LabelingArg) -> Self {
        match a {
            LabelingArg::EndOfKeyword => LabelScheme::EndOfKeyword,
            LabelingArg::DefaultAligned => LabelScheme::DefaultAligned,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints and a loss log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training manifest (JSON lines, or a Hey Snips metadata .json).
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// FRR (clean and noisy) at a fixed false-alarm rate.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifests holding positives and negatives; may repeat.
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        target_fah: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write DET points (threshold, FAH, FRR) as CSV.
    Det {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score audio frame by frame: `frame_index,raw,smoothed,triggered`.
    Stream {
        #[arg(long)]
        checkpoint: PathBuf,
        /// WAV file; omit with --raw to read 16 kHz mono s16le PCM from stdin.
        input: Option<PathBuf>,
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f32>,
        /// Write lines to `<out>/stream.csv` instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Streaming throughput and multiplication counts.
    Bench {
        /// Defaults to a freshly initialized paper-size model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seconds: f32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset with train/dev/test manifests and a noise clip.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        positives: usize,
        #[arg(long, default_value_t = 20)]
        negatives: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 30.0)]
        noise_seconds: f32,
    },
}

fn exit_code(err: &KwsError) -> u8 {
    match err {
        KwsError::Config(_) => 2,
        KwsError::Divergence { .. } | KwsError::NonFinite(_) => 4,
        _ => 3,
    }
}

fn run(cli: Cli) -> kws_core::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(KwsError::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| KwsError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Train {
            config,
            train,
            dev,
            out,
            overrides,
        } => commands::train(config.as_deref(), &train, dev.as_deref(), &out, &overrides),
        Command::Eval {
            checkpoint,
            manifests,
            config,
            target_fah,
            out,
        } => commands::eval(&checkpoint, &manifests, config.as_deref(), target_fah, &out),
        Command::Det {
            checkpoint,
            manifests,
            config,
            points,
            out,
        } => commands::det(&checkpoint, &manifests, config.as_deref(), points, &out),
        Command::Stream {
            checkpoint,
            input,
            raw,
            config,
            threshold,
            out,
        } => commands::stream(&checkpoint, input.as_deref(), raw, config.as_deref(), threshold, out.as_deref()),
        Command::Bench {
            checkpoint,
            seconds,
            out,
        } => commands::bench(checkpoint.as_deref(), seconds, out.as_deref()),
        Command::Synth {
            out,
            positives,
            negatives,
            seed,
            noise_seconds,
        } => commands::synth(&out, positives, negatives, seed, noise_seconds),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
