//! `mogen`: the motion generator pipeline from the command line.
//!
//! Failures print one line `error[<class>]: <message>` to stderr and exit
//! with 2 (configuration), 3 (data) or 4 (numerical).

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "mogen", version, about = "Action-conditioned 3D motion generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Sampler {
    ModePreserving,
    Conventional,
}

#[derive(Args)]
pub struct MotionOut {
    /// Output directory; motions are written as a corpus.
    #[arg(long, default_value = "samples")]
    pub out: PathBuf,
    /// Also write one `frame,joint,x,y,z` CSV per motion.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the procedural corpus.
    SynthData {
        /// Corpus specification (JSON); the built-in desk corpus if absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model, then encode the corpus and discover modes.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override `train.epochs`.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the action classifier used by the metrics.
    TrainClassifier {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the metric report of a trained model.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        sets: Option<usize>,
        #[arg(long)]
        per_category: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "mode-preserving")]
        sampler: Sampler,
        /// Also run the trajectory-customization protocol.
        #[arg(long)]
        customization: bool,
        /// Report directory; the model directory if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-encode the corpus and rebuild the mode catalog of a model.
    DiscoverModes {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate motions of one category.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        category: String,
        /// Draw every code from this mode instead of the mode mixture.
        #[arg(long)]
        mode: Option<usize>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: MotionOut,
    },
    /// Decode a linear path between two mode means.
    Interpolate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        category: String,
        #[arg(long)]
        mode_a: usize,
        #[arg(long)]
        mode_b: usize,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[command(flatten)]
        out: MotionOut,
    },
    /// Generate motions that end at given root positions.
    Customize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        category: String,
        /// Target root position `x,y,z`; repeatable.
        #[arg(long, required = true, allow_hyphen_values = true, value_parser = commands::parse_point)]
        endpoint: Vec<[f64; 3]>,
        /// Latent code as whitespace- or comma-separated numbers.
        #[arg(long)]
        code_file: Option<PathBuf>,
        /// Codes to sample when no code file is given.
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: MotionOut,
    },
    /// Finite-difference check of the full training gradient.
    GradCheck {
        /// Use the tiny configuration (the only one supported).
        #[arg(long)]
        tiny: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    use commands::*;
    match cli.command {
        Command::SynthData { spec, seed, out } => synth_data(spec.as_deref(), seed, &out),
        Command::Train {
            config,
            corpus,
            out,
            epochs,
        } => train(config.as_deref(), &corpus, &out, epochs),
        Command::TrainClassifier { config, corpus, out } => train_classifier(config.as_deref(), &corpus, &out),
        Command::Evaluate {
            model,
            classifier,
            corpus,
            config,
            sets,
            per_category,
            seed,
            sampler,
            customization,
            out,
        } => evaluate(EvaluateArgs {
            model: &model,
            classifier: &classifier,
            corpus: &corpus,
            config: config.as_deref(),
            sets,
            per_category,
            seed,
            sampler,
            customization,
            out: out.as_deref(),
        }),
        Command::DiscoverModes {
            model,
            corpus,
            config,
            seed,
        } => discover_modes(&model, &corpus, config.as_deref(), seed),
        Command::Sample {
            model,
            category,
            mode,
            count,
            seed,
            out,
        } => sample(&model, &category, mode, count, seed, &out),
        Command::Interpolate {
            model,
            category,
            mode_a,
            mode_b,
            steps,
            out,
        } => interpolate(&model, &category, mode_a, mode_b, steps, &out),
        Command::Customize {
            model,
            category,
            endpoint,
            code_file,
            count,
            seed,
            out,
        } => customize(&model, &category, &endpoint, code_file.as_deref(), count, seed, &out),
        Command::GradCheck { tiny, seed } => grad_check(tiny, seed),
        Command::Serve { model, port, host } => serve(&model, &host, port),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {line}", e.class());
            ExitCode::from(e.exit_code())
        }
    }
}
