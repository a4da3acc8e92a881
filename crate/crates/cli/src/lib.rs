//! The `phq` command line: synthesize cohorts, train and apply the PHQ-8
//! ensembles, and write evaluation reports.

pub mod archive;
pub mod commands;
pub mod error;
pub mod output;
pub mod reports;
pub mod settings;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "phq", version, about = "Explainable PHQ-8 ensembles over utterance-group embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic train/dev cohort.
    Synth(SynthArgs),
    /// Train a bottom-up or top-down ensemble and save it as a model archive.
    Train(TrainArgs),
    /// Predict per-speaker scores from group embeddings.
    Predict(PredictArgs),
    /// Score predictions against labels.
    Evaluate(EvaluateArgs),
    /// Correlate predicted totals with external per-speaker features.
    Report(ReportArgs),
    /// Log-mel patches from a 16 kHz mono WAV file.
    Mel(MelArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// key = value file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub groups_per_speaker: Option<usize>,
    #[arg(long)]
    pub separation_scale: Option<f64>,
    #[arg(long)]
    pub within_speaker_noise_sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// bottom-up or top-down
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Label split to train on (default train).
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub perturb_count: Option<usize>,
    #[arg(long)]
    pub preserve_count: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// relative (multiple of per-component std) or absolute
    #[arg(long)]
    pub noise_scale: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Expected system; a different archive kind is an error.
    #[arg(long)]
    pub system: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Archive that produced the predictions; its fingerprint goes into metrics.csv.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub per_item: Option<bool>,
    #[arg(long)]
    pub cronbach: Option<bool>,
    #[arg(long)]
    pub scatter: Option<bool>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MelArgs {
    #[arg(long)]
    pub wav: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the exit
/// status. Failures print one `error[<kind>]: ...` line to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            let err = CliError::usage(first);
            eprintln!("{err}");
            return err.kind.exit_code();
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => reports::evaluate(a),
        Command::Report(a) => reports::report(a),
        Command::Mel(a) => commands::mel(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.kind.exit_code()
        }
    }
}
