use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod augment;
mod build_info;
mod detect;
mod eval;
mod files;
mod report;
mod svg;

/// YOLOv5mu-style fall-detection toolkit: model inspection, augmentation,
/// inference, evaluation and plotting.
#[derive(Debug, Parser)]
#[command(name = "fallwatch", version)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for every random draw (augmentation, weight initialization).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Class names, one per line; the line number is the class id.
    #[arg(long, global = true, value_name = "FILE")]
    pub classes: Option<PathBuf>,
    /// Square network / augmentation size in pixels.
    #[arg(long, global = true, default_value_t = 640)]
    pub img: usize,
    /// Confidence threshold for detections and the confusion matrix.
    #[arg(long, global = true, default_value_t = 0.25)]
    pub conf: f64,
    /// IoU threshold for non-maximum suppression.
    #[arg(long, global = true, default_value_t = 0.45)]
    pub iou: f64,
    /// Output format for tabular results.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Output file (build-info, detect, eval) or directory (augment, report).
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-layer channels, shapes, parameters and FLOPs of the network.
    BuildInfo(build_info::BuildInfoArgs),
    /// Resize and color-jitter a labelled dataset.
    Augment(augment::AugmentArgs),
    /// Run the detector and write JSON-lines detections.
    Detect(detect::DetectArgs),
    /// Score detections against a labelled manifest.
    Eval(eval::EvalArgs),
    /// Render PR and loss curves as SVG plus a summary CSV.
    Report(report::ReportArgs),
}

/// Failure of an internal consistency check rather than of the input.
#[derive(Debug)]
pub struct Internal(pub String);

impl std::fmt::Display for Internal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "internal error: {}", self.0)
    }
}

impl std::error::Error for Internal {}

/// Outcome of a subcommand that ran to completion.
pub enum Outcome {
    Success,
    /// Some inputs were rejected; the rest were processed.
    Partial,
}

pub fn check_common(common: &Common) -> anyhow::Result<()> {
    anyhow::ensure!(
        (0.0..=1.0).contains(&common.conf),
        "--conf {} outside [0, 1]",
        common.conf
    );
    anyhow::ensure!(
        (0.0..=1.0).contains(&common.iou),
        "--iou {} outside [0, 1]",
        common.iou
    );
    anyhow::ensure!(common.img > 0, "--img must be positive");
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    check_common(&cli.common)?;
    match cli.command {
        Command::BuildInfo(args) => build_info::run(&cli.common, &args),
        Command::Augment(args) => augment::run(&cli.common, &args),
        Command::Detect(args) => detect::run(&cli.common, &args),
        Command::Eval(args) => eval::run(&cli.common, &args),
        Command::Report(args) => report::run(&cli.common, &args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.is::<Internal>() { 2 } else { 1 })
        }
    }
}
