//! cayk: command-line workflows for the detection toolkit.
//!
//! Exit codes: 0 success, 1 I/O or configuration problems, 2 insufficient
//! data, 3 per-file data errors.

mod commands;
mod error;
mod manifest;

use clap::{Parser, Subcommand};
use error::CliError;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "cayk", version, about = "Detection-pipeline toolkit: anchor clustering, dataset augmentation, model audits and AP/mAP evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster ground-truth box sizes into anchors (1-IoU K-means).
    ClusterAnchors(ClusterArgs),
    /// Print the layer table and parameter totals of a detector build.
    Audit(AuditArgs),
    /// Apply the randomized augmentation pipeline to a VOC dataset.
    Augment(AugmentArgs),
    /// Score detections against ground truth (per-class AP, mAP).
    Evaluate(EvaluateArgs),
    /// Time the attention block or a full forward pass.
    Bench(BenchArgs),
}

#[derive(clap::Args)]
pub struct ClusterArgs {
    /// Box list file, one "w,h" pair per line.
    #[arg(long, conflicts_with = "voc")]
    boxes: Option<PathBuf>,
    /// VOC dataset directory to extract box sizes from.
    #[arg(long)]
    voc: Option<PathBuf>,
    /// Network input resolution boxes are rescaled to when using --voc.
    #[arg(long, default_value_t = 416)]
    input_size: u32,
    #[arg(long, default_value_t = 9)]
    k: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Anchors output file (darknet-style single line).
    #[arg(long, default_value = "anchors.txt")]
    out: PathBuf,
    /// Cluster statistics JSON; defaults to <out>.stats.json.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Run manifest path; defaults to <out>.manifest.json.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Class vocabulary file (one name per line) for --voc parsing.
    #[arg(long)]
    classes: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct AuditArgs {
    /// Network config file (key = value format).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Layout shorthand overriding the config's structural fields.
    #[arg(long, value_parser = ["baseline", "improved"])]
    mode: Option<String>,
    /// Also print the baseline-vs-improved structural diff.
    #[arg(long)]
    diff: bool,
    /// Suppress the human-readable table, print JSON only.
    #[arg(long)]
    json: bool,
    /// Write the audit JSON to this path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct AugmentArgs {
    /// VOC dataset directory (Annotations/ + images).
    #[arg(long)]
    voc: PathBuf,
    /// Augmentation spec file (key = value format); defaults apply if omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Master seed; overrides the spec's seed when given.
    #[arg(long)]
    seed: Option<u64>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Class vocabulary file (one name per line).
    #[arg(long)]
    classes: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct EvaluateArgs {
    /// Detections JSONL: {"image_id", "class", "score", "box"} per line.
    #[arg(long)]
    detections: PathBuf,
    /// Ground truth: VOC directory, or JSONL with score omitted.
    #[arg(long)]
    gt: PathBuf,
    /// IoU threshold for true-positive matching.
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Report JSON path; defaults to <detections>.report.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional CSV of per-class precision/recall points.
    #[arg(long)]
    pr_csv: Option<PathBuf>,
    /// Suppress the human-readable table, print JSON only.
    #[arg(long)]
    json: bool,
    /// Class vocabulary file for VOC ground truth.
    #[arg(long)]
    classes: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// What to time: the attention block or full forward passes.
    #[arg(long, value_parser = ["ca", "forward"])]
    op: String,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Report JSON path; defaults to bench_report.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::ClusterAnchors(args) => commands::cluster::run(args),
        Command::Audit(args) => commands::audit::run(args),
        Command::Augment(args) => commands::augment::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
        Command::Bench(args) => commands::bench::run(args),
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e.message);
            std::process::exit(e.code);
        }
    }
}

/// Worker-pool size: CAYK_THREADS caps parallelism, defaulting to the
/// machine's available cores.
pub(crate) fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("CAYK_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::io_config(format!("CAYK_THREADS={v:?} is not a number")))?;
        builder = builder.num_threads(n.max(1));
    }
    builder
        .build()
        .map_err(|e| CliError::io_config(format!("thread pool: {e}")))
}
