//! `vtg`: command-line entry point for the grounding toolkit.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (",
    env!("VTG_BUILD_ID"),
    ")"
);

#[derive(Debug, Parser)]
#[command(name = "vtg", version = VERSION, about = "Video temporal grounding data and evaluation toolkit")]
pub struct Cli {
    /// TOML config file; flags and VTG_* variables override it.
    #[arg(long, global = true, env = "VTG_CONFIG")]
    pub config: Option<PathBuf>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    /// Machine-readable report on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// More logging on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Video/annotation counts and duration summary per dataset.
    Stats(StatsArgs),
    /// Check annotations against the quality rules.
    Lint(LintArgs),
    /// Extract spans from raw model outputs.
    Parse(ParseArgs),
    /// Score predictions: R1@{0.3,0.5,0.7} and mIoU.
    Eval(EvalArgs),
    /// Difficulty-aware weighted subset selection.
    Sample(SampleArgs),
    /// Find the reward plateau stop step in a trace.
    Monitor(MonitorArgs),
    /// Simulate GRPO rollouts with a mock policy.
    RolloutSim(RolloutArgs),
    /// Plan frame sampling, token budgets and timestamp encoding.
    Encode(EncodeArgs),
    /// Propose new annotations with a backend and keep the lint-clean ones.
    Annotate(AnnotateArgs),
    /// Run the audit HTTP service.
    AuditServe(ServeArgs),
    /// Export a refined dataset from the audit event log.
    Export(ExportArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    /// Annotation files; each becomes a dataset named after its file stem.
    #[arg(long = "data", required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    #[arg(long, env = "VTG_SCHEMA")]
    pub schema: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct LintArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, env = "VTG_SCHEMA")]
    pub schema: Option<String>,
    /// Lint rules file (key = value).
    #[arg(long = "lint-config", env = "VTG_LINT_CONFIG")]
    pub lint_config: Option<PathBuf>,
    /// Where to write the JSON report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ParseArgs {
    /// JSONL with `annotation_id` and `raw_text`.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, env = "VTG_FPS")]
    pub fps: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Failed lines only.
    #[arg(long)]
    pub failures: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Ground-truth files; each is reported as its own benchmark.
    #[arg(long, required = true, num_args = 1..)]
    pub gt: Vec<PathBuf>,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, env = "VTG_SCHEMA")]
    pub schema: Option<String>,
    #[arg(long, env = "VTG_FPS")]
    pub fps: Option<f64>,
    /// score_zero or exclude.
    #[arg(long, env = "VTG_UNPARSED_POLICY")]
    pub policy: Option<String>,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    /// JSONL of {annotation_id, difficulty}.
    #[arg(long, conflicts_with_all = ["gt", "pred"], required_unless_present = "gt")]
    pub difficulties: Option<PathBuf>,
    /// Compute difficulties from ground truth and offline predictions.
    #[arg(long, requires = "pred")]
    pub gt: Option<PathBuf>,
    #[arg(long, requires = "gt")]
    pub pred: Option<PathBuf>,
    #[arg(long, env = "VTG_SAMPLER_MU")]
    pub mu: Option<f64>,
    #[arg(long, env = "VTG_SAMPLER_SIGMA")]
    pub sigma: Option<f64>,
    #[arg(long, env = "VTG_SAMPLER_BINS")]
    pub bins: Option<usize>,
    #[arg(long)]
    pub n: usize,
    #[arg(long, env = "VTG_SEED")]
    pub seed: Option<u64>,
    /// Draw with replacement.
    #[arg(long)]
    pub with_replacement: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub hist: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MonitorArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, env = "VTG_PLATEAU_WINDOW")]
    pub window: Option<usize>,
    #[arg(long, env = "VTG_PLATEAU_TOL")]
    pub tol: Option<f64>,
    #[arg(long)]
    pub floor: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct RolloutArgs {
    /// Ground-truth annotations used as prompts.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, env = "VTG_SCHEMA")]
    pub schema: Option<String>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub prompts_per_step: Option<usize>,
    #[arg(long, env = "VTG_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub initial_jitter: Option<f64>,
    #[arg(long)]
    pub final_jitter: Option<f64>,
    #[arg(long)]
    pub halt_step: Option<u64>,
    /// thinking_free or thinking_based.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub groups: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EncodeArgs {
    #[arg(long)]
    pub duration: f64,
    #[arg(long, env = "VTG_FPS")]
    pub fps: Option<f64>,
    #[arg(long, env = "VTG_MIN_TOKENS")]
    pub min_tokens: Option<u32>,
    #[arg(long, env = "VTG_TOTAL_TOKENS")]
    pub total_tokens: Option<u32>,
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Native frame size as WIDTHxHEIGHT.
    #[arg(long)]
    pub native: Option<String>,
    /// interleaved, noninterleaved, overlay or passthrough.
    #[arg(long)]
    pub scheme: Option<String>,
    /// raw or frame.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AnnotateArgs {
    /// JSONL of videos (annotation files work too; ids are de-duplicated).
    #[arg(long)]
    pub videos: PathBuf,
    /// mock or http.
    #[arg(long, env = "VTG_BACKEND")]
    pub backend: Option<String>,
    #[arg(long, env = "VTG_BACKEND_ENDPOINT")]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub n: usize,
    #[arg(long, env = "VTG_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "VTG_CONCURRENCY")]
    pub concurrency: Option<usize>,
    #[arg(long, env = "VTG_LINT_CONFIG")]
    pub lint_config: Option<PathBuf>,
    /// Every candidate with its verification status.
    #[arg(long)]
    pub out: PathBuf,
    /// Lint-clean candidates as a dataset.
    #[arg(long)]
    pub accepted: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long = "service-config", env = "VTG_SERVICE_CONFIG")]
    pub service_config: Option<PathBuf>,
    #[arg(long, env = "VTG_BIND")]
    pub bind: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct ExportArgs {
    #[arg(long = "service-config", env = "VTG_SERVICE_CONFIG")]
    pub service_config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub ledger: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // help and version are not errors
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VTG_LOG", level))
        .target(env_logger::Target::Stderr)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if e.downcast_ref::<commands::UsageError>().is_some() { 2 } else { 1 };
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
