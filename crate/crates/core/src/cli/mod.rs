//! The `potvit` command-line pipeline.
//!
//! Every subcommand reads one JSON run config, writes its artifact under the
//! output directory tagged with the config hash, and prints a one-line JSON
//! summary on stdout.

mod artifact;
mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub use artifact::{to_fixed_json, to_fixed_line, Envelope, Provenance};
pub use commands::{CheckSummary, Engine, EvalSummary, Report};
pub use config::{EvalSettings, Resolved, RunConfig, SearchSettings, SimSettings, Source, WorkloadKind};

use crate::accelsim::PipelineFlags;
use crate::error::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_ORACLE: u8 = 3;
pub const EXIT_INFEASIBLE: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "potvit", version, about = "Power-of-two quantized ViT: train, quantize, search, evaluate, simulate")]
pub struct Cli {
    /// Run config (JSON); built-in toy defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: the config's `out`, else `runs/default`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the float model and write a checkpoint.
    Train,
    /// Calibrate power-of-two scales and write qparams.json.
    Calibrate,
    /// Build the integer model at the current bit-widths.
    Quantize,
    /// Hessian-aware mixed-precision search; writes bitconfig.json.
    SearchBits {
        /// Weight-size budget in MB; overrides the config.
        #[arg(long)]
        budget_mb: Option<f64>,
    },
    /// Accuracy on the validation split.
    Eval {
        #[arg(long, value_enum, default_value = "int")]
        engine: Engine,
        /// Compare integer and fake-quant codes at every quantization point.
        #[arg(long)]
        check: bool,
    },
    /// Accelerator cycles and energy; every mode when --pipeline is omitted.
    Simulate {
        /// none | inter | intra | inter,intra
        #[arg(long)]
        pipeline: Option<PipelineFlags>,
    },
    /// Aggregate every artifact into report.json and report.csv.
    Report,
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Json(_) | Error::MissingSpec(_) | Error::Checkpoint { .. } => EXIT_CONFIG,
        Error::OracleMismatch(_) => EXIT_ORACLE,
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        _ => EXIT_FAILURE,
    }
}

fn init_threads() -> crate::Result<()> {
    let Ok(v) = std::env::var("POTVIT_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("POTVIT_THREADS must be a positive integer, got `{v}`")))?;
    // A pool may already exist when called in-process more than once.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs a parsed command and returns its summary line.
pub fn execute(cli: &Cli) -> crate::Result<serde_json::Value> {
    init_threads()?;
    let (cfg, cfg_out) = Resolved::load(cli.config.as_deref(), cli.seed)?;
    let out = cli.out.clone().or(cfg_out).unwrap_or_else(|| PathBuf::from("runs/default"));
    let ctx = commands::Ctx::new(cfg, out)?;
    match &cli.command {
        Command::Train => commands::train_cmd(&ctx),
        Command::Calibrate => commands::calibrate_cmd(&ctx),
        Command::Quantize => commands::quantize_cmd(&ctx),
        Command::SearchBits { budget_mb } => commands::search_cmd(&ctx, *budget_mb),
        Command::Eval { engine, check } => commands::eval_cmd(&ctx, *engine, *check),
        Command::Simulate { pipeline } => commands::simulate_cmd(&ctx, *pipeline),
        Command::Report => commands::report_cmd(&ctx),
    }
}

/// Parses `args`, runs, prints the summary or a diagnostic.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK });
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            match artifact::to_fixed_line(&summary) {
                Ok(line) => println!("{line}"),
                Err(e) => {
                    eprintln!("potvit: error: {e}");
                    return ExitCode::from(exit_code(&e));
                }
            }
            ExitCode::from(EXIT_OK)
        }
        Err(e) => {
            eprintln!("potvit: error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
