mod commands;
mod config;
mod editor;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::TypedValueParser;
use clap::{Args, Parser, Subcommand};
use semslice::corpus::DataFormat;
use semslice::eval::DEFAULT_ALPHA;
use semslice::slicer::DEFAULT_PARALLELISM;

use commands::{BatchArgs, EvalArgs, Globals, PromptArgs, SliceArgs};
use config::{BackendKind, ToolConfig};

/// Bad invocation or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const EXIT_GATED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_PIPELINE: u8 = 3;

#[derive(Parser)]
#[command(name = "semslice", version = manifest::VERSION, about = "Semantic data slicing with LLM-backed slicing functions")]
struct Cli {
    /// Tool configuration (TOML): endpoints, embedding, mock replies, slice config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for sampling; overrides the configuration's seed [default: 0].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Concurrent annotation requests.
    #[arg(long, global = true, default_value_t = DEFAULT_PARALLELISM,
          value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
    parallelism: usize,
    /// Response cache directory (default for http: .semslice-cache).
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Model backend [default: from --config, else http].
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    /// Allow human-in-the-loop steps; opens $EDITOR.
    #[arg(long, global = true)]
    interactive: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset (JSONL or CSV).
    #[arg(long)]
    data: PathBuf,
    /// Dataset format [default: from the file extension].
    #[arg(long)]
    format: Option<DataFormat>,
}

#[derive(Args)]
struct SliceConfigArgs {
    /// Named configuration (see `semslice presets`).
    #[arg(long, conflicts_with = "slice_config")]
    preset: Option<String>,
    /// Slicing configuration file (TOML or JSON).
    #[arg(long)]
    slice_config: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Significance level for under-performance tests.
    #[arg(long, default_value_t = DEFAULT_ALPHA, value_parser = parse_alpha)]
    alpha: f64,
    /// Pricing file (TOML) for cost estimates.
    #[arg(long)]
    pricing: Option<PathBuf>,
    /// Exit with status 1 if any slice under-performs.
    #[arg(long)]
    gate: bool,
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let a: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if a > 0.0 && a < 1.0 {
        Ok(a)
    } else {
        Err("alpha must lie strictly between 0 and 1".into())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build a slicing prompt for one criterion.
    Prompt {
        /// The slicing criterion, e.g. a keyword such as "Muslim".
        #[arg(long)]
        criterion: String,
        /// Longer description of the criterion, used when generating instructions.
        #[arg(long)]
        description: Option<String>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        slice: SliceConfigArgs,
        /// Output directory [default: <criterion>-<preset>-<timestamp>].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Annotate a dataset with a prompt artifact and extract the slice.
    Slice {
        /// Prompt artifact written by `prompt`.
        #[arg(long)]
        prompt: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score slices against gold slices and test task performance.
    Eval {
        /// Slice files or directories written by `slice`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        report: ReportArgs,
        /// Fail if a slice has no matching gold slice in the dataset.
        #[arg(long)]
        require_gold: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prompt, slice and evaluate every criterion in a file.
    Batch {
        /// One criterion per line; a tab separates an optional description.
        #[arg(long)]
        criteria: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        slice: SliceConfigArgs,
        #[command(flatten)]
        report: ReportArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the named configurations.
    Presets,
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if let Command::Presets = cli.command {
        print!("{}", commands::presets());
        return Ok(false);
    }
    let g = Globals {
        config: ToolConfig::load(cli.config.as_deref())?,
        config_path: cli.config,
        seed: cli.seed,
        parallelism: cli.parallelism,
        cache_dir: cli.cache_dir,
        backend: cli.backend,
        interactive: cli.interactive,
    };
    match cli.command {
        Command::Prompt { criterion, description, data, slice, out } => {
            commands::prompt(
                &g,
                &PromptArgs {
                    criterion,
                    description,
                    data: data.data,
                    format: data.format,
                    preset: slice.preset,
                    slice_config: slice.slice_config,
                    out,
                },
            )?;
            Ok(false)
        }
        Command::Slice { prompt, data, out } => {
            commands::slice(&g, &SliceArgs { prompt, data: data.data, format: data.format, out })?;
            Ok(false)
        }
        Command::Eval { inputs, data, report, require_gold, out } => {
            let gate = report.gate;
            let (_, flagged) = commands::eval(
                &g,
                &EvalArgs {
                    inputs,
                    data: data.data,
                    format: data.format,
                    alpha: report.alpha,
                    pricing: report.pricing,
                    require_gold,
                    out,
                },
            )?;
            Ok(gate && flagged)
        }
        Command::Batch { criteria, data, slice, report, out } => {
            let gate = report.gate;
            let (_, flagged) = commands::batch(
                &g,
                &BatchArgs {
                    criteria,
                    data: data.data,
                    format: data.format,
                    preset: slice.preset,
                    slice_config: slice.slice_config,
                    alpha: report.alpha,
                    pricing: report.pricing,
                    out,
                },
            )?;
            Ok(gate && flagged)
        }
        Command::Presets => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("gate: under-performing slices found");
            ExitCode::from(EXIT_GATED)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_PIPELINE)
            }
        }
    }
}
