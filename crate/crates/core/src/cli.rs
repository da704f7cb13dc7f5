//! Command-line surface of the `poolforge` binary.
//!
//! Exit codes: 0 success, 2 when some cells failed, 1 for usage and
//! configuration errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{BackendKind, RunConfig};
use crate::error::Result;
use crate::pipeline::{self, StageOptions, StageOutcome};
use crate::prompts::{export_judge_prompts, export_prompts, ExportSummary, PromptKit};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "poolforge", version, about = "Generate, embed, score and analyze candidate pools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Mock,
    Http,
}

#[derive(Debug, Clone, Args)]
pub struct StageArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated cell patterns, `*` matches any run of characters,
    /// e.g. `gpt-*/aut-*/strat-*`.
    #[arg(long)]
    pub only_cells: Option<String>,
    /// Replace every configured seed with this value.
    #[arg(long)]
    pub seed_override: Option<u64>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    /// Continue an existing run directory, skipping complete cells.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    /// Use the manifest and templates named by this config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "prompts")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum ExportCommand {
    /// Write the prompt files to a directory.
    Export(ExportArgs),
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate pools for every selected cell.
    Generate(StageArgs),
    /// Embed evaluated pools and fit semantic regions.
    Embed(StageArgs),
    /// Write built-in quality scores; check external score files.
    Score(StageArgs),
    /// Metrics, rarefaction, contrasts and bootstrap intervals.
    Analyze(StageArgs),
    /// Write report CSVs and the run manifest.
    Report(StageArgs),
    /// All stages in order.
    Run(StageArgs),
    /// Every template piece and rendered prompt.
    Prompts {
        #[command(subcommand)]
        command: ExportCommand,
    },
    /// The slogan judge prompts.
    JudgePrompts {
        #[command(subcommand)]
        command: ExportCommand,
    },
}

/// Loads the config named by `args` with the command-line overrides applied.
pub fn load_config(args: &StageArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed_override {
        cfg.override_seeds(seed);
    }
    match args.backend {
        Some(BackendArg::Mock) => cfg.backend = BackendKind::Mock,
        Some(BackendArg::Http) => cfg.backend = BackendKind::Http,
        None => {}
    }
    Ok(cfg)
}

fn kit_for(config: Option<&Path>) -> Result<PromptKit> {
    match config {
        Some(p) => RunConfig::load(p)?.prompt_kit(),
        None => Ok(PromptKit::reference()),
    }
}

fn run_stage(command: &Command, args: &StageArgs) -> Result<StageOutcome> {
    let cfg = load_config(args)?;
    let opts = StageOptions {
        only_cells: args.only_cells.clone(),
        resume: args.resume,
    };
    match command {
        Command::Generate(_) => {
            let backend = pipeline::build_backend(&cfg)?;
            let embedder = pipeline::build_embedder(&cfg)?;
            pipeline::generate(&cfg, &opts, backend.as_ref(), embedder.as_ref())
        }
        Command::Embed(_) => pipeline::embed(&cfg, &opts, pipeline::build_embedder(&cfg)?.as_ref()),
        Command::Score(_) => pipeline::score(&cfg, &opts),
        Command::Analyze(_) => pipeline::analyze(&cfg, &opts),
        Command::Report(_) => pipeline::report(&cfg, &opts),
        Command::Run(_) => {
            let backend = pipeline::build_backend(&cfg)?;
            let embedder = pipeline::build_embedder(&cfg)?;
            pipeline::run_all(&cfg, &opts, backend.as_ref(), embedder.as_ref())
        }
        Command::Prompts { .. } | Command::JudgePrompts { .. } => unreachable!("export commands are not stages"),
    }
}

fn print_outcome(name: &str, o: &StageOutcome) {
    println!(
        "{name}: {} done, {} skipped, {} failed",
        o.executed.len(),
        o.skipped.len(),
        o.failures.len()
    );
    for f in &o.failures {
        eprintln!("  failed {} [{}]: {}", f.cell, f.stage, f.message);
    }
}

fn print_export(out: &Path, s: &ExportSummary) {
    println!("wrote {} files to {}", s.files.len(), out.display());
}

/// Executes a parsed command and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Prompts { command: ExportCommand::Export(a) } => kit_for(a.config.as_deref())
            .and_then(|kit| export_prompts(&kit, &a.out))
            .map(|s| {
                print_export(&a.out, &s);
                EXIT_OK
            }),
        Command::JudgePrompts { command: ExportCommand::Export(a) } => kit_for(a.config.as_deref())
            .and_then(|kit| export_judge_prompts(&kit, &a.out))
            .map(|s| {
                print_export(&a.out, &s);
                EXIT_OK
            }),
        c @ (Command::Generate(a)
        | Command::Embed(a)
        | Command::Score(a)
        | Command::Analyze(a)
        | Command::Report(a)
        | Command::Run(a)) => run_stage(c, a).map(|o| {
            print_outcome(command_name(c), &o);
            if o.is_partial() {
                EXIT_PARTIAL
            } else {
                EXIT_OK
            }
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        EXIT_USAGE
    })
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Generate(_) => "generate",
        Command::Embed(_) => "embed",
        Command::Score(_) => "score",
        Command::Analyze(_) => "analyze",
        Command::Report(_) => "report",
        Command::Run(_) => "run",
        Command::Prompts { .. } => "prompts",
        Command::JudgePrompts { .. } => "judge-prompts",
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}
