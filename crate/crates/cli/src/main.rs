//! `beqh`: command-line driver for the evaluation harness.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use beqh_core::beq::Metric;
use beqh_core::pipeline::SelectionMethod;

/// Exit statuses.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const SCHEMA: u8 = 2;
    pub const BACKEND: u8 = 3;
    pub const PARTIAL: u8 = 4;
}

#[derive(Debug, Parser)]
#[command(name = "beqh", version, about = "Evaluate statement autoformalization with Lean 4")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Lean,
    Scripted,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Lean => "lean",
            BackendKind::Scripted => "scripted",
        }
    }
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML file of defaults keyed by long flag name; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "lean")]
    pub backend: BackendKind,
    /// Lean project containing the REPL and Mathlib.
    #[arg(long, global = true, env = "BEQH_LEAN_PROJECT", value_name = "DIR")]
    pub project: Option<PathBuf>,
    /// REPL command line, run inside the project (default `lake exe repl`).
    #[arg(long, global = true, value_name = "CMD")]
    pub repl_cmd: Option<String>,
    /// Transcript replayed by the scripted backend.
    #[arg(long, global = true, value_name = "FILE")]
    pub transcript: Option<PathBuf>,
    /// Save every REPL exchange of this run as a transcript.
    #[arg(long, global = true, value_name = "FILE")]
    pub record: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Per-command REPL timeout in seconds.
    #[arg(long, global = true, env = "BEQH_TIMEOUT", default_value_t = 60.0)]
    pub timeout: f64,
    /// Per-attempt timeout for equivalence tactics, in seconds.
    #[arg(long, global = true, default_value_t = 20.0)]
    pub attempt_timeout: f64,
    /// Restart a REPL session after this many commands.
    #[arg(long, global = true, default_value_t = 200)]
    pub recycle_after: usize,
    /// Imports used when a statement's context brings none.
    #[arg(long, global = true, default_value = "import Mathlib")]
    pub header: String,
    /// Do not add a default header.
    #[arg(long, global = true)]
    pub no_header: bool,
    /// JSON object renaming dataset fields: {"canonical": "source"}.
    #[arg(long, global = true, value_name = "FILE")]
    pub field_map: Option<PathBuf>,
    #[arg(long, global = true, default_value = "beqh-out", value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Leave elapsed times at zero so repeated runs produce identical files.
    #[arg(long, global = true)]
    pub no_timing: bool,
    /// Run data-parallel helpers sequentially.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean and type-check every candidate of every pool.
    Typecheck {
        #[arg(long, value_name = "FILE")]
        pools: PathBuf,
    },
    /// Check statement pairs for equivalence.
    Beq {
        #[arg(long, value_name = "FILE")]
        pairs: PathBuf,
        #[arg(long, value_parser = parse_metric, default_value = "beq-plus")]
        metric: Metric,
        #[command(flatten)]
        beq: BeqFlags,
        /// Verdict log (default: OUT_DIR/verdicts.jsonl).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Score a metric against human equivalence labels.
    EvalVerif {
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        #[arg(long, value_parser = parse_metric, default_value = "beq-plus")]
        metric: Metric,
        /// Reference-length cut points for the strata.
        #[arg(long, value_parser = parse_cuts, default_value = "115,165")]
        strata: (usize, usize),
        #[command(flatten)]
        beq: BeqFlags,
    },
    /// Filter, select and score sampled candidates against references.
    EvalAutoform {
        #[arg(long, value_name = "FILE")]
        pools: PathBuf,
        #[arg(long, value_name = "FILE")]
        refs: PathBuf,
        #[arg(long = "select", value_parser = parse_method, default_value = "random")]
        method: SelectionMethod,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// pass@k values; BEq+ is then checked on every survivor.
        #[arg(long = "k", value_delimiter = ',')]
        k_list: Vec<u64>,
        /// Metrics computed on the selected candidate.
        #[arg(long = "metrics", value_parser = parse_metric, value_delimiter = ',', default_value = "beq-l,beq-plus")]
        metrics: Vec<Metric>,
        /// Skip type-check filtering before selection.
        #[arg(long)]
        no_filter: bool,
        /// Human judgments of selected candidates (JSONL).
        #[arg(long, value_name = "FILE")]
        labels: Option<PathBuf>,
        /// Maximum pair checks per problem for symbolic selection.
        #[arg(long)]
        budget: Option<usize>,
        #[command(flatten)]
        beq: BeqFlags,
    },
    /// Correlate human accuracy with automated rates across benchmark runs.
    Correlate {
        #[arg(long, value_name = "FILE")]
        points: PathBuf,
    },
    /// Sample candidate pools from a completion endpoint.
    Generate {
        #[arg(long, value_name = "FILE")]
        problems: PathBuf,
        #[arg(long, value_name = "URL")]
        endpoint: Option<String>,
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 0.0)]
        temperature: f64,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 1024)]
        max_tokens: u32,
        #[arg(long, default_value_t = 4)]
        retries: u32,
        /// Name of the environment variable holding the API token.
        #[arg(long, value_name = "VAR")]
        token_env: Option<String>,
        /// Prompt with `{informal}` and optional `{context}` placeholders.
        #[arg(long, value_name = "FILE")]
        prompt_template: PathBuf,
        /// Pool file (default: OUT_DIR/pools.jsonl).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct BeqFlags {
    /// Disable the triviality guard (reproduces the unguarded metric).
    #[arg(long)]
    pub no_guard: bool,
    /// Skip the backward direction when the forward one fails.
    #[arg(long)]
    pub short_circuit: bool,
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse()
}

fn parse_method(s: &str) -> Result<SelectionMethod, String> {
    s.parse()
}

fn parse_cuts(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected two comma-separated lengths")?;
    let a: usize = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    if a >= b {
        return Err(format!("cuts must increase, got {a},{b}"));
    }
    Ok((a, b))
}

fn main() -> ExitCode {
    let argv = match config::expand_args(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit::SCHEMA);
        }
    };
    let cli = Cli::parse_from(&argv);
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level)))
        .with_writer(std::io::stderr)
        .init();
    let code = match commands::run(&cli, &argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code)
}
