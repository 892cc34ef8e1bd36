//! `fdecomp`: decompose expressions, build graph sets, check containment and
//! run the LSTM and hybrid-automaton demos.
//!
//! Exit codes: 0 success, 1 usage or parse error, 2 numerical or budget
//! failure, 3 verification failure.

mod args;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use args::{TolSpec, VarSpec};

#[derive(Debug, Parser)]
#[command(name = "fdecomp", version, about = "Functional decomposition and hybrid zonotope graph sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decompose expressions and write every simplification stage.
    Decompose(DecomposeArgs),
    /// Build a hybrid zonotope containing the graph of a function.
    Graphset(GraphsetArgs),
    /// Check containment of points in a hybrid zonotope.
    Check(CheckArgs),
    /// Count the leaves of a hybrid zonotope.
    Leaves(LeavesArgs),
    /// Decompose one LSTM step.
    Lstm(LstmArgs),
    /// Hybrid automaton demo: decomposition, graph set and containment.
    Dha(DhaArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Dot,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Products {
    Rewrite,
    Direct,
}

/// Expression sources shared by `decompose` and `graphset`.
#[derive(Debug, Args)]
struct Source {
    /// Infix expression; repeat for a vector-valued function.
    #[arg(long = "expr", value_name = "EXPR")]
    exprs: Vec<String>,
    /// File with one infix expression per line (`#` starts a comment).
    #[arg(long, value_name = "PATH")]
    file: Option<PathBuf>,
    /// Variable in slot order, optionally with a domain: `x` or `x=[-3.14,3.14]`.
    #[arg(long = "vars", value_name = "VAR", num_args = 1..)]
    vars: Vec<VarSpec>,
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    #[command(flatten)]
    source: Source,
    /// Extra protected observables as 1-based `w` indices of the dedup stage.
    #[arg(long, value_delimiter = ',', value_name = "INDICES")]
    protect: Vec<usize>,
    /// Keep single-use affine observables instead of folding them.
    #[arg(long)]
    no_affine_fold: bool,
    /// Directory for per-stage artifacts.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Artifact formats; defaults to json and dot.
    #[arg(long, value_enum, value_delimiter = ',')]
    format: Vec<Format>,
}

#[derive(Debug, Args)]
struct Approx {
    /// Per-primitive band tolerance, e.g. `sin=0.1`; repeatable.
    #[arg(long = "tol", value_name = "F=EPS")]
    tols: Vec<TolSpec>,
    /// Tolerance for primitives without an explicit `--tol`.
    #[arg(long, default_value_t = 0.05)]
    tol_default: f64,
    #[arg(long, value_enum, default_value = "rewrite")]
    products: Products,
    /// Segment budget per band.
    #[arg(long, default_value_t = 256)]
    max_segments: usize,
}

#[derive(Debug, Args)]
struct GraphsetArgs {
    #[command(flatten)]
    source: Source,
    /// Decomposition JSON to build from instead of expressions.
    #[arg(long, value_name = "PATH", conflicts_with_all = ["exprs", "file"])]
    fd: Option<PathBuf>,
    #[command(flatten)]
    approx: Approx,
    /// Simplify (dedup, affine folding, reduction) before building.
    #[arg(long)]
    simplify: bool,
    /// Also count leaves (can be expensive).
    #[arg(long)]
    leaves: bool,
    /// Number of sampled input points for the boundary CSV.
    #[arg(long, default_value_t = 101)]
    samples: usize,
    /// Sample this many graph points and check their containment.
    #[arg(long, default_value_t = 0)]
    verify: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    /// Hybrid zonotope JSON.
    #[arg(long, value_name = "PATH")]
    set: PathBuf,
    /// CSV of points, one per row (a non-numeric first row is a header).
    #[arg(long, value_name = "PATH")]
    points: PathBuf,
    /// Containment tolerance on each coordinate.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Write per-point verdicts here instead of stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LeavesArgs {
    #[arg(long, value_name = "PATH")]
    set: PathBuf,
    /// Search node budget.
    #[arg(long, default_value_t = 200_000)]
    node_limit: usize,
}

#[derive(Debug, Args)]
struct LstmArgs {
    /// LSTM spec JSON; without it weights are drawn uniformly from [-1, 1].
    #[arg(long, value_name = "PATH")]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    nodes: usize,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Compare against the direct evaluator on this many random inputs.
    #[arg(long, default_value_t = 1000)]
    check: usize,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DhaArgs {
    /// Domains for `x` and `u`, e.g. `x=[-2,2] u=[-1,1]`.
    #[arg(long = "vars", value_name = "VAR", num_args = 1..)]
    vars: Vec<VarSpec>,
    /// Random transitions to check.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

/// A failure mapped to an exit code.
#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Numeric(anyhow::Error),
    Verify(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Numeric(_) => 2,
            Failure::Verify(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(e) => write!(f, "error: {e:#}"),
            Failure::Numeric(e) => write!(f, "numerical failure: {e:#}"),
            Failure::Verify(m) => write!(f, "verification failed: {m}"),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Decompose(a) => commands::decompose(a),
        Command::Graphset(a) => commands::graphset(a),
        Command::Check(a) => commands::check(a),
        Command::Leaves(a) => commands::leaves(a),
        Command::Lstm(a) => commands::lstm(a),
        Command::Dha(a) => commands::dha(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.code())
        }
    }
}
