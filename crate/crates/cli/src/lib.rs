//! Command-line front end for `randcarpet`.
//!
//! Every subcommand is a thin wrapper around library calls. [`dispatch`]
//! parses arguments, runs the command, prints a table to stdout and writes
//! the machine-readable report when `--out` is given.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod error;
pub mod render;
pub mod report;

pub use error::CliError;
pub use render::render_svg;
pub use report::{read_report, write_report, RunReport};

#[derive(Debug, Parser)]
#[command(name = "randcarpet", version, about = "Dimension of random self-affine carpets")]
pub struct Cli {
    /// Write the machine-readable report here (.json or .toml)
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,

    /// Worker threads for parallel sections (0 = all cores)
    #[arg(long, global = true, default_value_t = 0, value_name = "N")]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check geometry and the generic and robust hypotheses
    Validate(ValidateArgs),
    /// Evaluate the dimension by both maximization routes
    Dim(DimArgs),
    /// Range [t_under, t_over] of t(P)
    Bounds(BoundsArgs),
    /// Grid percolation: closed form against the optimizer
    Percolation(PercolationArgs),
    /// Sample environments and paths and trace the pointwise dimension
    Sample(SampleArgs),
    /// Build an n-approximation, optionally rendering it to SVG
    Approx(ApproxArgs),
    /// Box-counting estimate on an n-approximation
    Boxcount(BoxcountArgs),
    /// Print the report schema
    Schema,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// System description (JSON, or TOML with a .toml extension)
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Separation below which a grid point is suspect
    #[arg(long, default_value_t = randcarpet::model::DEFAULT_HYPOTHESIS_TOL)]
    pub tol: f64,
    /// Grid points on [0, 1] for the generic check
    #[arg(long, default_value_t = randcarpet::model::DEFAULT_GRID_POINTS)]
    pub grid: usize,
    /// Radius for the robust hypotheses
    #[arg(long, default_value_t = randcarpet::optimizer::DEFAULT_ROBUST_EPS)]
    pub eps: f64,
}

#[derive(Debug, Args)]
pub struct OptimizerArgs {
    /// Residual tolerance for the scalar solves
    #[arg(long, default_value_t = randcarpet::moran::DEFAULT_TOL)]
    pub tol: f64,
    /// Seed for the random starting points
    #[arg(long)]
    pub seed: Option<u64>,
    /// Starting points for the generic route
    #[arg(long, default_value_t = randcarpet::optimizer::DEFAULT_STARTS)]
    pub starts: usize,
    /// Chebyshev nodes for the structural route
    #[arg(long, default_value_t = randcarpet::optimizer::DEFAULT_T_GRID)]
    pub t_grid: usize,
    /// Warn when the two routes differ by more than this
    #[arg(long, default_value_t = randcarpet::optimizer::DEFAULT_AGREEMENT_TOL)]
    pub agreement_tol: f64,
}

#[derive(Debug, Args)]
pub struct DimArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub opt: OptimizerArgs,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, default_value_t = randcarpet::moran::DEFAULT_TOL)]
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PercolationMethod {
    /// Both routes for k = 2, structural only for larger grids
    Auto,
    /// Both routes
    Full,
    Structural,
    /// Closed form only
    None,
}

#[derive(Debug, Args)]
pub struct PercolationArgs {
    /// Grid size
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Square retention probability
    #[arg(long)]
    pub q: f64,
    #[arg(long, value_enum, default_value_t = PercolationMethod::Auto)]
    pub method: PercolationMethod,
    #[command(flatten)]
    pub opt: OptimizerArgs,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Path length n
    #[arg(long, default_value_t = 1000)]
    pub depth: usize,
    /// Independent environment/path pairs
    #[arg(long, default_value_t = 1)]
    pub replicas: usize,
    /// Points of the pointwise-dimension trace
    #[arg(long, default_value_t = 10)]
    pub trace_points: usize,
    #[arg(long, default_value_t = randcarpet::moran::DEFAULT_TOL)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct ApproxArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 6)]
    pub depth: usize,
    /// Rectangle budget per level
    #[arg(long, default_value_t = 100_000)]
    pub cap: usize,
    /// Write an SVG image of the approximation
    #[arg(long, value_name = "PATH")]
    pub render: Option<PathBuf>,
    /// Canvas size of the SVG image
    #[arg(long, default_value_t = 1024)]
    pub width: u32,
    /// Write one CSV record per rectangle
    #[arg(long, value_name = "PATH")]
    pub rects: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoxcountArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 10)]
    pub depth: usize,
    #[arg(long, default_value_t = 1_000_000)]
    pub cap: usize,
    /// Box sizes, strictly decreasing (default: powers of 1/2 down to the resolution)
    #[arg(long, value_delimiter = ',', value_name = "CSV")]
    pub scales: Option<Vec<f64>>,
}

/// Parses `argv` (including the program name) and runs the command without
/// printing anything.
pub fn run<I, T>(argv: I) -> Result<RunReport, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::Usage(e.to_string()))?;
    run_cli(&cli)
}

pub fn run_cli(cli: &Cli) -> Result<RunReport, CliError> {
    let report = if cli.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build()
            .map_err(|e| CliError::Threads(e.to_string()))?;
        pool.install(|| commands::execute(&cli.command))?
    } else {
        commands::execute(&cli.command)?
    };
    if let Some(path) = &cli.out {
        write_report(&report, path)?;
    }
    Ok(report)
}

/// Runs `argv` and prints the outcome. Exit codes: 0 success, 1 computation
/// or I/O error, 2 usage error.
pub fn dispatch<I, T>(argv: I) -> (i32, Option<RunReport>)
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return (code, None);
        }
    };
    match run_cli(&cli) {
        Ok(report) => {
            print!("{}", report::human_table(&report));
            let code = if commands::report_failed(&report) { 1 } else { 0 };
            (code, Some(report))
        }
        Err(e) => {
            eprintln!("error: {e}");
            (e.exit_code(), None)
        }
    }
}
