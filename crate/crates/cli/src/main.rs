//! `lassodof` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 non-convergence or
//! failure quota exceeded, 3 verification failure.

mod io;
mod verify;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use lassodof::dof::{dof_estimate, risk_report};
use lassodof::experiments::{self, risk_curves, select_lambda, write_curves_csv, LambdaSearch};
use lassodof::solver::solve;
use lassodof::support::reduce;
use lassodof::{ExperimentConfig, Problem, SolverOptions, Vector, SCHEMA_VERSION};

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn verification(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl From<lassodof::Error> for CliError {
    fn from(e: lassodof::Error) -> Self {
        let code = match e {
            lassodof::Error::NotConverged { .. } | lassodof::Error::QuotaExceeded { .. } => 2,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "lassodof", version, about = "Lasso degrees of freedom and SURE")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = "LASSODOF_JOBS")]
    jobs: Option<usize>,
    /// Output file (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format; `experiment` defaults to csv, everything else to json.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// KKT tolerance for the solver's stopping rule.
    #[arg(long = "tol-kkt", global = true)]
    tol_kkt: Option<f64>,
    /// Absolute threshold below which coefficients count as zero.
    #[arg(long = "tol-support", global = true)]
    tol_support: Option<f64>,
}

#[derive(Debug, Args)]
struct ProblemArgs {
    /// Design matrix: CSV (one row per line) or JSON design spec.
    #[arg(long)]
    matrix: PathBuf,
    /// Observation vector (CSV row or column).
    #[arg(long)]
    y: PathBuf,
    /// Penalty weight λ > 0.
    #[arg(long)]
    lambda: f64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one Lasso instance.
    Solve(ProblemArgs),
    /// Minimal-support solution and the dof estimate |I*|.
    Dof(ProblemArgs),
    /// SURE (and squared error when --mu is given).
    Sure {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        sigma: f64,
        /// True mean response, for the squared error.
        #[arg(long)]
        mu: Option<PathBuf>,
    },
    /// Monte Carlo risk experiment from a JSON config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's base_seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// λ minimizing SURE.
    SelectLambda {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        sigma: f64,
        /// Defaults to 1e-3·λ_max.
        #[arg(long)]
        lambda_min: Option<f64>,
        /// Defaults to λ_max = ‖Aᵀy‖_∞.
        #[arg(long)]
        lambda_max: Option<f64>,
        /// Grid size (log-spaced).
        #[arg(long, default_value_t = 40)]
        count: usize,
        /// Golden-section search on log λ instead of a grid.
        #[arg(long)]
        golden: bool,
    },
    /// Counterexample goldens and oracle cross-checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random instances per oracle check.
        #[arg(long, default_value_t = 10)]
        instances: usize,
    },
}

impl Cli {
    fn solver_options(&self) -> Result<SolverOptions, CliError> {
        let mut opts = SolverOptions::default();
        if let Some(t) = self.tol_kkt {
            opts.kkt_tolerance = t;
        }
        opts.support_tolerance = self.tol_support;
        opts.validate()?;
        Ok(opts)
    }

    fn format_or(&self, default: Format) -> Format {
        self.format.unwrap_or(default)
    }
}

fn load_problem(args: &ProblemArgs) -> Result<Problem, CliError> {
    let a = io::read_matrix(&args.matrix)?;
    let y = io::read_vector(&args.y)?;
    if y.len() != a.nrows() {
        return Err(CliError::usage(format!(
            "dimension mismatch: matrix {} has {} rows but y {} has {} entries",
            args.matrix.display(),
            a.nrows(),
            args.y.display(),
            y.len()
        )));
    }
    Ok(Problem::new(a, y, args.lambda)?)
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::usage(format!("serializing output: {e}")))
}

fn coefficients_csv(x: &Vector) -> String {
    let mut out = String::from("index,value\n");
    for (i, v) in x.iter().enumerate() {
        let _ = writeln!(out, "{i},{v}");
    }
    out
}

#[derive(Serialize)]
struct SolveOutput {
    schema_version: u32,
    lambda: f64,
    n: usize,
    p: usize,
    x_hat: Vec<f64>,
    support: Vec<usize>,
    signs: Vec<i8>,
    iterations_used: usize,
    kkt_residual: f64,
    kkt_tolerance: f64,
}

#[derive(Serialize)]
struct DofOutput {
    schema_version: u32,
    lambda: f64,
    dof: usize,
    x_star: Vec<f64>,
    support: Vec<usize>,
    signs: Vec<i8>,
    active_rank: usize,
    reduction_steps: usize,
}

#[derive(Serialize)]
struct Versioned<T: Serialize> {
    schema_version: u32,
    #[serde(flatten)]
    inner: T,
}

fn versioned<T: Serialize>(inner: T) -> Versioned<T> {
    Versioned { schema_version: SCHEMA_VERSION, inner }
}

fn cmd_solve(cli: &Cli, args: &ProblemArgs) -> Result<(), CliError> {
    let problem = load_problem(args)?;
    let opts = cli.solver_options()?;
    let sol = solve(&problem, &opts)?;
    let text = match cli.format_or(Format::Json) {
        Format::Csv => coefficients_csv(&sol.x_hat),
        Format::Json => to_json(&SolveOutput {
            schema_version: SCHEMA_VERSION,
            lambda: problem.lambda(),
            n: problem.n(),
            p: problem.p(),
            x_hat: sol.x_hat.iter().copied().collect(),
            support: sol.support,
            signs: sol.signs,
            iterations_used: sol.iterations_used,
            kkt_residual: sol.kkt_residual,
            kkt_tolerance: opts.kkt_tolerance,
        })?,
    };
    io::emit(cli.out.as_deref(), &text)
}

fn cmd_dof(cli: &Cli, args: &ProblemArgs) -> Result<(), CliError> {
    let problem = load_problem(args)?;
    let opts = cli.solver_options()?;
    let sol = solve(&problem, &opts)?;
    let reduced = reduce(&problem, &sol, &opts)?;
    let text = match cli.format_or(Format::Json) {
        Format::Csv => coefficients_csv(&reduced.x_star),
        Format::Json => to_json(&DofOutput {
            schema_version: SCHEMA_VERSION,
            lambda: problem.lambda(),
            dof: dof_estimate(&reduced),
            x_star: reduced.x_star.iter().copied().collect(),
            support: reduced.support,
            signs: reduced.signs,
            active_rank: reduced.active_rank,
            reduction_steps: reduced.reduction_steps,
        })?,
    };
    io::emit(cli.out.as_deref(), &text)
}

fn cmd_sure(cli: &Cli, args: &ProblemArgs, sigma: f64, mu: Option<&Path>) -> Result<(), CliError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(CliError::usage(format!("--sigma must be > 0, got {sigma}")));
    }
    let problem = load_problem(args)?;
    let mu = mu.map(io::read_vector).transpose()?;
    if let Some(m) = &mu {
        if m.len() != problem.n() {
            return Err(CliError::usage(format!(
                "dimension mismatch: mu has {} entries, expected n = {}",
                m.len(),
                problem.n()
            )));
        }
    }
    let opts = cli.solver_options()?;
    let reduced = reduce(&problem, &solve(&problem, &opts)?, &opts)?;
    let report = risk_report(&problem, &reduced, sigma, mu.as_ref());
    let text = match cli.format_or(Format::Json) {
        Format::Json => to_json(&versioned(&report))?,
        Format::Csv => {
            let mut writer = csv::Writer::from_writer(Vec::new());
            writer.serialize(&report).map_err(|e| CliError::usage(e.to_string()))?;
            String::from_utf8(writer.into_inner().map_err(|e| CliError::usage(e.to_string()))?)
                .expect("csv output is utf-8")
        }
    };
    io::emit(cli.out.as_deref(), &text)
}

fn cmd_experiment(cli: &Cli, config_path: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let text =
        std::fs::read_to_string(config_path).map_err(|e| CliError::usage(format!("{}: {e}", config_path.display())))?;
    let mut config =
        ExperimentConfig::from_json(&text).map_err(|e| CliError::usage(format!("{}: {e}", config_path.display())))?;
    if let Some(s) = seed {
        config.base_seed = s;
    }
    let opts = SolverOptions { acceleration: true, ..cli.solver_options()? };
    let records = experiments::run_all(&config, &opts)?;

    for rec in &records {
        eprintln!("n = {}, p = {}, K = {}", rec.n, rec.p, rec.replications);
        eprintln!(
            "{:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
            "lambda", "sure-se", "R_T", "R_hat_T", "bound", "failures"
        );
        for agg in &rec.aggregates {
            eprintln!(
                "{:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12}",
                agg.lambda,
                agg.mean_sure - agg.mean_se,
                agg.r_t,
                agg.r_hat_t,
                agg.bound,
                agg.failures
            );
        }
    }

    let json = to_json(&versioned(serde_json::json!({ "records": records })))?;
    match cli.format_or(Format::Csv) {
        Format::Json => io::emit(cli.out.as_deref(), &json),
        Format::Csv => {
            let mut buf = Vec::new();
            write_curves_csv(&risk_curves(&records), &mut buf)?;
            let csv_text = String::from_utf8(buf).expect("csv output is utf-8");
            io::emit(cli.out.as_deref(), &csv_text)?;
            match &cli.out {
                Some(path) => io::emit(Some(&path.with_extension("json")), &json),
                None => Ok(()),
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_select_lambda(
    cli: &Cli,
    matrix: &Path,
    y: &Path,
    sigma: f64,
    lambda_min: Option<f64>,
    lambda_max: Option<f64>,
    count: usize,
    golden: bool,
) -> Result<(), CliError> {
    let args = ProblemArgs { matrix: matrix.to_path_buf(), y: y.to_path_buf(), lambda: 1.0 };
    let problem = load_problem(&args)?;
    let hi = lambda_max.unwrap_or_else(|| problem.lambda_max());
    let lo = lambda_min.unwrap_or(1e-3 * hi);
    if !(lo > 0.0 && hi > lo) {
        return Err(CliError::usage(format!("need 0 < lambda-min < lambda-max, got [{lo}, {hi}]")));
    }
    if count == 0 {
        return Err(CliError::usage("--count must be >= 1"));
    }
    let search = if golden {
        LambdaSearch::GoldenSection { lo, hi, log_tol: 1e-3, max_evaluations: 200 }
    } else {
        LambdaSearch::Grid(experiments::log_space(lo, hi, count))
    };
    let opts = cli.solver_options()?;
    let selection = select_lambda(problem.a(), problem.y(), sigma, &search, &opts)?;
    let text = match cli.format_or(Format::Json) {
        Format::Json => to_json(&versioned(&selection))?,
        Format::Csv => {
            let mut out = String::from("lambda,sure\n");
            for (l, s) in &selection.evaluations {
                let _ = writeln!(out, "{l},{s}");
            }
            out
        }
    };
    io::emit(cli.out.as_deref(), &text)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Solve(args) => cmd_solve(cli, args),
        Command::Dof(args) => cmd_dof(cli, args),
        Command::Sure { problem, sigma, mu } => cmd_sure(cli, problem, *sigma, mu.as_deref()),
        Command::Experiment { config, seed } => cmd_experiment(cli, config, *seed),
        Command::SelectLambda { matrix, y, sigma, lambda_min, lambda_max, count, golden } => {
            cmd_select_lambda(cli, matrix, y, *sigma, *lambda_min, *lambda_max, *count, *golden)
        }
        Command::Verify { seed, instances } => {
            let opts = cli.solver_options()?;
            let results = verify::run_checks(*seed, *instances, &opts);
            let table = verify::render(&results);
            io::emit(cli.out.as_deref(), &table)?;
            let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::verification(format!("failed checks: {}", failed.join(", "))))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.jobs == Some(0) {
        eprintln!("error: --jobs must be >= 1");
        return ExitCode::from(1);
    }
    let outcome = match cli.jobs {
        Some(jobs) => experiments::with_jobs(jobs, || run(&cli)),
        None => run(&cli),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
