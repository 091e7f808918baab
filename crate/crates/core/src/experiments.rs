//! Monte Carlo harness for SURE on the Lasso.
//!
//! One experiment fixes a design `A` and a sparse `x⁰` (so `μ = A x⁰` is
//! fixed), draws `K` noise replications `y^k = μ + ε^k`, and for every λ on
//! the grid fits the Lasso, reduces the solution and records a
//! [`RiskReport`]. The same `K` noise draws are reused across the grid.
//!
//! Per λ the aggregates are the mean and spread of SURE, the mean true
//! squared error, and two estimates of the normalized reliability
//! `E[((SURE − SE)/(nσ²))²]`: the empirical mean `R_T` and the plug-in
//! `R̂_T = −2/n + 4·mean‖μ̂ − y‖²/(n²σ²) + 4·mean|I*|/n²`, together with the
//! upper bound `6/n + 4‖μ‖²/(n²σ²)`.
//!
//! Replications run on the ambient rayon pool. Each owns the noise stream
//! `(base_seed, k)` and results are aggregated in replication order, so the
//! record does not depend on the number of worker threads.

use std::io::Write;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designs::{make_design, make_noise, make_signal, DesignSpec, NoiseSpec, SignalSpec};
use crate::dof::{risk_report, RiskReport};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};
use crate::solver::{Problem, SolverOptions};
use crate::support::solve_and_reduce;
use crate::SCHEMA_VERSION;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaGrid {
    /// Values of λ/σ.
    OverSigma { values: Vec<f64> },
    /// Values of λ.
    Absolute { values: Vec<f64> },
    /// `count` log-spaced values of λ/σ in `[lo, hi]`.
    LogSpacedOverSigma { lo: f64, hi: f64, count: usize },
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::LogSpacedOverSigma { lo: 1e-2, hi: 1e1, count: 40 }
    }
}

impl LambdaGrid {
    /// Absolute λ values for noise level `sigma`.
    pub fn resolve(&self, sigma: f64) -> Result<Vec<f64>> {
        let values = match self {
            LambdaGrid::OverSigma { values } => values.iter().map(|r| r * sigma).collect(),
            LambdaGrid::Absolute { values } => values.clone(),
            LambdaGrid::LogSpacedOverSigma { lo, hi, count } => {
                if !(*lo > 0.0 && hi >= lo) {
                    return Err(Error::InvalidSpec(format!("log grid needs 0 < lo <= hi, got [{lo}, {hi}]")));
                }
                log_space(*lo, *hi, *count).into_iter().map(|r| r * sigma).collect::<Vec<_>>()
            }
        };
        if values.is_empty() {
            return Err(Error::InvalidSpec("lambda grid is empty".into()));
        }
        if let Some(bad) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidSpec(format!("lambda values must be > 0, got {bad}")));
        }
        Ok(values)
    }
}

/// `count` points geometrically spaced from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
        }
    }
}

/// Reliability as a function of `n`: for each `n`, `p = p_over_n · n` and
/// the signal has `⌈sparsity_fraction · p⌉` nonzeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NSweep {
    pub n_values: Vec<usize>,
    pub p_over_n: usize,
    pub sparsity_fraction: f64,
}

/// Experiment description. Replication `k` draws its noise from stream `k`
/// of `base_seed`, and `x⁰` from the signal stream of `base_seed`; the
/// `seed`/`stream` fields of `noise` are not used here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub design: DesignSpec,
    pub signal: SignalSpec,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub lambdas: LambdaGrid,
    pub replications: usize,
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<NSweep>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| Error::InvalidSpec(format!("experiment config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidSpec(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.replications == 0 {
            return Err(Error::InvalidSpec("replications must be >= 1".into()));
        }
        if !(self.noise.sigma > 0.0 && self.noise.sigma.is_finite()) {
            return Err(Error::InvalidSpec(format!("sigma must be > 0, got {}", self.noise.sigma)));
        }
        self.lambdas.resolve(self.noise.sigma)?;
        match &self.sweep {
            None => {
                self.design.validate()?;
                if self.signal.p != self.design.p() {
                    return Err(Error::InvalidSpec(format!(
                        "signal length {} does not match design p = {}",
                        self.signal.p,
                        self.design.p()
                    )));
                }
                if self.signal.sparsity > self.signal.p {
                    return Err(Error::InvalidSpec("signal sparsity exceeds p".into()));
                }
            }
            Some(sweep) => {
                if sweep.n_values.is_empty() || sweep.p_over_n == 0 {
                    return Err(Error::InvalidSpec("sweep needs n values and p_over_n >= 1".into()));
                }
                if !(0.0..=1.0).contains(&sweep.sparsity_fraction) {
                    return Err(Error::InvalidSpec("sparsity_fraction must be in [0, 1]".into()));
                }
                for config in self.expand()? {
                    config.design.validate()?;
                }
            }
        }
        Ok(())
    }

    /// One concrete configuration per swept `n`, or just `self`.
    pub fn expand(&self) -> Result<Vec<ExperimentConfig>> {
        let Some(sweep) = &self.sweep else {
            return Ok(vec![self.clone()]);
        };
        sweep
            .n_values
            .iter()
            .map(|&n| {
                let p = sweep.p_over_n * n;
                Ok(ExperimentConfig {
                    design: self.design.with_dims(n, p)?,
                    signal: SignalSpec::with_fraction(p, sweep.sparsity_fraction),
                    sweep: None,
                    ..self.clone()
                })
            })
            .collect()
    }
}

/// Per-λ aggregates over the successful replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaAggregate {
    pub lambda: f64,
    pub mean_sure: f64,
    pub std_sure: f64,
    pub mean_se: f64,
    pub r_t: f64,
    pub r_hat_t: f64,
    pub bound: f64,
    pub failures: usize,
    pub mean_dof: f64,
    /// Mean and sample standard deviation of `SURE − SE`.
    pub gap_mean: f64,
    pub gap_std: f64,
    /// Sample standard deviation of `((SURE − SE)/(nσ²))²`.
    pub sq_gap_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub schema_version: u32,
    pub n: usize,
    pub p: usize,
    pub sigma: f64,
    pub replications: usize,
    pub mu_norm_sq: f64,
    pub lambdas: Vec<f64>,
    /// `reports[l][k]`: λ index `l`, replication `k`; `None` when the solver failed.
    pub reports: Vec<Vec<Option<RiskReport>>>,
    pub aggregates: Vec<LambdaAggregate>,
}

/// Mean of `((SURE − SE)/(nσ²))²`.
pub fn empirical_reliability(reports: &[RiskReport]) -> f64 {
    mean(reports.iter().map(|r| normalized_gap(r).powi(2)))
}

/// Plug-in reliability `−2/n + 4·mean(‖μ̂ − y‖²)/(n²σ²) + 4·mean(|I*|)/n²`.
pub fn predicted_reliability(reports: &[RiskReport]) -> f64 {
    let Some(first) = reports.first() else {
        return f64::NAN;
    };
    let n = first.n as f64;
    let s2 = first.sigma * first.sigma;
    let mean_residual = mean(reports.iter().map(|r| r.residual_sq));
    let mean_dof = mean(reports.iter().map(|r| r.dof as f64));
    -2.0 / n + 4.0 * mean_residual / (n * n * s2) + 4.0 * mean_dof / (n * n)
}

/// `6/n + 4‖μ‖²/(n²σ²)`.
pub fn reliability_bound(n: usize, mu: &Vector, sigma: f64) -> f64 {
    bound_from_norm(n, mu.norm_squared(), sigma)
}

fn bound_from_norm(n: usize, mu_norm_sq: f64, sigma: f64) -> f64 {
    let n = n as f64;
    6.0 / n + 4.0 * mu_norm_sq / (n * n * sigma * sigma)
}

fn normalized_gap(r: &RiskReport) -> f64 {
    let se = r.se.expect("reliability needs reports with known squared error");
    (r.sure - se) / (r.n as f64 * r.sigma * r.sigma)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Sample standard deviation (`K − 1` denominator); zero for a single value.
fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values.iter().copied());
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

fn aggregate(lambda: f64, reports: &[Option<RiskReport>], mu_norm_sq: f64) -> LambdaAggregate {
    let ok: Vec<RiskReport> = reports.iter().flatten().cloned().collect();
    let n = ok.first().map_or(0, |r| r.n);
    let sigma = ok.first().map_or(f64::NAN, |r| r.sigma);
    let sures: Vec<f64> = ok.iter().map(|r| r.sure).collect();
    let gaps: Vec<f64> = ok.iter().map(|r| r.sure - r.se.unwrap_or(f64::NAN)).collect();
    let sq_gaps: Vec<f64> = ok.iter().map(|r| normalized_gap(r).powi(2)).collect();
    LambdaAggregate {
        lambda,
        mean_sure: mean(sures.iter().copied()),
        std_sure: sample_std(&sures),
        mean_se: mean(ok.iter().map(|r| r.se.unwrap_or(f64::NAN))),
        r_t: empirical_reliability(&ok),
        r_hat_t: predicted_reliability(&ok),
        bound: bound_from_norm(n, mu_norm_sq, sigma),
        failures: reports.len() - ok.len(),
        mean_dof: mean(ok.iter().map(|r| r.dof as f64)),
        gap_mean: mean(gaps.iter().copied()),
        gap_std: sample_std(&gaps),
        sq_gap_std: sample_std(&sq_gaps),
    }
}

/// Fixed design, signal and response for a configuration.
pub struct Instance {
    pub a: Matrix,
    pub x0: Vector,
    pub mu: Vector,
}

pub fn instance(config: &ExperimentConfig) -> Result<Instance> {
    let a = make_design(&config.design)?;
    let x0 = make_signal(&config.signal, config.base_seed)?;
    let mu = &a * &x0;
    Ok(Instance { a, x0, mu })
}

/// Observation of replication `k`.
pub fn replication_observation(config: &ExperimentConfig, mu: &Vector, k: usize) -> Result<Vector> {
    let noise = NoiseSpec { sigma: config.noise.sigma, seed: config.base_seed, stream: k as u64 };
    Ok(mu + make_noise(mu.len(), &noise)?)
}

/// Allowed failed replications per λ: 1% of `K`, rounded down.
pub fn failure_quota(replications: usize) -> usize {
    replications / 100
}

/// Runs a single (non-sweep) experiment.
pub fn run(config: &ExperimentConfig, opts: &SolverOptions) -> Result<ExperimentRecord> {
    config.validate()?;
    if config.sweep.is_some() {
        return Err(Error::InvalidSpec("use run_all for n-sweep configurations".into()));
    }
    let sigma = config.noise.sigma;
    let lambdas = config.lambdas.resolve(sigma)?;
    let Instance { a, mu, .. } = instance(config)?;

    let per_replication: Vec<Vec<Option<RiskReport>>> = (0..config.replications)
        .into_par_iter()
        .map(|k| -> Result<Vec<Option<RiskReport>>> {
            let y = replication_observation(config, &mu, k)?;
            lambdas
                .iter()
                .map(|&lambda| {
                    let problem = Problem::new(a.clone(), y.clone(), lambda)?;
                    match solve_and_reduce(&problem, opts) {
                        Ok(reduced) => Ok(Some(risk_report(&problem, &reduced, sigma, Some(&mu)))),
                        Err(Error::NotConverged { iterations, kkt_residual, .. }) => {
                            warn!("replication {k}, lambda {lambda}: no convergence after {iterations} iterations (KKT residual {kkt_residual:e})");
                            Ok(None)
                        }
                        Err(e) => Err(e),
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let reports: Vec<Vec<Option<RiskReport>>> =
        (0..lambdas.len()).map(|l| per_replication.iter().map(|rep| rep[l].clone()).collect()).collect();
    let mu_norm_sq = mu.norm_squared();
    let aggregates: Vec<LambdaAggregate> =
        lambdas.iter().zip(&reports).map(|(&lambda, reps)| aggregate(lambda, reps, mu_norm_sq)).collect();

    let quota = failure_quota(config.replications);
    if let Some(worst) = aggregates.iter().map(|a| a.failures).max().filter(|&f| f > quota) {
        return Err(Error::QuotaExceeded { failures: worst, replications: config.replications, quota });
    }
    Ok(ExperimentRecord {
        schema_version: SCHEMA_VERSION,
        n: a.nrows(),
        p: a.ncols(),
        sigma,
        replications: config.replications,
        mu_norm_sq,
        lambdas,
        reports,
        aggregates,
    })
}

/// Runs every configuration of a sweep (or the single configuration).
pub fn run_all(config: &ExperimentConfig, opts: &SolverOptions) -> Result<Vec<ExperimentRecord>> {
    config.validate()?;
    config.expand()?.iter().map(|c| run(c, opts)).collect()
}

/// Runs `f` on a dedicated pool of `jobs` threads.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().expect("thread pool").install(f)
}

/// One row of the plot-ready risk table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub lambda: f64,
    pub n: usize,
    pub p: usize,
    pub mean_sure: f64,
    pub std_sure: f64,
    pub mean_se: f64,
    pub r_t: f64,
    pub r_hat_t: f64,
    pub bound: f64,
    pub failures: usize,
}

pub const CURVE_HEADERS: [&str; 10] =
    ["lambda", "n", "p", "mean_sure", "std_sure", "mean_se", "r_t", "r_hat_t", "bound", "failures"];

pub fn risk_curves(records: &[ExperimentRecord]) -> Vec<CurveRow> {
    records
        .iter()
        .flat_map(|rec| {
            rec.aggregates.iter().map(move |agg| CurveRow {
                lambda: agg.lambda,
                n: rec.n,
                p: rec.p,
                mean_sure: agg.mean_sure,
                std_sure: agg.std_sure,
                mean_se: agg.mean_se,
                r_t: agg.r_t,
                r_hat_t: agg.r_hat_t,
                bound: agg.bound,
                failures: agg.failures,
            })
        })
        .collect()
}

pub fn write_curves_csv<W: Write>(rows: &[CurveRow], out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let io = |e: csv::Error| Error::InvalidSpec(format!("writing CSV: {e}"));
    writer.write_record(CURVE_HEADERS).map_err(io)?;
    for row in rows {
        writer.serialize(row).map_err(io)?;
    }
    writer.flush().map_err(|e| Error::InvalidSpec(format!("writing CSV: {e}")))?;
    Ok(())
}

/// How [`select_lambda`] searches.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaSearch {
    Grid(Vec<f64>),
    /// Golden-section search on `log λ` over `[lo, hi]`, stopping once the
    /// bracket is narrower than `log_tol` in `log λ`.
    GoldenSection {
        lo: f64,
        hi: f64,
        log_tol: f64,
        max_evaluations: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionWarning {
    /// The golden-section bracket collapsed onto an end of the search interval.
    NonUnimodal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub sure: f64,
    /// Every `(λ, SURE)` evaluated, in evaluation order.
    pub evaluations: Vec<(f64, f64)>,
    pub warning: Option<SelectionWarning>,
}

/// λ minimizing SURE for the observation `y`.
pub fn select_lambda(
    a: &Matrix,
    y: &Vector,
    sigma: f64,
    search: &LambdaSearch,
    opts: &SolverOptions,
) -> Result<LambdaSelection> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidSpec(format!("sigma must be > 0, got {sigma}")));
    }
    let evaluate = |lambda: f64| -> Result<f64> {
        let problem = Problem::new(a.clone(), y.clone(), lambda)?;
        let reduced = solve_and_reduce(&problem, opts)?;
        Ok(crate::dof::sure(&problem, &reduced, sigma))
    };
    match search {
        LambdaSearch::Grid(grid) => {
            if grid.is_empty() {
                return Err(Error::InvalidSpec("lambda grid is empty".into()));
            }
            let values: Vec<f64> = grid.par_iter().map(|&l| evaluate(l)).collect::<Result<_>>()?;
            let evaluations: Vec<(f64, f64)> = grid.iter().copied().zip(values).collect();
            let &(lambda, sure) = evaluations
                .iter()
                .fold(None, |best: Option<&(f64, f64)>, e| match best {
                    Some(b) if b.1 <= e.1 => Some(b),
                    _ => Some(e),
                })
                .expect("nonempty grid");
            Ok(LambdaSelection { lambda, sure, evaluations, warning: None })
        }
        &LambdaSearch::GoldenSection { lo, hi, log_tol, max_evaluations } => {
            if !(lo > 0.0 && hi > lo && log_tol > 0.0) {
                return Err(Error::InvalidSpec(format!("invalid bracket [{lo}, {hi}]")));
            }
            let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
            let (mut a_log, mut b_log) = (lo.ln(), hi.ln());
            let mut evaluations = Vec::new();
            let eval_log = |t: f64, evals: &mut Vec<(f64, f64)>| -> Result<f64> {
                let lambda = t.exp();
                let value = evaluate(lambda)?;
                evals.push((lambda, value));
                Ok(value)
            };
            let mut c = b_log - inv_phi * (b_log - a_log);
            let mut d = a_log + inv_phi * (b_log - a_log);
            let mut fc = eval_log(c, &mut evaluations)?;
            let mut fd = eval_log(d, &mut evaluations)?;
            while b_log - a_log > log_tol && evaluations.len() < max_evaluations {
                if fc <= fd {
                    b_log = d;
                    d = c;
                    fd = fc;
                    c = b_log - inv_phi * (b_log - a_log);
                    fc = eval_log(c, &mut evaluations)?;
                } else {
                    a_log = c;
                    c = d;
                    fc = fd;
                    d = a_log + inv_phi * (b_log - a_log);
                    fd = eval_log(d, &mut evaluations)?;
                }
            }
            let &(lambda, sure) =
                evaluations.iter().min_by(|x, y| x.1.total_cmp(&y.1)).expect("at least two evaluations");
            let edge = 2.0 * log_tol;
            let warning = (a_log - lo.ln() < edge || hi.ln() - b_log < edge).then_some(SelectionWarning::NonUnimodal);
            if warning.is_some() {
                warn!("golden-section search for lambda ended at the edge of [{lo}, {hi}]");
            }
            Ok(LambdaSelection { lambda, sure, evaluations, warning })
        }
    }
}
