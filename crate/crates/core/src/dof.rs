//! Degrees of freedom and risk estimation for the Lasso response.
//!
//! For `y` outside a finite union of hyperplanes the response
//! `μ̂(z) = A x̂(z)` is locally affine around `y`,
//!
//! ```text
//! μ̂(z) = μ̂(y) + P_{V_{I*}} (z − y),
//! ```
//!
//! where `I*` is the support of any solution with linearly independent active
//! columns. The divergence of `μ̂` is then `tr P_{V_{I*}} = |I*|`, which makes
//! `|I*|` an unbiased dof estimate and gives SURE in closed form.
//!
//! The hyperplanes are indexed by `(I, j, S)` with `A_I` of full column rank,
//! `a_j ∉ span(A_I)` and `S ∈ {±1}^|I|`:
//!
//! ```text
//! ⟨P_{V_I^⊥} a_j, u⟩ = ±λ (1 − ⟨a_j, (A_I⁺)ᵀ S⟩)
//! ```
//!
//! [`in_g_lambda`] enumerates them for small `p`; [`divergence_fd`] and
//! [`local_affinity_check`] test the affine behaviour numerically.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designs::stream_rng;
use crate::error::{Error, Result};
use crate::numerics::{numerical_rank, select_columns, ColumnFactor, Vector, DEFAULT_RANK_TOL};
use crate::solver::{Problem, SolverOptions};
use crate::support::{solve_and_reduce, solve_and_reduce_from, ReducedSolution, Subsets};

/// Risk summary of one Lasso fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    /// `|I*|`.
    pub dof: usize,
    pub sure: f64,
    /// True squared error, only when `μ` is known.
    pub se: Option<f64>,
    /// `‖μ̂ − y‖²`.
    pub residual_sq: f64,
    pub sigma: f64,
    pub n: usize,
    pub p: usize,
    pub lambda: f64,
}

/// One hyperplane index `(I, j, S)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperplaneQuery {
    pub support: Vec<usize>,
    pub j: usize,
    pub signs: Vec<i8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub in_set: bool,
    /// First violated hyperplane in enumeration order.
    pub witness: Option<HyperplaneQuery>,
    pub hyperplanes_checked: usize,
}

/// Largest `p` accepted by [`in_g_lambda`].
pub const G_LAMBDA_MAX_P: usize = 12;

pub fn dof_estimate(reduced: &ReducedSolution) -> usize {
    reduced.support.len()
}

/// `SURE = −nσ² + ‖A x* − y‖² + 2σ²|I*|`.
pub fn sure(problem: &Problem, reduced: &ReducedSolution, sigma: f64) -> f64 {
    let residual_sq = (reduced.response(problem) - problem.y()).norm_squared();
    sure_from_parts(problem.n(), residual_sq, dof_estimate(reduced), sigma)
}

fn sure_from_parts(n: usize, residual_sq: f64, dof: usize, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    -(n as f64) * s2 + residual_sq + 2.0 * s2 * dof as f64
}

pub fn squared_error(mu_hat: &Vector, mu: &Vector) -> f64 {
    assert_eq!(mu_hat.len(), mu.len(), "squared_error: dimension mismatch");
    (mu_hat - mu).norm_squared()
}

pub fn risk_report(problem: &Problem, reduced: &ReducedSolution, sigma: f64, mu: Option<&Vector>) -> RiskReport {
    let mu_hat = reduced.response(problem);
    let residual_sq = (&mu_hat - problem.y()).norm_squared();
    let dof = dof_estimate(reduced);
    RiskReport {
        dof,
        sure: sure_from_parts(problem.n(), residual_sq, dof, sigma),
        se: mu.map(|mu| squared_error(&mu_hat, mu)),
        residual_sq,
        sigma,
        n: problem.n(),
        p: problem.p(),
        lambda: problem.lambda(),
    }
}

/// Finite-difference divergence of the response map.
#[derive(Debug, Clone, PartialEq)]
pub struct FdDivergence {
    /// `Σ_i (μ̂_i(y + δe_i) − μ̂_i(y − δe_i)) / 2δ`.
    pub divergence: f64,
    /// `|I*|` at `y`.
    pub dof: usize,
    /// Perturbed solves whose reduced support differs from `I*`.
    pub support_changes: usize,
    pub delta: f64,
}

pub fn default_fd_delta(problem: &Problem) -> f64 {
    1e-5 * (1.0 + problem.y().norm())
}

/// Central differences over the `2n` perturbations `y ± δ e_i`, each
/// warm-started from the reduced solution at `y`. Solves run in parallel and
/// are summed in index order.
pub fn divergence_fd(problem: &Problem, delta: Option<f64>, opts: &SolverOptions) -> Result<FdDivergence> {
    let delta = delta.unwrap_or_else(|| default_fd_delta(problem));
    if !(delta > 0.0) {
        return Err(Error::InvalidSpec(format!("delta must be > 0, got {delta}")));
    }
    let base = solve_and_reduce(problem, opts)?;
    let partials: Vec<(f64, usize)> = (0..problem.n())
        .into_par_iter()
        .map(|i| {
            let side = |sign: f64| -> Result<(f64, bool)> {
                let mut y = problem.y().clone();
                y[i] += sign * delta;
                let perturbed = problem.with_y(y)?;
                let reduced = solve_and_reduce_from(&perturbed, opts, &base.x_star)?;
                let mu_i = (perturbed.a().row(i) * &reduced.x_star)[0];
                Ok((mu_i, reduced.support != base.support))
            };
            let (plus, changed_plus) = side(1.0)?;
            let (minus, changed_minus) = side(-1.0)?;
            Ok(((plus - minus) / (2.0 * delta), changed_plus as usize + changed_minus as usize))
        })
        .collect::<Result<_>>()?;
    Ok(FdDivergence {
        divergence: partials.iter().map(|(d, _)| d).sum(),
        dof: dof_estimate(&base),
        support_changes: partials.iter().map(|(_, c)| c).sum(),
        delta,
    })
}

/// Whether `y` avoids every hyperplane `H_{I,j,S}` (to within `tol`,
/// default `1e-8 · λ`). Supports are enumerated by increasing size up to
/// `rank(A)`, then lexicographically; `j` increasing; sign patterns starting
/// from all `+1`.
pub fn in_g_lambda(problem: &Problem, tol: Option<f64>) -> Result<Membership> {
    let p = problem.p();
    if p > G_LAMBDA_MAX_P {
        return Err(Error::TooLarge { p, limit: G_LAMBDA_MAX_P });
    }
    let lambda = problem.lambda();
    let tol = tol.unwrap_or(1e-8 * lambda);
    let a = problem.a();
    let y = problem.y();
    let rank = numerical_rank(a, DEFAULT_RANK_TOL).rank;
    let mut checked = 0;
    for size in 0..=rank {
        for subset in Subsets::new(p, size) {
            let factor = (size > 0).then(|| ColumnFactor::new(&select_columns(a, &subset), DEFAULT_RANK_TOL));
            if factor.as_ref().is_some_and(|f| !f.is_full_column_rank()) {
                continue;
            }
            for j in (0..p).filter(|j| subset.binary_search(j).is_err()) {
                let a_j: Vector = a.column(j).into_owned();
                let (normal, coupling) = match &factor {
                    Some(f) => (f.project_complement(&a_j), f.pinv_apply(&a_j)),
                    None => (a_j.clone(), Vector::zeros(0)),
                };
                // a_j ∈ span(A_I): not part of the index set.
                if normal.norm() <= DEFAULT_RANK_TOL.max(1e-9) * a_j.norm().max(f64::MIN_POSITIVE) {
                    continue;
                }
                let offset = normal.dot(y);
                for mask in 0..(1_u64 << size) {
                    let dot: f64 = (0..size).map(|k| if mask >> k & 1 == 1 { -coupling[k] } else { coupling[k] }).sum();
                    let level = lambda * (1.0 - dot);
                    checked += 1;
                    if (offset - level).abs() <= tol || (offset + level).abs() <= tol {
                        return Ok(Membership {
                            in_set: false,
                            witness: Some(HyperplaneQuery {
                                support: subset.clone(),
                                j,
                                signs: (0..size).map(|k| if mask >> k & 1 == 1 { -1 } else { 1 }).collect(),
                            }),
                            hyperplanes_checked: checked,
                        });
                    }
                }
            }
        }
    }
    Ok(Membership { in_set: true, witness: None, hyperplanes_checked: checked })
}

/// Radius of a ball around `y` inside which the active set `I*` and its
/// signs provably stay optimal: small enough that `A_{I*}⁺(z − y)` cannot
/// flip a coefficient and no inactive correlation can reach `λ`. Columns in
/// `span(A_{I*})` keep their correlation fixed and impose no limit.
pub fn stable_radius(problem: &Problem, reduced: &ReducedSolution) -> f64 {
    let lambda = problem.lambda();
    let residual = problem.y() - reduced.response(problem);
    let mut radius = f64::INFINITY;
    let factor = (!reduced.support.is_empty())
        .then(|| ColumnFactor::new(&select_columns(problem.a(), &reduced.support), DEFAULT_RANK_TOL));
    if let Some(f) = &factor {
        let smallest_sv = f.singular_values().last().copied().unwrap_or(0.0);
        let smallest_coeff = reduced.support.iter().map(|&i| reduced.x_star[i].abs()).fold(f64::INFINITY, f64::min);
        radius = radius.min(smallest_coeff * smallest_sv);
    }
    for j in (0..problem.p()).filter(|j| reduced.support.binary_search(j).is_err()) {
        let a_j: Vector = problem.a().column(j).into_owned();
        let normal = match &factor {
            Some(f) => f.project_complement(&a_j),
            None => a_j.clone(),
        };
        let reach = normal.norm();
        if reach <= 1e-9 * a_j.norm().max(f64::MIN_POSITIVE) {
            continue;
        }
        let slack = lambda - a_j.dot(&residual).abs();
        radius = radius.min(slack.max(0.0) / reach);
    }
    radius
}

/// Largest deviation `‖μ̂(z) − μ̂(y) − P_{V_{I*}}(z − y)‖` over `trials`
/// points drawn uniformly from the ball `B(y, epsilon)`.
pub fn local_affinity_check(
    problem: &Problem,
    reduced: &ReducedSolution,
    epsilon: f64,
    trials: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<f64> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidSpec(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let n = problem.n();
    let mu_y = reduced.response(problem);
    let factor = (!reduced.support.is_empty())
        .then(|| ColumnFactor::new(&select_columns(problem.a(), &reduced.support), DEFAULT_RANK_TOL));
    let deviations: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, t);
            let mut direction = Vector::from_fn(n, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
            direction.unscale_mut(direction.norm());
            let u: f64 = rand::Rng::random(&mut rng);
            let step = direction * (epsilon * u.powf(1.0 / n as f64));
            let z = problem.y() + &step;
            let at_z = problem.with_y(z)?;
            let reduced_z = solve_and_reduce_from(&at_z, opts, &reduced.x_star)?;
            let predicted = match &factor {
                Some(f) => &mu_y + f.project(&step),
                None => mu_y.clone(),
            };
            Ok((reduced_z.response(&at_z) - predicted).norm())
        })
        .collect::<Result<_>>()?;
    Ok(deviations.into_iter().fold(0.0, f64::max))
}
