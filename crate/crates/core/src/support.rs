//! Reduction of a Lasso solution to one with linearly independent active
//! columns.
//!
//! If the active matrix `A_I` of an optimal `x` has a kernel vector `h`
//! (supported in `I`), every `x + t h` has the same response `A x`, and for
//! small `|t|` the same ℓ₁ norm, so the whole segment is optimal. Walking
//! along `h` until the first coordinate hits zero removes one index from the
//! support without leaving the solution set; repeating until `A_I` has full
//! column rank gives `I*`, whose size is the dof estimate.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{kernel_vector, numerical_rank, select_columns, ColumnFactor, Vector, DEFAULT_RANK_TOL};
use crate::solver::{detect_support, kkt_check, solve, solve_from, LassoSolution, Problem, SolverOptions};

/// A Lasso solution whose active matrix `A_{I*}` has full column rank.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedSolution {
    #[serde(serialize_with = "serialize_vector")]
    pub x_star: Vector,
    pub support: Vec<usize>,
    pub signs: Vec<i8>,
    pub active_rank: usize,
    pub reduction_steps: usize,
}

fn serialize_vector<S: serde::Serializer>(v: &Vector, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

impl ReducedSolution {
    pub fn response(&self, problem: &Problem) -> Vector {
        problem.a() * &self.x_star
    }
}

/// Largest exhaustive enumeration accepted by [`brute_force_min_support`].
pub const BRUTE_FORCE_MAX_P: usize = 14;

pub fn reduce(problem: &Problem, sol: &LassoSolution, opts: &SolverOptions) -> Result<ReducedSolution> {
    let report = kkt_check(problem, &sol.x_hat, opts);
    if !report.is_optimal {
        return Err(Error::NotOptimalInput { kkt_residual: report.residual() });
    }
    let mut x = sol.x_hat.clone();
    let mut support = sol.support.clone();
    // Entries below the support threshold are numerically zero; make them so.
    for i in 0..x.len() {
        if support.binary_search(&i).is_err() {
            x[i] = 0.0;
        }
    }
    let mut steps = 0;
    loop {
        let active = select_columns(problem.a(), &support);
        let rank = if support.is_empty() { 0 } else { numerical_rank(&active, DEFAULT_RANK_TOL).rank };
        if rank == support.len() {
            let signs = support.iter().map(|&i| if x[i] > 0.0 { 1 } else { -1 }).collect();
            return Ok(ReducedSolution { x_star: x, support, signs, active_rank: rank, reduction_steps: steps });
        }
        let h = kernel_vector(&active)?;
        let (slot, t0) = annihilating_step(&support, &x, &h)
            .or_else(|| annihilating_step(&support, &x, &(-&h)).map(|(k, t)| (k, -t)))
            .expect("a kernel direction with zero ℓ₁ slope always reaches a coordinate hyperplane");
        for (k, &i) in support.iter().enumerate() {
            x[i] += t0 * h[k];
        }
        x[support[slot]] = 0.0;
        steps += 1;
        let threshold = crate::solver::support_threshold(&x, opts.support_tolerance);
        support.retain(|&i| {
            if x[i].abs() > threshold {
                true
            } else {
                x[i] = 0.0;
                false
            }
        });
    }
}

/// Smallest `t > 0` with `x_i + t h_k = 0` for some `i = support[k]`; ties go
/// to the lowest index. Returns the slot in `support` and `t`.
fn annihilating_step(support: &[usize], x: &Vector, h: &Vector) -> Option<(usize, f64)> {
    let scale = h.amax();
    let mut best: Option<(usize, f64)> = None;
    for (k, &i) in support.iter().enumerate() {
        if h[k].abs() <= 1e-12 * scale {
            continue;
        }
        let t = -x[i] / h[k];
        if t > 0.0 && best.is_none_or(|(_, b)| t < b) {
            best = Some((k, t));
        }
    }
    best
}

/// Solve, then reduce.
pub fn solve_and_reduce(problem: &Problem, opts: &SolverOptions) -> Result<ReducedSolution> {
    let sol = solve(problem, opts)?;
    reduce(problem, &sol, opts)
}

/// [`solve_and_reduce`] with a warm start.
pub fn solve_and_reduce_from(problem: &Problem, opts: &SolverOptions, start: &Vector) -> Result<ReducedSolution> {
    let sol = solve_from(problem, opts, Some(start))?;
    reduce(problem, &sol, opts)
}

/// Exhaustive minimal support size over the solution set.
///
/// Every Lasso solution has response `μ = A x̂` and ℓ₁ norm `‖x̂‖₁`, and any
/// vector sharing both is a solution. Subsets `J` are scanned by increasing
/// size; for each `J` with `A_J` of full column rank the only candidate is
/// `A_J⁺μ`, accepted when it reproduces `μ` and `‖x̂‖₁` within `1e-8`.
/// Rank-deficient `J` need not be tried: a solution supported there can be
/// moved along the kernel of `A_J` onto a strictly smaller support.
pub fn brute_force_min_support(problem: &Problem, sol: &LassoSolution) -> Result<usize> {
    const TOL: f64 = 1e-8;
    let p = problem.p();
    if p > BRUTE_FORCE_MAX_P {
        return Err(Error::TooLarge { p, limit: BRUTE_FORCE_MAX_P });
    }
    let mu = problem.a() * &sol.x_hat;
    let l1 = sol.x_hat.lp_norm(1);
    if mu.norm() <= TOL && l1 <= TOL {
        return Ok(0);
    }
    for size in 1..=p {
        for subset in Subsets::new(p, size) {
            let active = select_columns(problem.a(), &subset);
            let factor = ColumnFactor::new(&active, DEFAULT_RANK_TOL);
            if !factor.is_full_column_rank() {
                continue;
            }
            let coeffs = factor.pinv_apply(&mu);
            if (&active * &coeffs - &mu).norm() <= TOL && (coeffs.lp_norm(1) - l1).abs() <= TOL {
                return Ok(size);
            }
        }
    }
    let report = kkt_check(problem, &sol.x_hat, &SolverOptions::default());
    Err(Error::NotOptimalInput { kkt_residual: report.residual() })
}

/// Support of `x` under the solver's default rule.
pub fn support_of(x: &Vector, opts: &SolverOptions) -> Vec<usize> {
    detect_support(x, opts.support_tolerance)
}

/// Lexicographic `k`-subsets of `0..n`.
pub struct Subsets {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Subsets {
    pub fn new(n: usize, k: usize) -> Self {
        Self { n, current: (k <= n).then(|| (0..k).collect()) }
    }
}

impl Iterator for Subsets {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.take()?;
        let k = out.len();
        if let Some(i) = (0..k).rev().find(|&i| out[i] < self.n - k + i) {
            let mut next = out.clone();
            next[i] += 1;
            for j in i + 1..k {
                next[j] = next[j - 1] + 1;
            }
            self.current = Some(next);
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{identity, Matrix};

    fn duplicated_problem() -> Problem {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        Problem::new(a, Vector::from_row_slice(&[2.0, 0.0]), 0.5).unwrap()
    }

    #[test]
    fn subsets_enumerate_binomially() {
        assert_eq!(Subsets::new(5, 2).count(), 10);
        assert_eq!(Subsets::new(4, 0).collect::<Vec<_>>(), vec![Vec::<usize>::new()]);
        assert_eq!(Subsets::new(3, 4).count(), 0);
        let all: Vec<_> = Subsets::new(4, 3).collect();
        assert_eq!(all, vec![vec![0, 1, 2], vec![0, 1, 3], vec![0, 2, 3], vec![1, 2, 3]]);
    }

    #[test]
    fn full_rank_input_is_unchanged() {
        let p = Problem::new(identity(2), Vector::from_row_slice(&[3.0, -1.0]), 1.0).unwrap();
        let opts = SolverOptions::default();
        let sol = solve(&p, &opts).unwrap();
        let reduced = reduce(&p, &sol, &opts).unwrap();
        assert_eq!(reduced.reduction_steps, 0);
        assert_eq!(reduced.x_star, sol.x_hat);
        assert_eq!(reduced.support, vec![0]);
        assert_eq!(brute_force_min_support(&p, &sol).unwrap(), 1);
    }

    #[test]
    fn duplicated_column_collapses_to_one() {
        // A = [a, a], y = 2a, λ = 0.5: optimal coefficient sum is 1.5.
        let p = duplicated_problem();
        let opts = SolverOptions::default();
        let split = LassoSolution::from_vector(Vector::from_row_slice(&[0.75, 0.75]), None);
        assert!(kkt_check(&p, &split.x_hat, &opts).is_optimal);
        let reduced = reduce(&p, &split, &opts).unwrap();
        assert_eq!(reduced.support.len(), 1);
        assert_eq!(reduced.active_rank, 1);
        assert_eq!(reduced.reduction_steps, 1);
        assert!((reduced.x_star.lp_norm(1) - 1.5).abs() < 1e-12);
        assert!((reduced.x_star.amax() - 1.5).abs() < 1e-12);
        assert!((reduced.response(&p) - p.a() * &split.x_hat).amax() < 1e-12);
        assert!(kkt_check(&p, &reduced.x_star, &opts).is_optimal);
        assert_eq!(brute_force_min_support(&p, &split).unwrap(), 1);
    }

    #[test]
    fn zero_solution() {
        let p = duplicated_problem().with_lambda(10.0).unwrap();
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(brute_force_min_support(&p, &sol).unwrap(), 0);
        let reduced = reduce(&p, &sol, &SolverOptions::default()).unwrap();
        assert!(reduced.support.is_empty());
    }

    #[test]
    fn rejects_non_optimal_input() {
        let p = duplicated_problem();
        let bad = LassoSolution::from_vector(Vector::from_row_slice(&[1.0, 0.0]), None);
        assert!(matches!(reduce(&p, &bad, &SolverOptions::default()), Err(Error::NotOptimalInput { .. })));
    }

    #[test]
    fn brute_force_guard() {
        let a = Matrix::from_element(2, 15, 1.0);
        let p = Problem::new(a, Vector::from_row_slice(&[1.0, 1.0]), 0.1).unwrap();
        let sol = LassoSolution::from_vector(Vector::zeros(15), None);
        assert!(matches!(brute_force_min_support(&p, &sol), Err(Error::TooLarge { p: 15, limit: 14 })));
    }

    #[test]
    fn opposite_columns_reduce() {
        // a₂ = −a₁: any split x₁ − x₂ = c with opposite signs is optimal.
        let a = Matrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, 0.5, -0.5, 1.0, 0.0, 0.0, 1.0]);
        let p = Problem::new(a, Vector::from_row_slice(&[2.0, 1.0, 0.3]), 0.2).unwrap();
        let opts = SolverOptions::default();
        let sol = solve(&p, &opts).unwrap();
        let reduced = reduce(&p, &sol, &opts).unwrap();
        assert_eq!(reduced.active_rank, reduced.support.len());
        assert_eq!(reduced.support.len(), brute_force_min_support(&p, &sol).unwrap());
        assert!((reduced.x_star.lp_norm(1) - sol.x_hat.lp_norm(1)).abs() < 1e-9);
    }
}
