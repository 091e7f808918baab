//! Lasso solver: proximal gradient (iterative soft-thresholding) with an
//! optional momentum variant, stopped by the KKT conditions.
//!
//! A vector `x` minimizes `½‖y − Ax‖² + λ‖x‖₁` if and only if, with
//! `I = supp(x)` and `r = y − Ax`,
//!
//! ```text
//! A_Iᵀ r = λ sign(x_I)          (interior)
//! |⟨a_j, r⟩| ≤ λ   for j ∉ I    (boundary)
//! ```
//!
//! [`kkt_check`] measures both, and [`solve`] only reports success once they
//! hold to `kkt_tolerance`. Once the iterates settle on a support and sign
//! pattern, the solver also tries the closed-form candidate
//! `x_I = A_I⁺y − λ(A_IᵀA_I)⁺ s`; it is accepted only if it passes the same
//! certificate, which removes the slow tail of the iteration on badly
//! conditioned active sets.

use rand_distr::{Distribution, StandardNormal};

use crate::designs::stream_rng;
use crate::error::{Error, Result};
use crate::numerics::{select_columns, ColumnFactor, Matrix, Vector, DEFAULT_RANK_TOL};

/// A Lasso instance `(A, y, λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    a: Matrix,
    y: Vector,
    lambda: f64,
}

impl Problem {
    pub fn new(a: Matrix, y: Vector, lambda: f64) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::InvalidSpec(format!("design must be nonempty, got {}x{}", a.nrows(), a.ncols())));
        }
        if a.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows but observation has length {}",
                a.nrows(),
                y.len()
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidSpec(format!("lambda must be > 0, got {lambda}")));
        }
        if a.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("non-finite entries in design or observation".into()));
        }
        Ok(Self { a, y, lambda })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn y(&self) -> &Vector {
        &self.y
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> usize {
        self.a.ncols()
    }

    /// Same design and λ, new observation.
    pub fn with_y(&self, y: Vector) -> Result<Self> {
        Self::new(self.a.clone(), y, self.lambda)
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.a.clone(), self.y.clone(), lambda)
    }

    /// `‖Aᵀy‖_∞`, the smallest λ for which zero is a solution.
    pub fn lambda_max(&self) -> f64 {
        (self.a.transpose() * &self.y).amax()
    }

    pub fn objective(&self, x: &Vector) -> f64 {
        0.5 * (&self.y - &self.a * x).norm_squared() + self.lambda * x.lp_norm(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub kkt_tolerance: f64,
    /// Absolute support threshold. `None` uses `1e-9 · ‖x‖_∞` floored at `1e-12`.
    pub support_tolerance: Option<f64>,
    /// `None` uses `1/L`, `L` the power-iteration estimate of `‖A‖²`.
    pub step_size: Option<f64>,
    pub acceleration: bool,
    /// Try the closed-form candidate on a settled support.
    pub polish: bool,
    /// Iterations between KKT checks.
    pub check_interval: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200_000,
            kkt_tolerance: 1e-9,
            support_tolerance: None,
            step_size: None,
            acceleration: false,
            polish: true,
            check_interval: 10,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.kkt_tolerance > 0.0) {
            return Err(Error::InvalidSpec("kkt tolerance must be > 0".into()));
        }
        if matches!(self.support_tolerance, Some(t) if !(t > 0.0)) {
            return Err(Error::InvalidSpec("support tolerance must be > 0".into()));
        }
        if matches!(self.step_size, Some(t) if !(t > 0.0)) {
            return Err(Error::InvalidSpec("step size must be > 0".into()));
        }
        if self.check_interval == 0 {
            return Err(Error::InvalidSpec("check interval must be >= 1".into()));
        }
        Ok(())
    }

    pub fn accelerated() -> Self {
        Self { acceleration: true, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub x_hat: Vector,
    /// Increasing indices of entries above the support threshold.
    pub support: Vec<usize>,
    /// `sign(x_hat)` on `support`, entries in `{−1, +1}`.
    pub signs: Vec<i8>,
    pub iterations_used: usize,
    pub kkt_residual: f64,
}

impl LassoSolution {
    /// Wraps an arbitrary vector, deriving support and signs.
    pub fn from_vector(x_hat: Vector, support_tolerance: Option<f64>) -> Self {
        let support = detect_support(&x_hat, support_tolerance);
        let signs = signs_on(&x_hat, &support);
        Self { x_hat, support, signs, iterations_used: 0, kkt_residual: f64::NAN }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `‖A_Iᵀ(y − Ax) − λ sign(x_I)‖_∞`.
    pub interior_residual: f64,
    /// `max(0, max_{j∉I} |⟨a_j, y − Ax⟩| − λ)`.
    pub boundary_excess: f64,
    pub is_optimal: bool,
}

impl KktReport {
    pub fn residual(&self) -> f64 {
        self.interior_residual.max(self.boundary_excess)
    }
}

pub fn support_threshold(x: &Vector, support_tolerance: Option<f64>) -> f64 {
    support_tolerance.unwrap_or_else(|| (1e-9 * x.amax()).max(1e-12))
}

pub fn detect_support(x: &Vector, support_tolerance: Option<f64>) -> Vec<usize> {
    let threshold = support_threshold(x, support_tolerance);
    (0..x.len()).filter(|&i| x[i].abs() > threshold).collect()
}

fn signs_on(x: &Vector, support: &[usize]) -> Vec<i8> {
    support.iter().map(|&i| if x[i] > 0.0 { 1 } else { -1 }).collect()
}

/// Componentwise `sign(v)·max(|v| − t, 0)`.
pub fn soft_threshold(v: &Vector, t: f64) -> Vector {
    assert!(t >= 0.0, "threshold must be nonnegative");
    v.map(|x| shrink(x, t))
}

#[inline]
fn shrink(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// The Lasso response `A x`.
pub fn response(problem: &Problem, x: &Vector) -> Vector {
    problem.a() * x
}

pub fn kkt_check(problem: &Problem, x: &Vector, opts: &SolverOptions) -> KktReport {
    let support = detect_support(x, opts.support_tolerance);
    kkt_check_on(problem, x, &support, opts.kkt_tolerance)
}

fn kkt_check_on(problem: &Problem, x: &Vector, support: &[usize], tol: f64) -> KktReport {
    let residual = problem.y() - problem.a() * x;
    let corr = problem.a().tr_mul(&residual);
    let lambda = problem.lambda();
    let mut interior = 0.0_f64;
    let mut boundary = 0.0_f64;
    let mut next = support.iter().peekable();
    for (j, &c) in corr.iter().enumerate() {
        if next.peek() == Some(&&j) {
            next.next();
            interior = interior.max((c - lambda * x[j].signum()).abs());
        } else {
            boundary = boundary.max(c.abs() - lambda);
        }
    }
    KktReport { interior_residual: interior, boundary_excess: boundary, is_optimal: interior <= tol && boundary <= tol }
}

/// Power iteration estimate of the largest eigenvalue of `AᵀA`.
pub fn spectral_norm_sq(a: &Matrix) -> f64 {
    const ITERATIONS: usize = 30;
    const TOL: f64 = 1e-10;
    let mut rng = stream_rng(0x5eed, 0);
    let mut v = Vector::from_fn(a.ncols(), |_, _| -> f64 { StandardNormal.sample(&mut rng) });
    v.unscale_mut(v.norm());
    let mut estimate = 0.0;
    for _ in 0..ITERATIONS {
        let w = a.tr_mul(&(a * &v));
        let next = w.norm();
        if next == 0.0 {
            return 0.0;
        }
        v = w / next;
        let converged = (next - estimate).abs() <= TOL * next;
        estimate = next;
        if converged {
            break;
        }
    }
    estimate
}

/// Proximal gradient iterations on a fixed problem. [`solve`] drives this;
/// it is public so the iterate sequence itself can be inspected.
pub struct ProximalGradient<'a> {
    problem: &'a Problem,
    step: f64,
    x: Vector,
    momentum_point: Vector,
    momentum: f64,
    accelerate: bool,
    iterations: usize,
}

impl<'a> ProximalGradient<'a> {
    pub fn new(problem: &'a Problem, opts: &SolverOptions, start: Option<&Vector>) -> Self {
        let step = opts.step_size.unwrap_or_else(|| {
            let l = spectral_norm_sq(problem.a());
            if l > 0.0 {
                1.0 / l
            } else {
                1.0
            }
        });
        let x = start.cloned().unwrap_or_else(|| Vector::zeros(problem.p()));
        Self {
            problem,
            step,
            momentum_point: x.clone(),
            x,
            momentum: 1.0,
            accelerate: opts.acceleration,
            iterations: 0,
        }
    }

    pub fn step_size(&self) -> f64 {
        self.step
    }

    pub fn iterate(&self) -> &Vector {
        &self.x
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn step(&mut self) {
        let a = self.problem.a();
        let residual = a * &self.momentum_point - self.problem.y();
        let gradient = a.tr_mul(&residual);
        let threshold = self.step * self.problem.lambda();
        let next =
            Vector::from_fn(self.x.len(), |i, _| shrink(self.momentum_point[i] - self.step * gradient[i], threshold));
        if self.accelerate {
            // Gradient-based adaptive restart: drop momentum when it points uphill.
            let uphill = (&self.momentum_point - &next).dot(&(&next - &self.x)) > 0.0;
            if uphill {
                self.momentum = 1.0;
                self.momentum_point = next.clone();
            } else {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * self.momentum * self.momentum).sqrt());
                let beta = (self.momentum - 1.0) / t_next;
                self.momentum_point = &next + (&next - &self.x) * beta;
                self.momentum = t_next;
            }
        } else {
            self.momentum_point = next.clone();
        }
        self.x = next;
        self.iterations += 1;
    }
}

/// Closed-form candidate on a fixed support and sign pattern,
/// `x_I = A_I⁺y − λ(A_IᵀA_I)⁺ s`, kept only if its signs match `s`.
fn polish(problem: &Problem, support: &[usize], signs: &[i8]) -> Option<Vector> {
    if support.is_empty() {
        return Some(Vector::zeros(problem.p()));
    }
    let active = select_columns(problem.a(), support);
    let factor = ColumnFactor::new(&active, DEFAULT_RANK_TOL);
    if factor.rank() == 0 {
        return None;
    }
    let s = Vector::from_iterator(signs.len(), signs.iter().map(|&v| v as f64));
    let coeffs = factor.pinv_apply(problem.y()) - factor.gram_inverse_apply(&s) * problem.lambda();
    let consistent = coeffs.iter().zip(signs).all(|(c, &sg)| *c != 0.0 && (*c > 0.0) == (sg > 0));
    if !consistent {
        return None;
    }
    let mut x = Vector::zeros(problem.p());
    for (k, &i) in support.iter().enumerate() {
        x[i] = coeffs[k];
    }
    Some(x)
}

pub fn solve(problem: &Problem, opts: &SolverOptions) -> Result<LassoSolution> {
    solve_from(problem, opts, None)
}

/// [`solve`] with an explicit starting point.
pub fn solve_from(problem: &Problem, opts: &SolverOptions, start: Option<&Vector>) -> Result<LassoSolution> {
    opts.validate()?;
    if let Some(x) = start {
        if x.len() != problem.p() {
            return Err(Error::DimensionMismatch(format!(
                "start vector has length {} but design has {} columns",
                x.len(),
                problem.p()
            )));
        }
    }
    let mut iter = ProximalGradient::new(problem, opts, start);
    let finish = |x: Vector, iterations: usize| -> Option<LassoSolution> {
        let support = detect_support(&x, opts.support_tolerance);
        let report = kkt_check_on(problem, &x, &support, opts.kkt_tolerance);
        report.is_optimal.then(|| LassoSolution {
            signs: signs_on(&x, &support),
            support,
            x_hat: x,
            iterations_used: iterations,
            kkt_residual: report.residual(),
        })
    };

    if let Some(done) = finish(iter.iterate().clone(), 0) {
        return Ok(done);
    }
    let mut last_pattern: Option<(Vec<usize>, Vec<i8>)> = None;
    let mut polished_pattern: Option<(Vec<usize>, Vec<i8>)> = None;
    while iter.iterations() < opts.max_iterations {
        iter.step();
        let k = iter.iterations();
        if !k.is_multiple_of(opts.check_interval) && k != opts.max_iterations {
            continue;
        }
        if let Some(done) = finish(iter.iterate().clone(), k) {
            return Ok(done);
        }
        if opts.polish {
            let support = detect_support(iter.iterate(), opts.support_tolerance);
            let signs = signs_on(iter.iterate(), &support);
            let pattern = (support, signs);
            let settled = last_pattern.as_ref() == Some(&pattern);
            if settled && polished_pattern.as_ref() != Some(&pattern) {
                if let Some(candidate) = polish(problem, &pattern.0, &pattern.1) {
                    if let Some(done) = finish(candidate, k) {
                        return Ok(done);
                    }
                }
                polished_pattern = Some(pattern.clone());
            }
            last_pattern = Some(pattern);
        }
    }
    let x = iter.iterate().clone();
    let report = kkt_check(problem, &x, opts);
    Err(Error::NotConverged {
        iterations: iter.iterations(),
        kkt_residual: report.residual(),
        last_iterate: Box::new(x),
    })
}

/// Entries of `x` at `support`, in order.
pub fn restrict(x: &Vector, support: &[usize]) -> Vector {
    Vector::from_iterator(support.len(), support.iter().map(|&i| x[i]))
}
