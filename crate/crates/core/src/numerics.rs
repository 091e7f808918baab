//! Dense linear algebra on top of `nalgebra`.
//!
//! Everything here goes through a singular value decomposition: rank
//! decisions, pseudo-inverses, projectors onto column spans and kernel
//! vectors all read off the same factorization, so they agree with each other
//! about what "numerically zero" means. The rank threshold is relative:
//! a singular value counts when it exceeds `tol · σ_max`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative rank tolerance used when none is given.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Outcome of a numerical rank decision.
#[derive(Debug, Clone, PartialEq)]
pub struct RankInfo {
    pub rank: usize,
    /// Singular values in nonincreasing order.
    pub singular_values: Vec<f64>,
    /// Absolute threshold, `tol · σ_max`.
    pub tolerance_used: f64,
}

/// SVD with singular values sorted in nonincreasing order.
struct SortedSvd {
    u: Matrix,
    values: Vec<f64>,
    /// Right singular vectors as columns.
    v: Matrix,
}

impl SortedSvd {
    fn new(m: &Matrix) -> Self {
        let svd = m.clone().svd(true, true);
        let u = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v_t requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let values = order.iter().map(|&i| svd.singular_values[i]).collect();
        let u = Matrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
        let v = Matrix::from_fn(v_t.ncols(), order.len(), |r, c| v_t[(order[c], r)]);
        Self { u, values, v }
    }

    fn rank(&self, tol: f64) -> (usize, f64) {
        let max = self.values.first().copied().unwrap_or(0.0);
        let threshold = tol * max;
        let rank = self.values.iter().filter(|&&s| s > threshold && s > 0.0).count();
        (rank, threshold)
    }
}

/// A matrix factored once and reused for the operations the Lasso
/// optimality conditions need: `A⁺b`, `(AᵀA)⁻¹s`, `(A⁺)ᵀs` and projections
/// onto the column span and its orthogonal complement.
///
/// Only the numerically nonzero part of the spectrum is kept, so on a rank
/// deficient matrix the "inverses" are the Moore-Penrose ones.
#[derive(Debug, Clone)]
pub struct ColumnFactor {
    u: Matrix,
    s: Vec<f64>,
    v: Matrix,
    cols: usize,
}

impl ColumnFactor {
    pub fn new(m: &Matrix, tol: f64) -> Self {
        let svd = SortedSvd::new(m);
        let (rank, _) = svd.rank(tol);
        Self {
            u: svd.u.columns(0, rank).into_owned(),
            s: svd.values[..rank].to_vec(),
            v: svd.v.columns(0, rank).into_owned(),
            cols: m.ncols(),
        }
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Retained singular values, nonincreasing.
    pub fn singular_values(&self) -> &[f64] {
        &self.s
    }

    pub fn is_full_column_rank(&self) -> bool {
        self.rank() == self.cols
    }

    /// `P b`, the orthogonal projection onto the column span.
    pub fn project(&self, b: &Vector) -> Vector {
        &self.u * (self.u.transpose() * b)
    }

    /// `(I − P) b`.
    pub fn project_complement(&self, b: &Vector) -> Vector {
        b - self.project(b)
    }

    /// `A⁺ b`.
    pub fn pinv_apply(&self, b: &Vector) -> Vector {
        let mut coeffs = self.u.transpose() * b;
        for (c, s) in coeffs.iter_mut().zip(&self.s) {
            *c /= s;
        }
        &self.v * coeffs
    }

    /// `(AᵀA)⁺ w`.
    pub fn gram_inverse_apply(&self, w: &Vector) -> Vector {
        let mut coeffs = self.v.transpose() * w;
        for (c, s) in coeffs.iter_mut().zip(&self.s) {
            *c /= s * s;
        }
        &self.v * coeffs
    }

    /// `(A⁺)ᵀ w`.
    pub fn pinv_transpose_apply(&self, w: &Vector) -> Vector {
        let mut coeffs = self.v.transpose() * w;
        for (c, s) in coeffs.iter_mut().zip(&self.s) {
            *c /= s;
        }
        &self.u * coeffs
    }
}

pub fn numerical_rank(m: &Matrix, tol: f64) -> RankInfo {
    assert!(tol > 0.0, "rank tolerance must be positive");
    let svd = SortedSvd::new(m);
    let (rank, tolerance_used) = svd.rank(tol);
    RankInfo { rank, singular_values: svd.values, tolerance_used }
}

/// Moore-Penrose pseudo-inverse of a full-column-rank matrix, `(MᵀM)⁻¹Mᵀ`,
/// computed from the SVD rather than the normal equations.
pub fn pseudo_inverse(m: &Matrix) -> Result<Matrix> {
    pseudo_inverse_with_tol(m, DEFAULT_RANK_TOL)
}

pub fn pseudo_inverse_with_tol(m: &Matrix, tol: f64) -> Result<Matrix> {
    let svd = SortedSvd::new(m);
    let (rank, _) = svd.rank(tol);
    if rank < m.ncols() {
        return Err(Error::RankDeficient { rank, cols: m.ncols() });
    }
    let mut v_scaled = svd.v.columns(0, rank).into_owned();
    for (c, s) in svd.values[..rank].iter().enumerate() {
        v_scaled.column_mut(c).unscale_mut(*s);
    }
    Ok(v_scaled * svd.u.columns(0, rank).transpose())
}

/// Orthogonal projector onto the column span of `m`. `m` may be rank deficient.
pub fn projector(m: &Matrix) -> Matrix {
    let svd = SortedSvd::new(m);
    let (rank, _) = svd.rank(DEFAULT_RANK_TOL);
    let u = svd.u.columns(0, rank);
    u * u.transpose()
}

/// Unit vector `h` with `M h ≈ 0`: the right singular vector of the smallest
/// singular value, signed so that its first non-negligible entry is positive.
pub fn kernel_vector(m: &Matrix) -> Result<Vector> {
    let cols = m.ncols();
    // A wide matrix has a kernel the thin SVD does not expose; pad with zero
    // rows so the decomposition returns a full set of right singular vectors.
    let padded;
    let square = if m.nrows() < cols {
        padded = m.clone().resize_vertically(cols, 0.0);
        &padded
    } else {
        m
    };
    let svd = SortedSvd::new(square);
    let (rank, _) = svd.rank(DEFAULT_RANK_TOL);
    if rank == cols {
        return Err(Error::FullRank { cols });
    }
    let mut h: Vector = svd.v.column(cols - 1).into_owned();
    h.unscale_mut(h.norm());
    let scale = h.amax();
    if let Some(first) = h.iter().find(|x| x.abs() > 1e-8 * scale) {
        if *first < 0.0 {
            h.neg_mut();
        }
    }
    Ok(h)
}

/// Columns of `a` indexed by `idx`, in that order.
pub fn select_columns(a: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(a.nrows(), idx.len(), |r, c| a[(r, idx[c])])
}

pub fn identity(n: usize) -> Matrix {
    Matrix::identity(n, n)
}

/// Largest entry of `|m|`.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}
