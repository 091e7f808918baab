//! Seeded generators for design matrices, sparse signals and noise.
//!
//! All randomness comes from ChaCha20 with an explicit `(seed, stream)` pair,
//! so replications that run in parallel each own a disjoint stream.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

/// Stream reserved for design matrix draws.
pub const DESIGN_STREAM: u64 = 1 << 62;
/// Stream reserved for the ground-truth signal.
pub const SIGNAL_STREAM: u64 = (1 << 62) + 1;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn default_blur() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignSpec {
    /// Entries iid `N(0, 1/n)`.
    Gaussian {
        n: usize,
        p: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Circulant matrix of a discrete Gaussian blur with standard deviation
    /// `blur_width` samples, normalized to unit ℓ₂ norm. Width 0 is the identity.
    Convolution {
        n: usize,
        p: usize,
        #[serde(default = "default_blur")]
        blur_width: f64,
    },
    /// `n` distinct rows of the orthonormal `p × p` DCT-II, in increasing order.
    PartialFourier {
        n: usize,
        p: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Row-major entries supplied verbatim.
    Explicit { n: usize, p: usize, entries: Vec<f64> },
}

impl DesignSpec {
    pub fn n(&self) -> usize {
        match *self {
            DesignSpec::Gaussian { n, .. }
            | DesignSpec::Convolution { n, .. }
            | DesignSpec::PartialFourier { n, .. }
            | DesignSpec::Explicit { n, .. } => n,
        }
    }

    pub fn p(&self) -> usize {
        match *self {
            DesignSpec::Gaussian { p, .. }
            | DesignSpec::Convolution { p, .. }
            | DesignSpec::PartialFourier { p, .. }
            | DesignSpec::Explicit { p, .. } => p,
        }
    }

    /// Same family with new dimensions. Explicit designs cannot be resized.
    pub fn with_dims(&self, n: usize, p: usize) -> Result<DesignSpec> {
        Ok(match self.clone() {
            DesignSpec::Gaussian { seed, .. } => DesignSpec::Gaussian { n, p, seed },
            DesignSpec::Convolution { blur_width, .. } => DesignSpec::Convolution { n, p, blur_width },
            DesignSpec::PartialFourier { seed, .. } => DesignSpec::PartialFourier { n, p, seed },
            DesignSpec::Explicit { .. } => {
                return Err(Error::InvalidSpec("explicit designs have fixed dimensions".into()))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let (n, p) = (self.n(), self.p());
        if n == 0 || p == 0 {
            return Err(Error::InvalidSpec(format!("design must be nonempty, got {n}x{p}")));
        }
        match self {
            DesignSpec::Convolution { blur_width, .. } => {
                if n != p {
                    return Err(Error::InvalidSpec(format!("convolution design requires n = p, got n = {n}, p = {p}")));
                }
                if !(blur_width.is_finite() && *blur_width >= 0.0) {
                    return Err(Error::InvalidSpec(format!("blur width must be >= 0, got {blur_width}")));
                }
            }
            DesignSpec::PartialFourier { .. } if n > p => {
                return Err(Error::InvalidSpec(format!(
                    "partial Fourier design requires n <= p, got n = {n}, p = {p}"
                )));
            }
            DesignSpec::Explicit { entries, .. } => {
                if entries.len() != n * p {
                    return Err(Error::InvalidSpec(format!(
                        "explicit design has {} entries, expected {n}x{p} = {}",
                        entries.len(),
                        n * p
                    )));
                }
                if entries.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidSpec("explicit design has non-finite entries".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub p: usize,
    pub sparsity: usize,
}

impl SignalSpec {
    /// `⌈fraction · p⌉` nonzeros.
    pub fn with_fraction(p: usize, fraction: f64) -> Self {
        Self { p, sparsity: (fraction * p as f64).ceil() as usize }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Self {
        Self { sigma, seed, stream: 0 }
    }
}

pub fn make_design(spec: &DesignSpec) -> Result<Matrix> {
    spec.validate()?;
    Ok(match *spec {
        DesignSpec::Gaussian { n, p, seed } => {
            let mut rng = stream_rng(seed, DESIGN_STREAM);
            let scale = 1.0 / (n as f64).sqrt();
            // Row-major fill so the draw order does not depend on storage layout.
            let entries: Vec<f64> = (0..n * p)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
                .collect();
            Matrix::from_row_slice(n, p, &entries)
        }
        DesignSpec::Convolution { n, blur_width, .. } => circulant_blur(n, blur_width),
        DesignSpec::PartialFourier { n, p, seed } => {
            let mut rng = stream_rng(seed, DESIGN_STREAM);
            let mut rows = rand::seq::index::sample(&mut rng, p, n).into_vec();
            rows.sort_unstable();
            partial_dct(p, &rows)
        }
        DesignSpec::Explicit { n, p, ref entries } => Matrix::from_row_slice(n, p, entries),
    })
}

fn circulant_blur(n: usize, width: f64) -> Matrix {
    let kernel: Vec<f64> = (0..n)
        .map(|k| {
            let d = k.min(n - k) as f64;
            if width == 0.0 {
                if k == 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                (-d * d / (2.0 * width * width)).exp()
            }
        })
        .collect();
    let norm = kernel.iter().map(|k| k * k).sum::<f64>().sqrt();
    Matrix::from_fn(n, n, |i, j| kernel[(i + n - j) % n] / norm)
}

/// Selected rows of the orthonormal DCT-II matrix of size `p`.
fn partial_dct(p: usize, rows: &[usize]) -> Matrix {
    let pf = p as f64;
    Matrix::from_fn(rows.len(), p, |r, j| {
        let k = rows[r] as f64;
        let scale = if rows[r] == 0 { (1.0 / pf).sqrt() } else { (2.0 / pf).sqrt() };
        scale * (PI * (2.0 * j as f64 + 1.0) * k / (2.0 * pf)).cos()
    })
}

/// Sparse ground truth: `sparsity` positions uniformly without replacement,
/// standard normal amplitudes.
pub fn make_signal(spec: &SignalSpec, seed: u64) -> Result<Vector> {
    if spec.p == 0 || spec.sparsity > spec.p {
        return Err(Error::InvalidSpec(format!(
            "signal sparsity {} must be within [0, p = {}] with p >= 1",
            spec.sparsity, spec.p
        )));
    }
    let mut rng = stream_rng(seed, SIGNAL_STREAM);
    let mut positions = rand::seq::index::sample(&mut rng, spec.p, spec.sparsity).into_vec();
    positions.sort_unstable();
    let mut x = Vector::zeros(spec.p);
    for i in positions {
        // Standard normal draws are nonzero with probability one; guard anyway
        // so the support size is exact.
        let mut v: f64 = StandardNormal.sample(&mut rng);
        while v == 0.0 {
            v = StandardNormal.sample(&mut rng);
        }
        x[i] = v;
    }
    Ok(x)
}

/// Noise vector `ε ~ N(0, σ² I_n)` from the spec's stream.
pub fn make_noise(n: usize, noise: &NoiseSpec) -> Result<Vector> {
    if !(noise.sigma > 0.0 && noise.sigma.is_finite()) {
        return Err(Error::InvalidSpec(format!("sigma must be > 0, got {}", noise.sigma)));
    }
    let mut rng = stream_rng(noise.seed, noise.stream);
    Ok(Vector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        noise.sigma * z
    }))
}

/// `y = A x⁰ + ε`.
pub fn observe(a: &Matrix, x0: &Vector, noise: &NoiseSpec) -> Result<Vector> {
    if a.ncols() != x0.len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} columns but signal has length {}",
            a.ncols(),
            x0.len()
        )));
    }
    Ok(a * x0 + make_noise(a.nrows(), noise)?)
}
