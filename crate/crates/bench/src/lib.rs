//! Shared fixtures for the criterion benches.

use lassodof::designs::{make_design, make_signal, observe};
use lassodof::{DesignSpec, NoiseSpec, Problem, SignalSpec};

/// Gaussian `n × p` instance with a `k`-sparse signal and unit noise,
/// `λ = lambda_over_sigma`.
pub fn gaussian_problem(n: usize, p: usize, k: usize, lambda_over_sigma: f64, seed: u64) -> Problem {
    let a = make_design(&DesignSpec::Gaussian { n, p, seed }).expect("valid design");
    let x0 = make_signal(&SignalSpec { p, sparsity: k }, seed).expect("valid signal");
    let y = observe(&a, &x0, &NoiseSpec::new(1.0, seed)).expect("dimensions agree");
    Problem::new(a, y, lambda_over_sigma).expect("valid problem")
}
