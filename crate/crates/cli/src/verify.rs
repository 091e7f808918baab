use std::fmt::Write as _;

use lassodof::designs::{make_design, make_signal, observe};
use lassodof::dof::{divergence_fd, dof_estimate, in_g_lambda, local_affinity_check, stable_radius};
use lassodof::solver::{kkt_check, solve};
use lassodof::support::{brute_force_min_support, reduce};
use lassodof::{DesignSpec, HyperplaneQuery, Matrix, NoiseSpec, Problem, SignalSpec, SolverOptions, Vector};

/// Tolerance the goldens and the certification check use, whatever the
/// solver was asked for.
const STRICT_KKT: f64 = 1e-8;
const GOLDEN_TOL: f64 = 1e-8;

pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: Result<String, String>) -> CheckResult {
    match outcome {
        Ok(detail) => CheckResult { name, passed: true, detail },
        Err(detail) => CheckResult { name, passed: false, detail },
    }
}

fn counterexample(y: [f64; 2], lambda: f64) -> Problem {
    let a = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
    Problem::new(a, Vector::from_row_slice(&y), lambda).expect("valid fixture")
}

fn strict() -> SolverOptions {
    SolverOptions { kkt_tolerance: STRICT_KKT, ..SolverOptions::default() }
}

fn gaussian_instance(n: usize, p: usize, k: usize, lambda: f64, seed: u64, noise_stream: u64) -> Problem {
    let a = make_design(&DesignSpec::Gaussian { n, p, seed }).expect("valid design");
    let x0 = make_signal(&SignalSpec { p, sparsity: k }, seed).expect("valid signal");
    let y = observe(&a, &x0, &NoiseSpec { sigma: 1.0, seed, stream: noise_stream }).expect("matching dims");
    Problem::new(a, y, lambda).expect("valid problem")
}

/// Gaussian design with a duplicated column, a negated column and a column
/// in the span of two others.
pub fn collinear_instance(seed: u64) -> Problem {
    let (n, p) = (6, 10);
    let mut a = make_design(&DesignSpec::Gaussian { n, p, seed }).expect("valid design");
    let dup = a.column(0).into_owned();
    a.set_column(7, &dup);
    let neg = -a.column(1);
    a.set_column(8, &neg);
    let sum = a.column(2) + a.column(3);
    a.set_column(9, &sum);
    let x0 = make_signal(&SignalSpec { p, sparsity: 3 }, seed).expect("valid signal");
    let y = observe(&a, &x0, &NoiseSpec { sigma: 0.5, seed, stream: 0 }).expect("matching dims");
    let lambda = 0.3 * (a.transpose() * &y).amax();
    Problem::new(a, y, lambda).expect("valid problem")
}

fn counterexample_solve(opts: &SolverOptions) -> Result<String, String> {
    for (y, expected) in [([1.0, 0.0], [0.7, 0.0]), ([1.0, 0.2], [0.5, 0.2])] {
        let problem = counterexample(y, 0.3);
        let sol = solve(&problem, opts).map_err(|e| e.to_string())?;
        let err = (sol.x_hat.clone() - Vector::from_row_slice(&expected)).amax();
        if err > GOLDEN_TOL {
            return Err(format!("y = {y:?}: got {:?}, error {err:.2e}", sol.x_hat.as_slice()));
        }
    }
    Ok("(0.7, 0) and (0.5, 0.2)".into())
}

fn counterexample_dof(opts: &SolverOptions) -> Result<String, String> {
    let mut found = Vec::new();
    for y in [[1.0, 0.0], [1.0, 0.2]] {
        let problem = counterexample(y, 0.3);
        let sol = solve(&problem, opts).map_err(|e| e.to_string())?;
        let reduced = reduce(&problem, &sol, opts).map_err(|e| e.to_string())?;
        found.push(dof_estimate(&reduced));
    }
    if found == [1, 2] {
        Ok("1 and 2".into())
    } else {
        Err(format!("expected [1, 2], got {found:?}"))
    }
}

fn counterexample_membership() -> Result<String, String> {
    let on = in_g_lambda(&counterexample([1.0, 0.0], 0.3), None).map_err(|e| e.to_string())?;
    let expected = HyperplaneQuery { support: vec![0], j: 1, signs: vec![1] };
    if on.in_set || on.witness.as_ref() != Some(&expected) {
        return Err(format!("y = e1: in_set = {}, witness {:?}", on.in_set, on.witness));
    }
    let off = in_g_lambda(&counterexample([1.0, 0.2], 0.3), None).map_err(|e| e.to_string())?;
    if !off.in_set {
        return Err(format!("z1 flagged with witness {:?}", off.witness));
    }
    Ok("e1 on H({1}, 2, +1); z1 generic".into())
}

fn kkt_certification(opts: &SolverOptions, seed: u64, instances: usize) -> Result<String, String> {
    let mut problems = vec![counterexample([1.0, 0.0], 0.3), counterexample([1.0, 0.2], 0.3)];
    problems.extend((0..instances as u64).map(|s| gaussian_instance(20, 40, 5, 1.0, seed.wrapping_add(s), 0)));
    problems.extend((0..instances as u64).map(|s| collinear_instance(seed.wrapping_add(s))));
    for (i, problem) in problems.iter().enumerate() {
        let sol = solve(problem, opts).map_err(|e| format!("instance {i}: {e}"))?;
        let report = kkt_check(problem, &sol.x_hat, &strict());
        if !report.is_optimal {
            return Err(format!("instance {i}: KKT residual {:.2e} > {STRICT_KKT:e}", report.residual()));
        }
    }
    Ok(format!("{} solutions within {STRICT_KKT:e}", problems.len()))
}

fn divergence_matches_dof(opts: &SolverOptions, seed: u64, instances: usize) -> Result<String, String> {
    let mut mismatches = Vec::new();
    for s in 0..instances as u64 {
        let mut outcome = None;
        for stream in 0..2 {
            let problem = gaussian_instance(20, 40, 5, 1.0, seed.wrapping_add(s), stream);
            let fd = divergence_fd(&problem, None, opts).map_err(|e| e.to_string())?;
            outcome = Some(fd.clone());
            if fd.support_changes == 0 {
                break;
            }
        }
        let fd = outcome.expect("at least one draw");
        if (fd.divergence - fd.dof as f64).abs() > 1e-3 {
            mismatches.push(format!("seed {}: {:.6} vs {}", seed.wrapping_add(s), fd.divergence, fd.dof));
        }
    }
    let allowed = instances / 50;
    if mismatches.len() <= allowed {
        Ok(format!("{}/{instances} within 1e-3", instances - mismatches.len()))
    } else {
        Err(mismatches.join("; "))
    }
}

fn minimal_support(opts: &SolverOptions, seed: u64, instances: usize) -> Result<String, String> {
    for s in 0..instances as u64 {
        let problem = collinear_instance(seed.wrapping_add(s));
        let sol = solve(&problem, opts).map_err(|e| e.to_string())?;
        let reduced = reduce(&problem, &sol, opts).map_err(|e| e.to_string())?;
        let oracle = brute_force_min_support(&problem, &sol).map_err(|e| e.to_string())?;
        if reduced.support.len() != oracle {
            return Err(format!(
                "seed {}: reduce gave {}, exhaustive search {oracle}",
                seed.wrapping_add(s),
                reduced.support.len()
            ));
        }
    }
    Ok(format!("{instances} collinear instances"))
}

fn local_affinity(opts: &SolverOptions, seed: u64, instances: usize) -> Result<String, String> {
    const EPSILON: f64 = 1e-3;
    let mut tested = 0;
    let mut worst: f64 = 0.0;
    let mut s = 0u64;
    while tested < instances && s < 20 * instances as u64 + 20 {
        let problem = gaussian_instance(20, 40, 5, 1.0, seed.wrapping_add(s), 0);
        s += 1;
        let sol = solve(&problem, opts).map_err(|e| e.to_string())?;
        let reduced = reduce(&problem, &sol, opts).map_err(|e| e.to_string())?;
        if stable_radius(&problem, &reduced) <= 2.0 * EPSILON {
            continue;
        }
        let deviation = local_affinity_check(&problem, &reduced, EPSILON, 10, s, opts).map_err(|e| e.to_string())?;
        worst = worst.max(deviation);
        tested += 1;
    }
    if tested < instances {
        return Err(format!("only {tested} generic instances found"));
    }
    if worst < 1e-6 {
        Ok(format!("max deviation {worst:.2e} over {tested} instances"))
    } else {
        Err(format!("max deviation {worst:.2e}"))
    }
}

pub fn run_checks(seed: u64, instances: usize, opts: &SolverOptions) -> Vec<CheckResult> {
    vec![
        check("counterexample_solve", counterexample_solve(opts)),
        check("counterexample_dof", counterexample_dof(opts)),
        check("counterexample_membership", counterexample_membership()),
        check("kkt_certification", kkt_certification(opts, seed, instances)),
        check("divergence_vs_dof", divergence_matches_dof(opts, seed, instances)),
        check("minimal_support", minimal_support(opts, seed, instances)),
        check("local_affinity", local_affinity(opts, seed, instances)),
    ]
}

pub fn render(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{status}  {:<width$}  {}", r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    let _ = writeln!(out, "{} passed, {failed} failed", results.len() - failed);
    out
}
