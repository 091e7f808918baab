//! Acceptance criteria 1 to 8. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line; exits nonzero if any fails.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::Rng;

use lassodof::designs::{make_design, make_signal, observe, stream_rng};
use lassodof::dof::{divergence_fd, dof_estimate, in_g_lambda, local_affinity_check, stable_radius};
use lassodof::experiments::{log_space, run, with_jobs, ExperimentRecord};
use lassodof::numerics::{kernel_vector, numerical_rank, select_columns, DEFAULT_RANK_TOL};
use lassodof::solver::{kkt_check, solve, solve_from};
use lassodof::support::{brute_force_min_support, reduce};
use lassodof::{
    DesignSpec, ExperimentConfig, HyperplaneQuery, LambdaGrid, Matrix, NoiseSpec, Problem, SignalSpec, SolverOptions,
    Vector, SCHEMA_VERSION,
};

type Outcome = Result<String, String>;

fn counterexample(y: [f64; 2], lambda: f64) -> Problem {
    let a = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
    Problem::new(a, Vector::from_row_slice(&y), lambda).unwrap()
}

fn strict() -> SolverOptions {
    SolverOptions { kkt_tolerance: 1e-8, ..SolverOptions::default() }
}

fn gaussian_problem(n: usize, p: usize, k: usize, lambda: f64, seed: u64, stream: u64) -> Problem {
    let a = make_design(&DesignSpec::Gaussian { n, p, seed }).unwrap();
    let x0 = make_signal(&SignalSpec { p, sparsity: k }, seed).unwrap();
    let y = observe(&a, &x0, &NoiseSpec { sigma: 1.0, seed, stream }).unwrap();
    Problem::new(a, y, lambda).unwrap()
}

/// Small design with duplicated, negated, rescaled and spanned columns.
fn collinear_problem(seed: u64, attempt: u64) -> Problem {
    let mut rng = stream_rng(seed, 1000 + attempt);
    let n = rng.random_range(3..=8);
    let p = rng.random_range(4..=12);
    let mut a = make_design(&DesignSpec::Gaussian { n, p, seed: seed * 31 + attempt }).unwrap();
    let engineered = rng.random_range(1..=p / 2);
    for _ in 0..engineered {
        let target = rng.random_range(0..p);
        let i = rng.random_range(0..p);
        let j = rng.random_range(0..p);
        let column = match rng.random_range(0..4) {
            0 => a.column(i).into_owned(),
            1 => -a.column(i),
            2 => a.column(i) * rng.random_range(0.5..2.0),
            _ => a.column(i) + a.column(j),
        };
        a.set_column(target, &column);
    }
    let sparsity = rng.random_range(1..=p.min(4));
    let x0 = make_signal(&SignalSpec { p, sparsity }, seed).unwrap();
    let y = observe(&a, &x0, &NoiseSpec { sigma: 0.3, seed, stream: attempt }).unwrap();
    let fraction = rng.random_range(0.05..0.7);
    let lambda = fraction * (a.transpose() * &y).amax();
    Problem::new(a, y, lambda.max(1e-3)).unwrap()
}

fn criterion_1() -> Outcome {
    let opts = SolverOptions::default();
    let cases = [([1.0, 0.0], [0.7, 0.0], 1), ([1.0, 0.2], [0.5, 0.2], 2)];
    for (y, expected, dof) in cases {
        let problem = counterexample(y, 0.3);
        let sol = solve(&problem, &opts).map_err(|e| e.to_string())?;
        let err = (&sol.x_hat - Vector::from_row_slice(&expected)).amax();
        if err > 1e-8 {
            return Err(format!("y = {y:?}: x = {:?}, error {err:.2e}", sol.x_hat.as_slice()));
        }
        let reduced = reduce(&problem, &sol, &opts).map_err(|e| e.to_string())?;
        if dof_estimate(&reduced) != dof {
            return Err(format!("y = {y:?}: dof {} != {dof}", dof_estimate(&reduced)));
        }
    }
    let on = in_g_lambda(&counterexample([1.0, 0.0], 0.3), None).map_err(|e| e.to_string())?;
    let witness = HyperplaneQuery { support: vec![0], j: 1, signs: vec![1] };
    if on.in_set || on.witness != Some(witness) {
        return Err(format!("e1: in_set = {}, witness = {:?}", on.in_set, on.witness));
    }
    let off = in_g_lambda(&counterexample([1.0, 0.2], 0.3), None).map_err(|e| e.to_string())?;
    if !off.in_set {
        return Err(format!("z1 flagged: {:?}", off.witness));
    }
    Ok("x = (0.7, 0) and (0.5, 0.2); dof 1 and 2; e1 on H({1}, 2, +1), z1 in G".into())
}

fn criterion_2() -> Outcome {
    let opts = SolverOptions::default();
    let mut agree = 0;
    let mut resampled = 0;
    let mut worst: f64 = 0.0;
    let mut misses = Vec::new();
    for seed in 0..50u64 {
        let mut fd =
            divergence_fd(&gaussian_problem(20, 40, 5, 1.0, seed, 0), None, &opts).map_err(|e| e.to_string())?;
        if fd.support_changes > 0 {
            resampled += 1;
            fd = divergence_fd(&gaussian_problem(20, 40, 5, 1.0, seed, 1), None, &opts).map_err(|e| e.to_string())?;
        }
        let gap = (fd.divergence - fd.dof as f64).abs();
        if gap <= 1e-3 {
            agree += 1;
            worst = worst.max(gap);
        } else {
            misses.push(format!("seed {seed}: {:.6} vs {}", fd.divergence, fd.dof));
        }
    }
    let detail = format!("{agree}/50 within 1e-3 (max gap {worst:.1e}, {resampled} resampled)");
    if agree >= 49 {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", misses.join("; ")))
    }
}

fn criterion_3() -> Outcome {
    let opts = SolverOptions::default();
    let mut resampled = 0;
    let mut reductions = 0;
    let mut rank_deficient = 0;
    for seed in 0..200u64 {
        let mut attempt = 0;
        let problem = loop {
            let candidate = collinear_problem(seed, attempt);
            if in_g_lambda(&candidate, None).map_err(|e| e.to_string())?.in_set {
                break candidate;
            }
            resampled += 1;
            attempt += 1;
            if attempt > 20 {
                return Err(format!("seed {seed}: no draw in G_lambda"));
            }
        };
        if numerical_rank(problem.a(), DEFAULT_RANK_TOL).rank < problem.p() {
            rank_deficient += 1;
        }
        let sol = solve(&problem, &opts).map_err(|e| format!("seed {seed}: {e}"))?;
        let reduced = reduce(&problem, &sol, &opts).map_err(|e| format!("seed {seed}: {e}"))?;
        reductions += reduced.reduction_steps;
        let oracle = brute_force_min_support(&problem, &sol).map_err(|e| format!("seed {seed}: {e}"))?;
        if reduced.support.len() != oracle {
            return Err(format!("seed {seed}: |I*| = {} but minimum is {oracle}", reduced.support.len()));
        }
    }
    Ok(format!(
        "200/200 exact ({rank_deficient} rank-deficient designs, {reductions} reduction steps, {resampled} resampled)"
    ))
}

fn criterion_4() -> Outcome {
    const EPSILON: f64 = 1e-3;
    let opts = SolverOptions::default();
    let mut tested = 0;
    let mut skipped = 0;
    let mut worst: f64 = 0.0;
    let mut seed = 0u64;
    while tested < 20 {
        if seed > 400 {
            return Err(format!("only {tested} generic instances in 400 draws"));
        }
        let problem = gaussian_problem(20, 40, 5, 1.0, seed, 0);
        seed += 1;
        let sol = solve(&problem, &opts).map_err(|e| e.to_string())?;
        let reduced = reduce(&problem, &sol, &opts).map_err(|e| e.to_string())?;
        if stable_radius(&problem, &reduced) <= EPSILON {
            skipped += 1;
            continue;
        }
        let deviation =
            local_affinity_check(&problem, &reduced, EPSILON, 20, seed, &opts).map_err(|e| e.to_string())?;
        worst = worst.max(deviation);
        tested += 1;
    }
    let detail = format!("max deviation {worst:.2e} on 20 instances ({skipped} non-generic skipped)");
    if worst < 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gaussian_experiment() -> Result<ExperimentRecord, String> {
    let config = ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        design: DesignSpec::Gaussian { n: 64, p: 256, seed: 11 },
        signal: SignalSpec { p: 256, sparsity: 7 },
        noise: NoiseSpec::new(1.0, 0),
        lambdas: LambdaGrid::OverSigma { values: log_space(1e-2, 1e1, 10) },
        replications: 100,
        base_seed: 7,
        sweep: None,
    };
    run(&config, &SolverOptions::accelerated()).map_err(|e| e.to_string())
}

fn criterion_5(record: &ExperimentRecord) -> Outcome {
    let k = record.replications as f64;
    let mut worst_ratio: f64 = 0.0;
    for agg in &record.aggregates {
        let gap = (agg.mean_sure - agg.mean_se).abs();
        let allowed = 4.0 * agg.gap_std / k.sqrt();
        worst_ratio = worst_ratio.max(gap / allowed);
        if gap > allowed || agg.failures > 0 {
            return Err(format!(
                "lambda {:.3e}: |mean SURE - mean SE| = {gap:.3e} > {allowed:.3e} ({} failures)",
                agg.lambda, agg.failures
            ));
        }
    }
    Ok(format!("10/10 lambdas unbiased; worst gap is {worst_ratio:.2} of the 4-sigma band"))
}

fn criterion_6(record: &ExperimentRecord) -> Outcome {
    let k = record.replications as f64;
    let mut worst_ratio: f64 = 0.0;
    let mut worst_bound: f64 = 0.0;
    for agg in &record.aggregates {
        let gap = (agg.r_t - agg.r_hat_t).abs();
        let allowed = 4.0 * agg.sq_gap_std / k.sqrt();
        worst_ratio = worst_ratio.max(gap / allowed);
        worst_bound = worst_bound.max(agg.r_hat_t / agg.bound);
        if gap > allowed {
            return Err(format!("lambda {:.3e}: |R_T - R_hat_T| = {gap:.3e} > {allowed:.3e}", agg.lambda));
        }
        if agg.r_hat_t > 1.25 * agg.bound {
            return Err(format!("lambda {:.3e}: R_hat_T = {:.3e} > 1.25 * {:.3e}", agg.lambda, agg.r_hat_t, agg.bound));
        }
    }
    Ok(format!("worst |R_T - R_hat_T| is {worst_ratio:.2} of the band; max R_hat_T / bound = {worst_bound:.2}"))
}

fn criterion_7() -> Outcome {
    let ns = [32usize, 64, 128, 256, 512];
    let mut points = Vec::new();
    for &n in &ns {
        let p = 4 * n;
        let config = ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            design: DesignSpec::PartialFourier { n, p, seed: 3 },
            signal: SignalSpec::with_fraction(p, 0.1),
            noise: NoiseSpec::new(1.0, 0),
            lambdas: LambdaGrid::OverSigma { values: vec![1.0] },
            replications: 50,
            base_seed: 5,
            sweep: None,
        };
        let record = run(&config, &SolverOptions::accelerated()).map_err(|e| format!("n = {n}: {e}"))?;
        points.push(((n as f64).ln(), record.aggregates[0].r_t.ln()));
    }
    let m = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / m, sy / m);
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let values: Vec<String> = points.iter().map(|(_, y)| format!("{:.2e}", y.exp())).collect();
    let detail = format!("slope {slope:.3} (R_T = {})", values.join(", "));
    if (-1.4..=-0.6).contains(&slope) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn property_problems() -> Vec<Problem> {
    let mut problems = Vec::new();
    for seed in 0..40u64 {
        problems.push(collinear_problem(seed, 0));
        problems.push(gaussian_problem(15, 30, 4, 0.5 + 0.05 * seed as f64, seed, 0));
    }
    for seed in 0..10u64 {
        let a = make_design(&DesignSpec::Convolution { n: 24, p: 24, blur_width: 2.0 }).unwrap();
        let x0 = make_signal(&SignalSpec { p: 24, sparsity: 3 }, seed).unwrap();
        let y = observe(&a, &x0, &NoiseSpec { sigma: 0.1, seed, stream: 0 }).unwrap();
        problems.push(Problem::new(a, y, 0.05).unwrap());
        let a = make_design(&DesignSpec::PartialFourier { n: 16, p: 64, seed }).unwrap();
        let x0 = make_signal(&SignalSpec { p: 64, sparsity: 4 }, seed).unwrap();
        let y = observe(&a, &x0, &NoiseSpec { sigma: 0.5, seed, stream: 0 }).unwrap();
        problems.push(Problem::new(a, y, 0.5).unwrap());
    }
    problems
}

fn criterion_8() -> Outcome {
    let problems = property_problems();
    let mut translated = 0;
    for (i, problem) in problems.iter().enumerate() {
        for opts in [SolverOptions::default(), SolverOptions::accelerated()] {
            let sol = solve(problem, &opts).map_err(|e| format!("instance {i}: {e}"))?;
            let report = kkt_check(problem, &sol.x_hat, &strict());
            if !report.is_optimal {
                return Err(format!("instance {i}: KKT residual {:.2e}", report.residual()));
            }

            let reduced = reduce(problem, &sol, &opts).map_err(|e| format!("instance {i}: {e}"))?;
            let mu = problem.a() * &sol.x_hat;
            let response_gap = (reduced.response(problem) - &mu).amax();
            let l1_gap = (reduced.x_star.lp_norm(1) - sol.x_hat.lp_norm(1)).abs();
            if response_gap > 1e-9 || l1_gap > 1e-9 {
                return Err(format!("instance {i}: reduce moved response by {response_gap:.1e}, l1 by {l1_gap:.1e}"));
            }

            // Other optima: a kernel translate of the reduced solution plus
            // a solve from a perturbed start; their responses must coincide.
            let mut optima = vec![reduced.x_star.clone()];
            let cols = select_columns(problem.a(), &sol.support);
            if !sol.support.is_empty() && numerical_rank(&cols, DEFAULT_RANK_TOL).rank < sol.support.len() {
                let h = kernel_vector(&cols).map_err(|e| e.to_string())?;
                let room = sol
                    .support
                    .iter()
                    .zip(h.iter())
                    .filter(|(_, hk)| hk.abs() > 1e-12)
                    .map(|(&j, hk)| sol.x_hat[j].abs() / hk.abs())
                    .fold(f64::INFINITY, f64::min);
                let mut x = sol.x_hat.clone();
                for (k, &j) in sol.support.iter().enumerate() {
                    x[j] += 0.5 * room * h[k];
                }
                if !kkt_check(problem, &x, &strict()).is_optimal {
                    return Err(format!("instance {i}: kernel translate is not optimal"));
                }
                optima.push(x);
                translated += 1;
            }
            let start = Vector::from_fn(problem.p(), |j, _| ((j * 7919 + i) % 13) as f64 / 13.0 - 0.5);
            optima.push(solve_from(problem, &opts, Some(&start)).map_err(|e| e.to_string())?.x_hat);
            for x in &optima {
                let gap = (problem.a() * x - &mu).amax();
                if gap > 1e-7 {
                    return Err(format!("instance {i}: responses of two optima differ by {gap:.1e}"));
                }
            }
        }
    }

    let config = ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        design: DesignSpec::Gaussian { n: 24, p: 48, seed: 2 },
        signal: SignalSpec { p: 48, sparsity: 4 },
        noise: NoiseSpec::new(1.0, 0),
        lambdas: LambdaGrid::OverSigma { values: vec![0.3, 1.0, 3.0] },
        replications: 24,
        base_seed: 99,
        sweep: None,
    };
    let opts = SolverOptions::accelerated();
    let one = with_jobs(1, || run(&config, &opts)).map_err(|e| e.to_string())?;
    let four = with_jobs(4, || run(&config, &opts)).map_err(|e| e.to_string())?;
    if serde_json::to_string(&one).unwrap() != serde_json::to_string(&four).unwrap() {
        return Err("experiment records differ between 1 and 4 threads".into());
    }
    Ok(format!(
        "{} solves KKT-certified at 1e-8; {translated} kernel translates; reduce and response checks hold; jobs 1 and 4 identical",
        2 * problems.len()
    ))
}

struct Criterion {
    id: u32,
    title: &'static str,
    limit: Duration,
}

fn report(criterion: &Criterion, outcome: std::thread::Result<Outcome>, elapsed: Duration) -> bool {
    let outcome = match outcome {
        Ok(o) => o,
        Err(panic) => Err(panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    let outcome = match outcome {
        Ok(detail) if elapsed > criterion.limit => {
            Err(format!("{detail}; took {:.1?}, limit {:.0?}", elapsed, criterion.limit))
        }
        other => other,
    };
    let (status, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    let mut stdout = std::io::stdout();
    let _ = writeln!(stdout, "criterion {} [{status}] {} ({:.2?}): {detail}", criterion.id, criterion.title, elapsed);
    outcome.is_ok()
}

fn timed<T>(f: impl FnOnce() -> T) -> (std::thread::Result<T>, Duration) {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    (result, start.elapsed())
}

fn main() {
    let minutes = |m: u64| Duration::from_secs(60 * m);
    let simple: [(Criterion, fn() -> Outcome); 4] = [
        (Criterion { id: 1, title: "counterexample goldens", limit: Duration::from_secs(1) }, criterion_1),
        (Criterion { id: 2, title: "divergence equals dof estimate", limit: minutes(5) }, criterion_2),
        (Criterion { id: 3, title: "minimal support against exhaustive search", limit: minutes(2) }, criterion_3),
        (Criterion { id: 4, title: "local affinity of the response", limit: minutes(2) }, criterion_4),
    ];
    let mut all_passed = true;
    for (criterion, f) in simple {
        let (outcome, elapsed) = timed(f);
        all_passed &= report(&criterion, outcome, elapsed);
    }

    let (record, elapsed) = timed(gaussian_experiment);
    let c5 = Criterion { id: 5, title: "SURE unbiasedness", limit: minutes(10) };
    let c6 = Criterion { id: 6, title: "reliability identity and bound", limit: minutes(10) };
    match record {
        Ok(Ok(record)) => {
            let (o5, e5) = timed(|| criterion_5(&record));
            all_passed &= report(&c5, o5, elapsed + e5);
            let (o6, e6) = timed(|| criterion_6(&record));
            all_passed &= report(&c6, o6, elapsed + e6);
        }
        Ok(Err(e)) => {
            all_passed &= report(&c5, Ok(Err(e.clone())), elapsed);
            all_passed &= report(&c6, Ok(Err(e)), elapsed);
        }
        Err(_) => {
            all_passed &= report(&c5, Ok(Err("experiment panicked".into())), elapsed);
            all_passed &= report(&c6, Ok(Err("experiment panicked".into())), elapsed);
        }
    }

    let rest: [(Criterion, fn() -> Outcome); 2] = [
        (Criterion { id: 7, title: "reliability decays like 1/n", limit: minutes(15) }, criterion_7),
        (Criterion { id: 8, title: "property suites", limit: minutes(10) }, criterion_8),
    ];
    for (criterion, f) in rest {
        let (outcome, elapsed) = timed(f);
        all_passed &= report(&criterion, outcome, elapsed);
    }

    if !all_passed {
        println!("acceptance: FAILED");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
