//! Acceptance criteria. Each test prints one `ACCEPTANCE` line with its
//! measurements, then asserts. Tests hold a shared lock so that timed criteria
//! do not compete for cores.

use std::io::Write as _;
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use lowrank_markov::admm::{nuclear_estimate, prox_dual_xi, sgs_admm_solve, AdmmOptions, NuclearProblem};
use lowrank_markov::chain::{
    count_transitions, kl_converter_constant, row_kl, simulate, spectral_gap, stationary_distribution, InitialState,
    TransitionCounts, TransitionMatrix,
};
use lowrank_markov::dc::prox_z_dc;
use lowrank_markov::eval::aggregate::{aggregate_states, DEFAULT_RESTARTS};
use lowrank_markov::eval::benchmark::{
    benchmark_run, fit, sample_size, summarize, BenchmarkConfig, Estimator, LambdaRule, SolverOptions, SummaryRow,
};
use lowrank_markov::eval::cone::cone_diagnostic;
use lowrank_markov::ipdc::StopReason;
use lowrank_markov::matops::numerical_rank;
use lowrank_markov::oracles::{reference_nuclear, ReferenceOptions};
use lowrank_markov::rng::seeded_rng;
use lowrank_markov::synth::{bounded_distribution, generate, SynthConfig};
use nalgebra::DMatrix;
use rand::Rng;
use tempfile::TempDir;

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, name: &str, pass: bool, details: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "ACCEPTANCE {id:>2} {name}: {status} ({details})");
}

fn counts_for(truth: &TransitionMatrix, n: usize, seed: u64) -> TransitionCounts {
    count_transitions(&simulate(truth, n, seed, InitialState::Stationary).unwrap())
}

fn scaled(c: f64) -> SolverOptions {
    SolverOptions { lambda: LambdaRule::Scaled(c), ..Default::default() }
}

// 1. Closed-form proximal maps.

/// `f(a) - f(b)` for `f(z) = -s w ln z + W z + ((1 + alpha)/2) z^2 - s R z`,
/// with the logarithm of the ratio taken through `ln_1p`.
fn prox_delta(a: f64, b: f64, sw: f64, wl: f64, alpha: f64, t: f64) -> f64 {
    let log_term = if sw == 0.0 { 0.0 } else { -sw * ((a - b) / b).ln_1p() };
    log_term + (a - b) * (wl + 0.5 * (1.0 + alpha) * (a + b) - t)
}

/// Golden-section minimizer of the scalar prox objective on `[0, hi]`.
fn golden(sw: f64, wl: f64, alpha: f64, t: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, (t - wl).abs() + sw.sqrt() + 1.0);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    for _ in 0..400 {
        if hi - lo <= 1e-13 * (1.0 + hi) {
            break;
        }
        if prox_delta(x1, x2, sw, wl, alpha, t) <= 0.0 {
            hi = x2;
            x2 = x1;
            x1 = hi - inv_phi * (hi - lo);
        } else {
            lo = x1;
            x1 = x2;
            x2 = lo + inv_phi * (hi - lo);
        }
    }
    0.5 * (lo + hi)
}

/// Stationarity violation of `z` for the scalar prox; off the support this is
/// the complementarity form of the sign-constrained condition.
fn foc(z: f64, sw: f64, wl: f64, alpha: f64, t: f64) -> f64 {
    let smooth = wl + (1.0 + alpha) * z - t;
    if sw > 0.0 {
        (smooth - sw / z).abs()
    } else if z > 0.0 {
        smooth.abs()
    } else {
        (-smooth).max(0.0)
    }
}

#[test]
fn a01_prox_correctness() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = seeded_rng(101, 0);
    let (mut tuples, mut worst_foc, mut worst_gap) = (0usize, 0.0f64, 0.0f64);
    let p = 4;
    while tuples < 1000 {
        let rows: Vec<Vec<u64>> = (0..p)
            .map(|_| (0..p).map(|_| if rng.random::<f64>() < 0.3 { 0 } else { rng.random_range(1..50) }).collect())
            .collect();
        let counts = TransitionCounts::from_rows(&rows).unwrap();
        let freq = counts.frequencies();
        let r = DMatrix::from_fn(p, p, |_, _| rng.random_range(-3.0..3.0));
        let w = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        let sigma = rng.random_range(0.05..20.0);
        let alpha = rng.random_range(0.0..1.0);
        let prob = NuclearProblem::new(&counts, 1.0).unwrap();
        let (_, z_xi) = prox_dual_xi(&r, sigma, &prob);
        let z_dc = prox_z_dc(&r, sigma, &w, alpha, &counts);
        for i in 0..p {
            for j in 0..p {
                let (t, sw) = (sigma * r[(i, j)], sigma * freq[(i, j)]);
                for (z, wl, a) in [(z_xi[(i, j)], 0.0, 0.0), (z_dc[(i, j)], w[(i, j)], alpha)] {
                    worst_foc = worst_foc.max(foc(z, sw, wl, a, t));
                    worst_gap = worst_gap.max((z - golden(sw, wl, a, t)).abs());
                }
                tuples += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_foc <= 1e-9 && worst_gap <= 1e-7 && elapsed < Duration::from_secs(5);
    report(
        1,
        "prox correctness",
        pass,
        &format!(
            "{tuples} tuples, max FOC {worst_foc:.2e}, max oracle gap {worst_gap:.2e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

// 2. ADMM convergence and agreement with the reference solver.

#[test]
fn a02_admm_convergence() {
    let _g = serial();
    let start = Instant::now();
    let opts = AdmmOptions::default();
    let (mut converged, mut worst_kkt, mut max_iters) = (0usize, 0.0f64, 0usize);
    for seed in 0..20u64 {
        let (p, r) = if seed < 10 { (10, 2) } else { (30, 3) };
        let truth = generate(&SynthConfig::balanced(p, r, seed)).unwrap();
        let c = counts_for(&truth, sample_size(10.0, r, p), seed);
        let lambda = lowrank_markov::admm::lambda_scale(p, c.total());
        match sgs_admm_solve(&NuclearProblem::new(&c, lambda).unwrap(), &opts) {
            Ok(sol) if sol.report.kkt <= 1e-6 && sol.report.iters <= 20_000 => {
                converged += 1;
                worst_kkt = worst_kkt.max(sol.report.kkt);
                max_iters = max_iters.max(sol.report.iters);
            }
            Ok(sol) => worst_kkt = worst_kkt.max(sol.report.kkt),
            Err(_) => worst_kkt = f64::INFINITY,
        }
    }
    let tight = AdmmOptions { tol: 1e-10, ..Default::default() };
    let mut worst_diff = 0.0f64;
    for (p, seed, lambda) in [(2, 1, 0.05), (3, 2, 0.02), (3, 7, 0.1), (4, 3, 0.05), (4, 5, 0.2)] {
        let truth = generate(&SynthConfig::balanced(p, 1, seed)).unwrap();
        let prob = NuclearProblem::new(&counts_for(&truth, 60, seed), lambda).unwrap();
        let diff = match (sgs_admm_solve(&prob, &tight), reference_nuclear(&prob, &ReferenceOptions::default())) {
            (Ok(sol), Ok(reference)) => (&sol.x - &reference).norm(),
            _ => f64::INFINITY,
        };
        worst_diff = worst_diff.max(diff);
    }
    let elapsed = start.elapsed();
    let pass = converged == 20 && worst_diff <= 1e-3 && elapsed < Duration::from_secs(120);
    report(
        2,
        "ADMM convergence",
        pass,
        &format!(
            "{converged}/20 converged, max rel KKT {worst_kkt:.2e}, max iters {max_iters}, reference gap {worst_diff:.2e}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

// 3. Descent of the proximal DC iterates.

#[test]
fn a03_dc_descent() {
    let _g = serial();
    let (p, r) = (20, 2);
    let (mut steps, mut violations, mut worst_slack, mut stalls, mut rank_ok) =
        (0usize, 0usize, 0.0f64, 0usize, 0usize);
    let mut ranks = Vec::new();
    for seed in 0..10u64 {
        let truth = generate(&SynthConfig::balanced(p, r, seed)).unwrap();
        let c = counts_for(&truth, sample_size(10.0, r, p), seed);
        let est = fit(Estimator::Rank, &c, None, r, &scaled(1.0)).unwrap();
        let res = est.rank.expect("rank fit");
        for rec in &res.trace.records {
            steps += 1;
            let slack = rec.required_decrease - rec.decrease;
            worst_slack = worst_slack.max(slack);
            if slack > 1e-6 {
                violations += 1;
            }
        }
        stalls += res.trace.levels.iter().filter(|l| l.stop == StopReason::DescentStall).count();
        let rank = numerical_rank(est.matrix.matrix(), 1e-6).max(res.rank);
        ranks.push(rank);
        if rank <= r {
            rank_ok += 1;
        }
    }
    let pass = violations == 0 && rank_ok == 10;
    report(
        3,
        "DC descent",
        pass,
        &format!(
            "{steps} steps, {violations} violations, max shortfall {worst_slack:.2e}, stalled levels {stalls}, final ranks {ranks:?}"
        ),
    );
    assert!(pass);
}

// 4 and 5. Balanced sweep.

struct Sweep {
    summary: Vec<SummaryRow>,
    failures: usize,
    elapsed: Duration,
}

fn sweep() -> &'static Sweep {
    static SWEEP: OnceLock<Sweep> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let cfg = BenchmarkConfig {
            p: 50,
            r: 3,
            k_grid: vec![10.0, 20.0, 40.0, 80.0],
            rolls: 10,
            seed: 0,
            estimators: Estimator::ALL.to_vec(),
            imbalance: None,
            solver: SolverOptions::default(),
            timing: false,
        };
        let start = Instant::now();
        let rows = benchmark_run(&cfg).unwrap();
        let failures = rows.iter().filter(|r| r.failed()).count();
        Sweep { summary: summarize(&rows), failures, elapsed: start.elapsed() }
    })
}

fn series(summary: &[SummaryRow], e: Estimator) -> Vec<(usize, f64)> {
    summary.iter().filter(|s| s.estimator == e).map(|s| (s.n, s.eta_f.0)).collect()
}

fn fmt_series(v: &[(usize, f64)]) -> String {
    v.iter().map(|(_, m)| format!("{m:.4}")).collect::<Vec<_>>().join(" ")
}

#[test]
fn a04_balanced_sweep() {
    let _g = serial();
    let s = sweep();
    let nuc = series(&s.summary, Estimator::Nuclear);
    let rank = series(&s.summary, Estimator::Rank);
    let spectral = series(&s.summary, Estimator::Spectral);
    let emp = series(&s.summary, Estimator::Empirical);
    let monotone = |v: &[(usize, f64)]| v.windows(2).all(|w| w[1].1 < w[0].1);
    let a = monotone(&nuc) && monotone(&rank) && monotone(&spectral);
    let b = nuc.iter().zip(&rank).all(|(n, r)| r.1 <= 1.05 * n.1);
    let c = emp.last().unwrap().1 >= 2.0 * rank.last().unwrap().1;
    let timely = s.elapsed < Duration::from_secs(15 * 60);
    let pass = a && b && c && timely && s.failures == 0;
    report(
        4,
        "balanced sweep",
        pass,
        &format!(
            "monotone {a}, rank<=1.05 nuclear {b}, empirical>=2 rank at k=80 {c}; eta_F nuclear [{}] rank [{}] spectral [{}] empirical [{}]; {} failed fits, {:.0}s",
            fmt_series(&nuc),
            fmt_series(&rank),
            fmt_series(&spectral),
            fmt_series(&emp),
            s.failures,
            s.elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn a05_rate() {
    let _g = serial();
    let nuc = series(&sweep().summary, Estimator::Nuclear);
    let pts: Vec<(f64, f64)> = nuc.iter().map(|&(n, m)| ((n as f64).ln(), m.ln())).collect();
    let k = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / k, pts.iter().map(|p| p.1).sum::<f64>() / k);
    let slope =
        pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let pass = (-1.4..=-0.6).contains(&slope);
    report(5, "rate", pass, &format!("log-log slope of nuclear eta_F vs n: {slope:.3}"));
    assert!(pass);
}

// 6. Restricted cone.

#[test]
fn a06_cone_diagnostic() {
    let _g = serial();
    let (p, r) = (20, 2);
    let mut held = 0;
    let mut ratios = Vec::new();
    for seed in 0..10u64 {
        let truth = generate(&SynthConfig::balanced(p, r, seed)).unwrap();
        let c = counts_for(&truth, sample_size(20.0, r, p), seed);
        let grad_norm = cone_diagnostic(&truth, truth.matrix(), &c, 1.0, r).unwrap().grad_norm;
        let lambda = 2.5 * grad_norm;
        let est = nuclear_estimate(&c, lambda, &AdmmOptions::default()).unwrap();
        let rep = cone_diagnostic(&truth, est.completion.matrix.matrix(), &c, lambda, r).unwrap();
        if rep.triggered && rep.holds {
            held += 1;
        }
        ratios.push(format!("{:.1e}", rep.lhs / rep.rhs));
    }
    let pass = held == 10;
    report(6, "cone diagnostic", pass, &format!("{held}/10 hold with the trigger met; lhs/rhs [{}]", ratios.join(" ")));
    assert!(pass);
}

// 7. KL to squared-distance converter.

#[test]
fn a07_kl_converter() {
    let _g = serial();
    let (p, alpha, beta) = (50, 0.5, 2.0);
    let k = kl_converter_constant(p, alpha, beta);
    let mut rng = seeded_rng(7, 0);
    let (mut violations, mut min_ratio) = (0, f64::INFINITY);
    for _ in 0..1000 {
        let u = bounded_distribution(p, alpha, beta, &mut rng).unwrap();
        let v = bounded_distribution(p, alpha, beta, &mut rng).unwrap();
        let d2: f64 = u.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum();
        let kl = row_kl(&u, &v).unwrap();
        if kl < k * d2 {
            violations += 1;
        }
        min_ratio = min_ratio.min(kl / (k * d2));
    }
    let pass = violations == 0;
    report(7, "KL converter", pass, &format!("{violations} violations in 1000 pairs, min KL/bound {min_ratio:.3}"));
    assert!(pass);
}

// 8. Spectral gaps of two-state chains.

#[test]
fn a08_spectral_gaps() {
    let _g = serial();
    let cases = [
        ("uniform", [[0.5, 0.5], [0.5, 0.5]], 1.0),
        ("asymmetric", [[0.9, 0.1], [0.2, 0.8]], 0.3),
        ("permutation", [[0.0, 1.0], [1.0, 0.0]], 2.0),
    ];
    let mut errs = Vec::new();
    for (name, rows, want) in cases {
        let m = TransitionMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        let pi = stationary_distribution(&m, 1e-14, 100_000).unwrap();
        let gap = spectral_gap(&m, &pi).unwrap().gap;
        errs.push((name, (gap - want).abs()));
    }
    let pass = errs.iter().all(|e| e.1 <= 1e-10);
    let details: Vec<String> = errs.iter().map(|(n, e)| format!("{n} error {e:.1e}")).collect();
    report(8, "spectral gaps", pass, &details.join(", "));
    assert!(pass);
}

// 9. Imbalanced regime.

#[test]
fn a09_imbalanced() {
    let _g = serial();
    let start = Instant::now();
    let mut ordered = 0;
    let mut cells = Vec::new();
    for batch in 0..10u64 {
        let cfg = BenchmarkConfig {
            p: 50,
            r: 3,
            k_grid: vec![10.0, 40.0],
            rolls: 10,
            seed: 1000 + batch,
            estimators: vec![Estimator::Empirical, Estimator::Nuclear, Estimator::Rank],
            imbalance: Some((0.5, 0.5)),
            solver: SolverOptions::default(),
            timing: false,
        };
        let summary = summarize(&benchmark_run(&cfg).unwrap());
        let at = |e: Estimator| summary.iter().find(|s| s.k == 40.0 && s.estimator == e).unwrap().eta_f.0;
        let (emp, nuc, rank) = (at(Estimator::Empirical), at(Estimator::Nuclear), at(Estimator::Rank));
        if rank <= nuc && nuc <= emp {
            ordered += 1;
        }
        cells.push(format!("{rank:.4}/{nuc:.4}/{emp:.4}"));
    }
    let pass = ordered >= 8;
    report(
        9,
        "imbalanced regime",
        pass,
        &format!(
            "{ordered}/10 batches with rank <= nuclear <= empirical at k=40 [{}], {:.0}s",
            cells.join(" "),
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

// 10. Reproducible benchmark output.

#[test]
fn a10_determinism() {
    let _g = serial();
    let tmp = TempDir::new().unwrap();
    let run = |name: &str, threads: &str| {
        let dir = tmp.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_lrmc"))
            .args(["benchmark", "--p", "20", "--r", "2", "--k-grid", "5,10", "--rolls", "3", "--seed", "11"])
            .args(["--estimators", "empirical,nuclear,rank,spectral", "--threads", threads, "--out"])
            .arg(&dir)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(dir.join("benchmark.csv")).unwrap()
    };
    let (a, b) = (run("a", "1"), run("b", "2"));
    let pass = a == b;
    report(10, "determinism", pass, &format!("benchmark.csv {} bytes, identical {pass}", a.len()));
    assert!(pass);
}

// 11. State aggregation.

fn two_blocks(half: usize, eps: f64) -> TransitionMatrix {
    let m = DMatrix::from_fn(2 * half, 2 * half, |i, j| {
        if (i < half) == (j < half) {
            (1.0 - eps) / half as f64
        } else {
            eps / half as f64
        }
    });
    TransitionMatrix::new(m).unwrap()
}

#[test]
fn a11_state_aggregation() {
    let _g = serial();
    let (p, r) = (20, 2);
    let truth = two_blocks(10, 0.02);
    let mut misassigned = Vec::new();
    for seed in 0..10u64 {
        let c = counts_for(&truth, sample_size(20.0, r, p), seed);
        let est = fit(Estimator::Rank, &c, None, r, &scaled(1.0)).unwrap();
        let labels = aggregate_states(&est.matrix, r, 2, seed, DEFAULT_RESTARTS).unwrap().labels;
        let wrong = (0..p).filter(|&i| labels[i] != usize::from(i >= 10)).count();
        misassigned.push(wrong.min(p - wrong));
    }
    let perfect = misassigned.iter().filter(|&&m| m == 0).count();
    let pass = perfect == 10;
    report(11, "state aggregation", pass, &format!("{perfect}/10 seeds exact, misassigned per seed {misassigned:?}"));
    assert!(pass);
}
