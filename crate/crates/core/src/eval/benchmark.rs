//! Synthetic benchmark: draw a low-rank chain per roll, simulate trajectories
//! of length `n = round(k r p ln p)` for every `k`, fit each estimator and
//! score it against the truth.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::admm::{
    lambda_scale, nuclear_estimate, nuclear_estimate_cv, AdmmOptions, CvResult, NuclearEstimate, DEFAULT_CONSTANTS,
};
use crate::chain::{
    count_transitions, empirical_estimator, simulate, stationary_distribution, InitialState, Trajectory,
    TransitionCounts, TransitionMatrix,
};
use crate::dc::{rank_estimate, PdcOptions, PdcResult};
use crate::error::{invalid, Result};
use crate::eval::metrics::{metrics, MetricTriple};
use crate::rng::{seeded_rng, streams};
use crate::spectral::spectral_estimator;
use crate::synth::{generate, SynthConfig};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimator {
    Empirical,
    Nuclear,
    Rank,
    Spectral,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [Estimator::Empirical, Estimator::Nuclear, Estimator::Rank, Estimator::Spectral];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Empirical => "empirical",
            Estimator::Nuclear => "nuclear",
            Estimator::Rank => "rank",
            Estimator::Spectral => "spectral",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| invalid(format!("unknown estimator `{s}` (expected empirical, nuclear, rank or spectral)")))
    }
}

/// How the nuclear-norm weight is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaRule {
    Fixed(f64),
    /// `constant * sqrt(p ln p / n)`.
    Scaled(f64),
    CrossValidated {
        constants: Vec<f64>,
        folds: usize,
    },
}

impl Default for LambdaRule {
    fn default() -> Self {
        LambdaRule::CrossValidated { constants: DEFAULT_CONSTANTS.to_vec(), folds: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverOptions {
    pub lambda: LambdaRule,
    pub admm: AdmmOptions,
    pub pdc: PdcOptions,
}

/// A fitted estimate with the solver output behind it.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub estimator: Estimator,
    pub matrix: TransitionMatrix,
    pub nuclear: Option<NuclearEstimate>,
    pub cv: Option<CvResult>,
    pub rank: Option<PdcResult>,
}

/// Nuclear-norm estimate under `rule`. Cross-validation needs the trajectory.
pub fn fit_nuclear(
    counts: &TransitionCounts,
    traj: Option<&Trajectory>,
    opts: &SolverOptions,
) -> Result<(NuclearEstimate, Option<CvResult>)> {
    match &opts.lambda {
        LambdaRule::Fixed(l) => Ok((nuclear_estimate(counts, *l, &opts.admm)?, None)),
        LambdaRule::Scaled(c) => {
            let l = c * lambda_scale(counts.p(), counts.total());
            Ok((nuclear_estimate(counts, l, &opts.admm)?, None))
        }
        LambdaRule::CrossValidated { constants, folds } => {
            let traj = traj.ok_or_else(|| invalid("cross-validated lambda needs a trajectory, not only counts"))?;
            let (est, cv) = nuclear_estimate_cv(traj, constants, *folds, &opts.admm)?;
            Ok((est, Some(cv)))
        }
    }
}

/// Fits `estimator` with target rank `r`. The rank-constrained estimator starts
/// from the nuclear-norm estimate and uses its weight as the first penalty.
pub fn fit(
    estimator: Estimator,
    counts: &TransitionCounts,
    traj: Option<&Trajectory>,
    r: usize,
    opts: &SolverOptions,
) -> Result<Estimate> {
    let base = Estimate { estimator, matrix: empirical_estimator(counts), nuclear: None, cv: None, rank: None };
    match estimator {
        Estimator::Empirical => Ok(base),
        Estimator::Spectral => Ok(Estimate { matrix: spectral_estimator(counts, r)?, ..base }),
        Estimator::Nuclear => {
            let (est, cv) = fit_nuclear(counts, traj, opts)?;
            Ok(Estimate { matrix: est.completion.matrix.clone(), nuclear: Some(est), cv, ..base })
        }
        Estimator::Rank => {
            let (est, cv) = fit_nuclear(counts, traj, opts)?;
            let res = rank_from_nuclear(counts, r, &est, opts)?;
            Ok(Estimate { matrix: res.completion.matrix.clone(), nuclear: Some(est), cv, rank: Some(res), ..base })
        }
    }
}

fn rank_from_nuclear(
    counts: &TransitionCounts,
    r: usize,
    est: &NuclearEstimate,
    opts: &SolverOptions,
) -> Result<PdcResult> {
    rank_estimate(counts, r, est.lambda, est.completion.matrix.matrix(), Some(est.state.clone()), &opts.pdc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub p: usize,
    pub r: usize,
    pub k_grid: Vec<f64>,
    pub rolls: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    pub imbalance: Option<(f64, f64)>,
    pub solver: SolverOptions,
    /// Record wall times; when off the column is written as zero so that
    /// reruns are byte-identical.
    pub timing: bool,
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        SynthConfig { p: self.p, r: self.r, seed: self.seed, imbalance: self.imbalance }.validate()?;
        if self.p < 2 {
            return Err(invalid("benchmarks need at least two states"));
        }
        if self.k_grid.is_empty() || self.k_grid.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
            return Err(invalid("k_grid must be a nonempty list of positive reals"));
        }
        if self.k_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("k_grid must be strictly ascending"));
        }
        if self.rolls == 0 {
            return Err(invalid("rolls must be at least 1"));
        }
        if self.estimators.is_empty() {
            return Err(invalid("at least one estimator is required"));
        }
        let mut seen = self.estimators.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.estimators.len() {
            return Err(invalid("estimators must not repeat"));
        }
        Ok(())
    }
}

/// `round(k r p ln p)`, halves rounded away from zero.
pub fn sample_size(k: f64, r: usize, p: usize) -> usize {
    (k * r as f64 * p as f64 * (p as f64).ln()).round() as usize
}

/// Seed of roll `roll`, derived from the run seed.
pub fn roll_seed(seed: u64, roll: usize) -> u64 {
    let mut rng = seeded_rng(seed, streams::ROLLS);
    let mut s = 0;
    for _ in 0..=roll {
        s = rng.random::<u64>();
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub k: f64,
    pub n: usize,
    pub roll: usize,
    pub estimator: Estimator,
    /// `None` when the estimator failed.
    pub metrics: Option<MetricTriple>,
    pub wall_time_ms: f64,
    pub error: Option<String>,
}

impl BenchmarkRow {
    pub fn failed(&self) -> bool {
        self.metrics.is_none()
    }
}

/// Runs every `(k, roll)` unit, in parallel on the current rayon pool, and
/// returns rows in `(k, roll, estimator)` order.
pub fn benchmark_run(cfg: &BenchmarkConfig) -> Result<Vec<BenchmarkRow>> {
    cfg.validate()?;
    let truths: Vec<TransitionMatrix> = (0..cfg.rolls)
        .map(|roll| {
            let seed = roll_seed(cfg.seed, roll);
            generate(&SynthConfig { p: cfg.p, r: cfg.r, seed, imbalance: cfg.imbalance })
        })
        .collect::<Result<_>>()?;
    let units: Vec<(usize, usize)> =
        (0..cfg.k_grid.len()).flat_map(|ki| (0..cfg.rolls).map(move |roll| (ki, roll))).collect();
    let rows: Vec<Vec<BenchmarkRow>> = units
        .par_iter()
        .map(|&(ki, roll)| run_unit(cfg, &truths[roll], cfg.k_grid[ki], roll))
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

fn run_unit(cfg: &BenchmarkConfig, truth: &TransitionMatrix, k: f64, roll: usize) -> Result<Vec<BenchmarkRow>> {
    let n = sample_size(k, cfg.r, cfg.p);
    let seed = roll_seed(cfg.seed, roll);
    let traj = simulate(truth, n, seed, InitialState::Stationary)?;
    let counts = count_transitions(&traj);
    let pi = stationary_distribution(truth, 1e-13, 1_000_000)?;

    // the rank estimator reuses the nuclear fit when both are requested, and
    // its wall time includes that fit
    let mut nuclear: Option<(std::result::Result<NuclearEstimate, String>, f64)> = None;
    let mut out = Vec::with_capacity(cfg.estimators.len());
    let mut order = cfg.estimators.clone();
    order.sort();
    for est in order {
        let start = Instant::now();
        let mut extra_ms = 0.0;
        let fitted = match est {
            Estimator::Empirical => Ok(empirical_estimator(&counts)),
            Estimator::Spectral => spectral_estimator(&counts, cfg.r).map_err(|e| e.to_string()),
            Estimator::Nuclear | Estimator::Rank => {
                if let Some((_, ms)) = &nuclear {
                    extra_ms = *ms;
                }
                let (base, _) = nuclear.get_or_insert_with(|| {
                    let t = Instant::now();
                    let fit = fit_nuclear(&counts, Some(&traj), &cfg.solver).map(|f| f.0).map_err(|e| e.to_string());
                    (fit, t.elapsed().as_secs_f64() * 1e3)
                });
                match (est, base) {
                    (_, Err(e)) => Err(e.clone()),
                    (Estimator::Nuclear, Ok(b)) => Ok(b.completion.matrix.clone()),
                    (_, Ok(b)) => rank_from_nuclear(&counts, cfg.r, b, &cfg.solver)
                        .map(|r| r.completion.matrix)
                        .map_err(|e| e.to_string()),
                }
            }
        };
        let ms = start.elapsed().as_secs_f64() * 1e3 + extra_ms;
        out.push(score(cfg, truth, &pi, k, n, roll, est, fitted, ms));
    }
    // restore the configured estimator order
    out.sort_by_key(|row| cfg.estimators.iter().position(|&e| e == row.estimator));
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn score(
    cfg: &BenchmarkConfig,
    truth: &TransitionMatrix,
    pi: &crate::chain::StationaryDistribution,
    k: f64,
    n: usize,
    roll: usize,
    estimator: Estimator,
    fitted: std::result::Result<TransitionMatrix, String>,
    ms: f64,
) -> BenchmarkRow {
    let scored = fitted.and_then(|m| metrics(truth, pi, &m, cfg.r).map_err(|e| e.to_string()));
    let (metrics, error) = match scored {
        Ok(m) => (Some(m), None),
        Err(e) => (None, Some(e)),
    };
    BenchmarkRow { k, n, roll, estimator, metrics, wall_time_ms: if cfg.timing { ms } else { 0.0 }, error }
}

pub const CSV_HEADER: &str = "k,n,roll,estimator,eta_F,eta_KL,eta_UV,wall_time_ms,failed";

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_real(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:?}")
    }
}

pub fn write_rows<W: Write>(mut w: W, rows: &[BenchmarkRow]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for row in rows {
        let (f, kl, uv) = match &row.metrics {
            Some(m) => (fmt_real(m.eta_f), fmt_real(m.eta_kl), fmt_real(m.eta_uv)),
            None => ("nan".into(), "nan".into(), "nan".into()),
        };
        writeln!(
            w,
            "{},{},{},{},{f},{kl},{uv},{:.3},{}",
            fmt_real(row.k),
            row.n,
            row.roll,
            row.estimator,
            row.wall_time_ms,
            u8::from(row.failed())
        )?;
    }
    Ok(())
}

/// Mean and standard error over the successful rolls of one `(k, estimator)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub k: f64,
    pub n: usize,
    pub estimator: Estimator,
    pub rolls: usize,
    pub failures: usize,
    pub eta_f: (f64, f64),
    pub eta_kl: (f64, f64),
    pub eta_kl_smoothed: (f64, f64),
    pub eta_uv: (f64, f64),
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    if n == 1 || !mean.is_finite() {
        return (mean, if mean.is_finite() { 0.0 } else { f64::NAN });
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// One row per `(k, estimator)`, in the order the cells first appear.
pub fn summarize(rows: &[BenchmarkRow]) -> Vec<SummaryRow> {
    let mut cells: Vec<(f64, Estimator)> = Vec::new();
    for row in rows {
        if !cells.iter().any(|&(k, e)| k == row.k && e == row.estimator) {
            cells.push((row.k, row.estimator));
        }
    }
    cells
        .into_iter()
        .map(|(k, estimator)| {
            let cell: Vec<&BenchmarkRow> = rows.iter().filter(|r| r.k == k && r.estimator == estimator).collect();
            let ok: Vec<&MetricTriple> = cell.iter().filter_map(|r| r.metrics.as_ref()).collect();
            let col = |f: fn(&MetricTriple) -> f64| mean_stderr(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
            SummaryRow {
                k,
                n: cell[0].n,
                estimator,
                rolls: cell.len(),
                failures: cell.len() - ok.len(),
                eta_f: col(|m| m.eta_f),
                eta_kl: col(|m| m.eta_kl),
                eta_kl_smoothed: col(|m| m.eta_kl_smoothed),
                eta_uv: col(|m| m.eta_uv),
            }
        })
        .collect()
}

pub const SUMMARY_HEADER: &str = "k,n,estimator,rolls,failures,eta_F_mean,eta_F_stderr,eta_KL_mean,eta_KL_stderr,eta_KL_smoothed_mean,eta_KL_smoothed_stderr,eta_UV_mean,eta_UV_stderr";

pub fn write_summary<W: Write>(mut w: W, rows: &[SummaryRow]) -> std::io::Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for s in rows {
        let pair = |p: (f64, f64)| format!("{},{}", fmt_real(p.0), fmt_real(p.1));
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            fmt_real(s.k),
            s.n,
            s.estimator,
            s.rolls,
            s.failures,
            pair(s.eta_f),
            pair(s.eta_kl),
            pair(s.eta_kl_smoothed),
            pair(s.eta_uv)
        )?;
    }
    Ok(())
}

pub const PLOT_HEADER: &str = "estimator,n,eta_F_mean,eta_KL_smoothed_mean,eta_UV_mean";

/// Per-estimator series of `(n, mean eta)`, each sorted by `n`.
pub fn write_plot_data<W: Write>(mut w: W, rows: &[SummaryRow]) -> std::io::Result<()> {
    writeln!(w, "{PLOT_HEADER}")?;
    let mut sorted: Vec<&SummaryRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.estimator.cmp(&b.estimator).then(a.n.cmp(&b.n)));
    for s in sorted {
        writeln!(
            w,
            "{},{},{},{},{}",
            s.estimator,
            s.n,
            fmt_real(s.eta_f.0),
            fmt_real(s.eta_kl_smoothed.0),
            fmt_real(s.eta_uv.0)
        )?;
    }
    Ok(())
}
