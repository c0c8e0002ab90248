//! Rank-constrained maximum likelihood through a penalized proximal DC method.
//!
//! The constraint `rank(X) <= r` is replaced by the penalty
//! `c (||X||_* - ||X||_(r))`, which vanishes exactly on matrices of rank at
//! most `r`. Each outer step linearizes the Ky Fan norm at the current point
//! and solves the convex remainder with the sGS-ADMM engine; `c` is doubled
//! until the returned point has the target rank.

use nalgebra::{DMatrix, DVector};

use crate::admm::{
    admm_run, clamped_completion, stochastic_completion, AdmmOptions, Completion, EntrywiseLoss, NuclearProblem,
    SolverState,
};
use crate::chain::{TransitionCounts, TransitionMatrix};
use crate::error::{invalid, Error, Result};
use crate::ipdc::{ipdc, iteration_bound, DcModel, IpdcOptions, StopReason};
use crate::matops::{
    kyfan_subgradient_from, project_simplex, rank_of, singular_values, svd, truncated_svd, KyFanSubgradient,
};

pub use crate::matops::numerical_rank;

/// Problem data of the penalized formulation.
#[derive(Debug, Clone, PartialEq)]
pub struct DcProblem {
    pub counts: TransitionCounts,
    pub r: usize,
    /// Penalty parameter.
    pub c: f64,
    /// Proximal weight.
    pub alpha: f64,
}

impl DcProblem {
    pub fn new(counts: TransitionCounts, r: usize, c: f64, alpha: f64) -> Result<Self> {
        if r == 0 || r > counts.p() {
            return Err(invalid(format!("target rank {r} outside [1, {}]", counts.p())));
        }
        if !(c > 0.0 && c.is_finite()) || !(alpha >= 0.0) {
            return Err(invalid("penalty must be positive and proximal weight nonnegative"));
        }
        if counts.total() == 0 {
            return Err(invalid("counts are empty"));
        }
        Ok(Self { counts, r, c, alpha })
    }
}

/// `l_n(X) + delta(X >= 0) + c (||X||_* - ||X||_(r))`; `+inf` outside the domain.
pub fn dc_objective(x: &DMatrix<f64>, prob: &DcProblem) -> f64 {
    if x.iter().any(|&v| v < 0.0) {
        return f64::INFINITY;
    }
    let loss = likelihood_on_support(x, &prob.counts);
    loss + prob.c * tail_sum(&singular_values(x), prob.r)
}

/// The likelihood over the observed support; entries outside it are not
/// inspected, so small negative entries left by an inexact solve do not
/// make the value infinite.
fn likelihood_on_support(x: &DMatrix<f64>, counts: &TransitionCounts) -> f64 {
    let n = counts.total() as f64;
    let p = counts.p();
    let mut acc = 0.0;
    for i in 0..p {
        for j in 0..p {
            let nij = counts.get(i, j);
            if nij > 0 {
                let v = x[(i, j)];
                if v <= 0.0 {
                    return f64::INFINITY;
                }
                acc -= nij as f64 * v.ln();
            }
        }
    }
    acc / n
}

fn tail_sum(sigma: &DVector<f64>, r: usize) -> f64 {
    sigma.iter().skip(r).sum::<f64>().max(0.0)
}

/// Minimizer over `Z >= 0` of
/// `sigma * (-sum w_ij log Z_ij) + <W, Z> + (alpha/2) ||Z||^2 + (1/2) ||Z - sigma R||^2`
/// with `w_ij = n_ij / n`.
///
/// On the support this is
/// `((sigma R - W) + sqrt((sigma R - W)^2 + 4 (1 + alpha) sigma w)) / (2 (1 + alpha))`;
/// off the support it is `max(sigma R - W, 0) / (1 + alpha)`.
pub fn prox_z_dc(
    r: &DMatrix<f64>,
    sigma: f64,
    w: &DMatrix<f64>,
    alpha: f64,
    counts: &TransitionCounts,
) -> DMatrix<f64> {
    let freq = counts.frequencies();
    DMatrix::from_fn(r.nrows(), r.ncols(), |i, j| {
        crate::admm::scalar_prox(sigma * r[(i, j)], sigma * freq[(i, j)], w[(i, j)], alpha)
    })
}

/// The convex subproblem at `X_k` as a nuclear-norm problem: the loss gains
/// the linear term `-c W - alpha X_k` and the quadratic weight `alpha`.
pub fn subproblem(prob: &DcProblem, w: &DMatrix<f64>, xk: &DMatrix<f64>) -> Result<NuclearProblem> {
    let linear = -(w * prob.c) - xk * prob.alpha;
    let loss = EntrywiseLoss::likelihood(&prob.counts)?.with_terms(linear, prob.alpha)?;
    NuclearProblem::with_loss(&prob.counts, loss, prob.c)
}

/// Objective of the subproblem up to the constant `-c ||X_k||_(r)`.
pub fn subproblem_objective(prob: &DcProblem, w: &DMatrix<f64>, xk: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    dc_objective(x, prob) + prob.c * crate::matops::kyfan_norm(x, prob.r) - prob.c * w.dot(&(x - xk))
        + 0.5 * prob.alpha * (x - xk).norm_squared()
}

/// Solves the subproblem with the ADMM engine to its default tolerance.
pub fn dc_subproblem(
    prob: &DcProblem,
    w: &DMatrix<f64>,
    xk: &DMatrix<f64>,
    opts: &AdmmOptions,
) -> Result<DMatrix<f64>> {
    let sub = subproblem(prob, w, xk)?;
    Ok(crate::admm::sgs_admm_solve(&sub, opts)?.x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdcOptions {
    pub alpha: f64,
    pub eta: f64,
    pub max_outer: usize,
    /// Factor applied to `c` when the rank is still too high.
    pub c_growth: f64,
    pub max_c_increases: usize,
    pub rank_tol: f64,
    pub inner_tol_start: f64,
    pub inner_tol_end: f64,
    pub descent_slack: f64,
    /// Alternating projection rounds used to bring the repaired estimate to rank `r`.
    pub polish_rounds: usize,
    pub admm: AdmmOptions,
}

impl Default for PdcOptions {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            eta: 1e-5,
            max_outer: 200,
            c_growth: 2.0,
            max_c_increases: 10,
            rank_tol: 1e-6,
            inner_tol_start: 1e-4,
            inner_tol_end: 1e-7,
            descent_slack: 1e-6,
            polish_rounds: 200,
            admm: AdmmOptions::default(),
        }
    }
}

/// One accepted outer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcRecord {
    pub objective: f64,
    pub rank_est: usize,
    pub step_norm: f64,
    pub c_current: f64,
    /// Actual decrease from the previous iterate, both objectives at `c_current`.
    pub decrease: f64,
    /// Guaranteed decrease `(alpha/2) ||X_{k+1} - X_k||^2`.
    pub required_decrease: f64,
    pub inner_tol: f64,
}

/// Summary of one penalty level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcLevel {
    pub c: f64,
    pub iterations: usize,
    pub stop: StopReason,
    pub rank: usize,
    /// Iteration count bound from the guaranteed decrease, using the best
    /// objective seen as the optimum.
    pub iteration_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DcTrace {
    pub records: Vec<DcRecord>,
    pub levels: Vec<DcLevel>,
    /// Largest `|<W_k, X_k> - ||X_k||_(r)|` over steps without a singular value tie.
    pub w_consistency: f64,
    /// Number of linearizations taken at a tie `sigma_r = sigma_{r+1}`.
    pub ties: usize,
    /// `||c W_k - alpha (X_{k+1} - X_k) - c W_{k+1}||_F` at the last step.
    pub criticality: f64,
    /// Largest `||X_k||_F` seen.
    pub max_frobenius: f64,
}

impl DcTrace {
    pub fn objectives(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.objective)
    }

    /// Whether every level finished within its iteration bound.
    pub fn within_bounds(&self) -> bool {
        self.levels.iter().all(|l| l.iterations as f64 <= l.iteration_bound)
    }

    /// Whether the last level ended at an exact fixed point.
    pub fn critical(&self) -> bool {
        self.levels.last().is_some_and(|l| l.stop == StopReason::FixedPoint)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdcResult {
    pub raw: DMatrix<f64>,
    pub completion: Completion,
    pub trace: DcTrace,
    pub c_final: f64,
    pub rank: usize,
}

struct MarkovDc<'a> {
    prob: DcProblem,
    opts: &'a PdcOptions,
    warm: Option<SolverState>,
    /// Subgradients at the last two linearization points.
    w_hist: [Option<DMatrix<f64>>; 2],
    /// The last two accepted iterates.
    x_hist: [Option<DMatrix<f64>>; 2],
    /// Solver output behind the last candidate, before the feasibility repair.
    pending_raw: Option<DMatrix<f64>>,
    /// Solver output behind the current iterate. Its rank is exact, while
    /// clamping can leave tiny extra singular values in the iterate itself.
    raw: DMatrix<f64>,
    ranks: Vec<usize>,
    w_consistency: f64,
    ties: usize,
    max_frobenius: f64,
}

impl DcModel for MarkovDc<'_> {
    type Point = DMatrix<f64>;
    type Subgradient = DMatrix<f64>;

    fn objective(&self, x: &DMatrix<f64>) -> f64 {
        likelihood_on_support(x, &self.prob.counts) + self.prob.c * tail_sum(&singular_values(x), self.prob.r)
    }

    fn concave_subgradient(&mut self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let dec = svd(x)?;
        let KyFanSubgradient { w, tie } = kyfan_subgradient_from(&dec, self.prob.r)?;
        if tie {
            self.ties += 1;
        } else {
            let kf: f64 = dec.sigma.iter().take(self.prob.r).sum();
            self.w_consistency = self.w_consistency.max((w.dot(x) - kf).abs());
        }
        self.max_frobenius = self.max_frobenius.max(x.norm());
        self.w_hist = [self.w_hist[1].take(), Some(w.clone())];
        Ok(w)
    }

    fn solve_majorized(&mut self, x: &DMatrix<f64>, w: &DMatrix<f64>, accuracy: f64) -> Result<DMatrix<f64>> {
        let sub = subproblem(&self.prob, w, x)?;
        let opts = AdmmOptions { tol: accuracy, ..self.opts.admm };
        let sol = admm_run(&sub, &opts, self.warm.clone())?;
        self.warm = Some(sol.state);
        let cand = warm_start_point(clamped_completion(&sol.x)?.matrix.matrix(), &self.prob.counts);
        self.pending_raw = Some(sol.x);
        Ok(cand)
    }

    fn guaranteed_decrease(&self, from: &DMatrix<f64>, to: &DMatrix<f64>) -> f64 {
        0.5 * self.prob.alpha * (to - from).norm_squared()
    }

    fn step_norm(&self, from: &DMatrix<f64>, to: &DMatrix<f64>) -> f64 {
        (to - from).norm()
    }

    fn accepted(&mut self, x: &DMatrix<f64>) {
        self.raw = self.pending_raw.take().unwrap_or_else(|| x.clone());
        self.ranks.push(rank_of(&singular_values(&self.raw), self.opts.rank_tol));
        self.max_frobenius = self.max_frobenius.max(x.norm());
        self.x_hist = [self.x_hist[1].take(), Some(x.clone())];
    }
}

/// A stochastic matrix of numerical rank at most `r` near the final iterate.
///
/// Clamping the solver output leaves small extra singular values; alternating
/// between rank-`r` truncation and row-wise simplex projection removes them.
/// Falls back to the rank-preserving completion of `raw` when the rounds run out.
fn polish(raw: &DMatrix<f64>, x: DMatrix<f64>, r: usize, opts: &PdcOptions) -> Result<(DMatrix<f64>, Completion)> {
    let tol = opts.rank_tol;
    let mut cur = x;
    for _ in 0..=opts.polish_rounds {
        if rank_of(&singular_values(&cur), tol) <= r {
            return Ok((raw.clone(), repaired_completion(raw, cur)?));
        }
        let low = truncated_svd(&cur, r)?.reconstruct();
        cur = project_rows(&low);
    }
    Ok((raw.clone(), stochastic_completion(raw)?))
}

fn project_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        for (j, v) in project_simplex(&row).into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    out
}

/// The feasible iterate reported against the solver output it repairs.
fn repaired_completion(raw: &DMatrix<f64>, x: DMatrix<f64>) -> Result<Completion> {
    let row_sum_residual = raw.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max);
    let clamped = raw.iter().any(|&v| v < 0.0);
    Ok(Completion { matrix: TransitionMatrix::new(x)?, row_sum_residual, blend: 0.0, clamped })
}

/// The default starting point: a stochastic matrix floored at `1e-10` on the support.
pub fn warm_start_point(x: &DMatrix<f64>, counts: &TransitionCounts) -> DMatrix<f64> {
    let mut out = x.clone();
    for i in 0..counts.p() {
        for j in 0..counts.p() {
            if counts.observed(i, j) {
                out[(i, j)] = out[(i, j)].max(1e-10);
            }
        }
        let total = out.row(i).sum();
        if total > 0.0 {
            out.row_mut(i).scale_mut(1.0 / total);
        }
    }
    out
}

/// Penalized proximal DC method with an increasing penalty schedule.
///
/// Starting from `x0` with penalty `prob.c`, runs DC iterations until the
/// step is at most `eta`; if the numerical rank then exceeds `r`, `c` is
/// multiplied by `c_growth` and the iterations resume from the current point.
pub fn pdc_solve(prob: &DcProblem, x0: &DMatrix<f64>, opts: &PdcOptions) -> Result<PdcResult> {
    pdc_solve_from(prob, x0, opts, None)
}

/// As [`pdc_solve`], seeding the first subproblem with an ADMM state.
pub fn pdc_solve_from(
    prob: &DcProblem,
    x0: &DMatrix<f64>,
    opts: &PdcOptions,
    warm: Option<SolverState>,
) -> Result<PdcResult> {
    let p = prob.counts.p();
    if x0.shape() != (p, p) {
        return Err(invalid("starting point has the wrong shape"));
    }
    if !(opts.alpha >= 0.0 && opts.eta > 0.0 && opts.c_growth > 1.0) {
        return Err(invalid("invalid DC options"));
    }
    let mut model = MarkovDc {
        prob: DcProblem { alpha: opts.alpha, ..prob.clone() },
        opts,
        warm,
        w_hist: [None, None],
        x_hist: [None, Some(x0.clone())],
        pending_raw: None,
        raw: x0.clone(),
        ranks: Vec::new(),
        w_consistency: 0.0,
        ties: 0,
        max_frobenius: 0.0,
    };
    let mut trace = DcTrace::default();
    let mut x = x0.clone();
    let mut outer = 0;
    let a = if opts.alpha > 0.0 { opts.alpha } else { f64::MIN_POSITIVE };

    for level in 0..=opts.max_c_increases {
        if level > 0 {
            model.prob.c *= opts.c_growth;
        }
        let ip = IpdcOptions {
            eta: opts.eta,
            max_iter: opts.max_outer,
            slack: opts.descent_slack,
            accuracy_start: (opts.inner_tol_start * 0.1f64.powi(outer.min(64) as i32)).max(opts.inner_tol_end),
            accuracy_end: opts.inner_tol_end,
            accuracy_factor: 0.1,
            retries: 2,
        };
        model.ranks.clear();
        let out = ipdc(&mut model, x, &ip)?;
        let mut best = out.initial_objective;
        for (rec, &rank_est) in out.records.iter().zip(&model.ranks) {
            best = best.min(rec.objective);
            trace.records.push(DcRecord {
                objective: rec.objective,
                rank_est,
                step_norm: rec.step_norm,
                c_current: model.prob.c,
                decrease: rec.decrease,
                required_decrease: rec.required,
                inner_tol: rec.accuracy,
            });
        }
        outer += out.records.len();
        x = out.x;
        let rank = rank_of(&singular_values(&model.raw), opts.rank_tol);
        trace.levels.push(DcLevel {
            c: model.prob.c,
            iterations: out.records.len(),
            stop: out.stop,
            rank,
            iteration_bound: iteration_bound(out.initial_objective, best, a, opts.eta),
        });
        if rank <= prob.r {
            finish_trace(&mut trace, &model, prob.r)?;
            let (raw, completion) = polish(&model.raw, x, prob.r, opts)?;
            let rank = rank_of(&singular_values(completion.matrix.matrix()), opts.rank_tol);
            return Ok(PdcResult { raw, completion, trace, c_final: model.prob.c, rank });
        }
    }
    finish_trace(&mut trace, &model, prob.r)?;
    Err(Error::RankFailure {
        rank: rank_of(&singular_values(&model.raw), opts.rank_tol),
        target: prob.r,
        trace: Box::new(trace),
    })
}

fn finish_trace(trace: &mut DcTrace, model: &MarkovDc<'_>, r: usize) -> Result<()> {
    trace.w_consistency = model.w_consistency;
    trace.ties = model.ties;
    trace.max_frobenius = model.max_frobenius;
    if let ([Some(prev), Some(last)], Some(w_k)) = (&model.x_hist, &model.w_hist[1]) {
        let w_next = kyfan_subgradient_from(&svd(last)?, r)?.w;
        let c = model.prob.c;
        trace.criticality = (w_k * c - (last - prev) * model.prob.alpha - w_next * c).norm();
    }
    Ok(())
}

/// Rank-constrained estimate from a convex solution, with the default start.
pub fn rank_estimate(
    counts: &TransitionCounts,
    r: usize,
    c0: f64,
    convex: &DMatrix<f64>,
    warm: Option<SolverState>,
    opts: &PdcOptions,
) -> Result<PdcResult> {
    let prob = DcProblem::new(counts.clone(), r, c0, opts.alpha)?;
    let x0 = warm_start_point(convex, counts);
    pdc_solve_from(&prob, &x0, opts, warm)
}

/// `theta(x) = (1/2) x^T H x - b^T x + lambda ||x||_1 - mu ||x||_2`, solved with
/// the majorant `G = L I` (`L` the largest eigenvalue of `H`) and the
/// indefinite proximal operator `T = -(L/4) I`. Since `G + 2T = (L/2) I`, each
/// step decreases `theta` by at least `(L/4) ||step||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticToy {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lambda: f64,
    pub mu: f64,
    lipschitz: f64,
}

impl QuadraticToy {
    pub fn new(h: DMatrix<f64>, b: DVector<f64>, lambda: f64, mu: f64) -> Result<Self> {
        let eig = h.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&v| v < -1e-12) {
            return Err(invalid("H must be positive semidefinite"));
        }
        let lipschitz = eig.eigenvalues.max();
        Ok(Self { h, b, lambda, mu, lipschitz })
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

impl DcModel for QuadraticToy {
    type Point = DVector<f64>;
    type Subgradient = DVector<f64>;

    fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) - self.b.dot(x) + self.lambda * x.lp_norm(1) - self.mu * x.norm()
    }

    fn concave_subgradient(&mut self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let nrm = x.norm();
        Ok(if nrm > 0.0 { x * (self.mu / nrm) } else { DVector::zeros(x.len()) })
    }

    fn solve_majorized(&mut self, x: &DVector<f64>, xi: &DVector<f64>, _accuracy: f64) -> Result<DVector<f64>> {
        // argmin <grad - xi, z> + (1/2)(G + T)||z - x||^2 + lambda ||z||_1
        let m = 0.75 * self.lipschitz;
        let grad = &self.h * x - &self.b;
        let v = x - (grad - xi) / m;
        let t = self.lambda / m;
        Ok(v.map(|e| e.signum() * (e.abs() - t).max(0.0)))
    }

    fn guaranteed_decrease(&self, from: &DVector<f64>, to: &DVector<f64>) -> f64 {
        0.25 * self.lipschitz * (to - from).norm_squared()
    }

    fn step_norm(&self, from: &DVector<f64>, to: &DVector<f64>) -> f64 {
        (to - from).norm()
    }
}
