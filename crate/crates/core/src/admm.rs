//! Nuclear-norm regularized maximum likelihood through an sGS-ADMM on the dual.
//!
//! The primal problem is
//!
//! ```text
//! minimize  g(X) + c ||X||_*   subject to  X 1 = 1
//! ```
//!
//! with `g(X) = -sum_{ij in Omega} w_ij log X_ij + delta(X >= 0) + <L, X> + (q/2)||X||_F^2`,
//! `w_ij = n_ij / n` and `Omega = {n_ij > 0}`. The plain estimator has `L = 0`,
//! `q = 0`; the rank-constrained solver reuses the engine with nonzero `L`, `q`.
//!
//! The dual is
//!
//! ```text
//! minimize  g*(-Xi) - <1, y> + delta(||S||_2 <= c)   subject to  Xi + y 1^T + S = 0
//! ```
//!
//! and each sweep updates `y, Xi, y, S` and then the multiplier `X`, which is
//! the primal estimate.

use nalgebra::{DMatrix, DVector};

use crate::chain::{count_transitions, neg_log_likelihood, smooth, Trajectory, TransitionCounts, TransitionMatrix};
use crate::error::{invalid, Error, Result};
use crate::matops::{clip_spectral, nuclear_norm, svd_above};

/// Largest admissible step length, the golden ratio.
pub const GAMMA_MAX: f64 = 1.618_033_988_749_895;

/// Entrywise convex part `g` of the primal objective.
#[derive(Debug, Clone, PartialEq)]
pub struct EntrywiseLoss {
    weights: DMatrix<f64>,
    linear: Option<DMatrix<f64>>,
    quad: f64,
}

impl EntrywiseLoss {
    /// The averaged negative log-likelihood with the nonnegativity constraint.
    pub fn likelihood(counts: &TransitionCounts) -> Result<Self> {
        if counts.total() == 0 {
            return Err(invalid("counts are empty"));
        }
        Ok(Self { weights: counts.frequencies(), linear: None, quad: 0.0 })
    }

    /// Adds `<linear, X> + (quad/2) ||X||_F^2`.
    pub fn with_terms(mut self, linear: DMatrix<f64>, quad: f64) -> Result<Self> {
        if linear.shape() != self.weights.shape() {
            return Err(invalid("linear term has the wrong shape"));
        }
        if !(quad >= 0.0) {
            return Err(invalid("quadratic weight must be nonnegative"));
        }
        self.linear = Some(linear);
        self.quad = quad;
        Ok(self)
    }

    pub fn p(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn linear(&self) -> Option<&DMatrix<f64>> {
        self.linear.as_ref()
    }

    pub fn quad(&self) -> f64 {
        self.quad
    }

    fn lin(&self, i: usize, j: usize) -> f64 {
        self.linear.as_ref().map_or(0.0, |l| l[(i, j)])
    }

    /// `g(X)`; `+inf` outside the domain.
    pub fn value(&self, x: &DMatrix<f64>) -> f64 {
        let mut acc = 0.0;
        for (k, (&w, &v)) in self.weights.iter().zip(x.iter()).enumerate() {
            if v < 0.0 || (w > 0.0 && v == 0.0) {
                return f64::INFINITY;
            }
            if w > 0.0 {
                acc -= w * v.ln();
            }
            if let Some(l) = &self.linear {
                acc += l[k] * v;
            }
        }
        acc + 0.5 * self.quad * x.norm_squared()
    }

    /// `g(X)` with the sign constraint dropped off `Omega`.
    fn value_relaxed(&self, x: &DMatrix<f64>) -> f64 {
        let mut acc = 0.0;
        for (k, (&w, &v)) in self.weights.iter().zip(x.iter()).enumerate() {
            if w > 0.0 {
                if v <= 0.0 {
                    return f64::INFINITY;
                }
                acc -= w * v.ln();
            }
            if let Some(l) = &self.linear {
                acc += l[k] * v;
            }
        }
        acc + 0.5 * self.quad * x.norm_squared()
    }

    /// Convex conjugate `g*(U) = sup_X <U, X> - g(X)`.
    pub fn conjugate(&self, u: &DMatrix<f64>) -> f64 {
        let q = self.quad;
        let p = self.p();
        let mut acc = 0.0;
        for j in 0..p {
            for i in 0..p {
                let w = self.weights[(i, j)];
                let v = u[(i, j)] - self.lin(i, j);
                if w > 0.0 {
                    if q == 0.0 && v >= 0.0 {
                        return f64::INFINITY;
                    }
                    let root = (v * v + 4.0 * q * w).sqrt();
                    let x = 2.0 * w / (root - v);
                    acc += v * x + w * x.ln() - 0.5 * q * x * x;
                } else if q > 0.0 {
                    let m = v.max(0.0);
                    acc += m * m / (2.0 * q);
                } else if v > 0.0 {
                    return f64::INFINITY;
                }
            }
        }
        acc
    }

    /// `argmin_Z  t g(Z) + (1/2) ||Z - V||_F^2`.
    pub fn prox(&self, v: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
        let p = self.p();
        DMatrix::from_fn(p, p, |i, j| {
            scalar_prox(v[(i, j)], t * self.weights[(i, j)], t * self.lin(i, j), t * self.quad)
        })
    }
}

/// Minimizer over `z >= 0` of `-sw log z + wl z + (a/2) z^2 + (1/2)(z - t)^2`.
///
/// For `sw > 0` this is the positive root of `(1 + a) z^2 - (t - wl) z - sw = 0`,
/// evaluated without cancellation; for `sw = 0` it reduces to
/// `max(t - wl, 0) / (1 + a)`.
pub(crate) fn scalar_prox(t: f64, sw: f64, wl: f64, a: f64) -> f64 {
    let b = t - wl;
    let k = 1.0 + a;
    if sw == 0.0 {
        return b.max(0.0) / k;
    }
    let disc = (b * b + 4.0 * k * sw).sqrt();
    if b >= 0.0 {
        (b + disc) / (2.0 * k)
    } else {
        2.0 * sw / (disc - b)
    }
}

/// Nuclear-norm regularized problem over the stochastic matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct NuclearProblem {
    loss: EntrywiseLoss,
    lambda: f64,
    row_totals: Vec<u64>,
    total: u64,
}

impl NuclearProblem {
    pub fn new(counts: &TransitionCounts, lambda: f64) -> Result<Self> {
        Self::with_loss(counts, EntrywiseLoss::likelihood(counts)?, lambda)
    }

    pub fn with_loss(counts: &TransitionCounts, loss: EntrywiseLoss, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid(format!("regularization {lambda} must be positive")));
        }
        if loss.p() != counts.p() {
            return Err(invalid("loss and counts disagree on p"));
        }
        Ok(Self { loss, lambda, row_totals: counts.row_totals().to_vec(), total: counts.total() })
    }

    pub fn p(&self) -> usize {
        self.loss.p()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn loss(&self) -> &EntrywiseLoss {
        &self.loss
    }

    /// Whether `(i, j)` lies in the observed support.
    pub fn in_omega(&self, i: usize, j: usize) -> bool {
        self.loss.weights[(i, j)] > 0.0
    }

    /// `g(X) + lambda ||X||_*`.
    pub fn primal_objective(&self, x: &DMatrix<f64>) -> f64 {
        self.loss.value(x) + self.lambda * nuclear_norm(x)
    }

    /// `-(g*(-Xi) - <1, y>)`, a lower bound on the primal optimum.
    pub fn dual_objective(&self, xi: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
        y.sum() - self.loss.conjugate(&(-xi))
    }

    /// The state that solves the unregularized problem exactly: `X` is the
    /// empirical estimator and the multipliers are the row frequencies.
    pub fn default_start(&self) -> SolverState {
        let p = self.p();
        let n = self.total as f64;
        let mut x = DMatrix::from_element(p, p, 1.0 / p as f64);
        let mut xi = DMatrix::zeros(p, p);
        let mut y = DVector::zeros(p);
        for i in 0..p {
            let ni = self.row_totals[i];
            if ni == 0 {
                continue;
            }
            let share = ni as f64 / n;
            for j in 0..p {
                x[(i, j)] = self.loss.weights[(i, j)] / share;
                xi[(i, j)] = share;
            }
            y[i] = -share;
        }
        SolverState { xi, y, s: DMatrix::zeros(p, p), x, sigma: 1.0, gamma: 1.618, iter: 0 }
    }
}

/// Dual iterate `(Xi, y, S)`, primal multiplier `X` and step parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub xi: DMatrix<f64>,
    pub y: DVector<f64>,
    pub s: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub sigma: f64,
    pub gamma: f64,
    pub iter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub iter: usize,
    pub kkt: f64,
    pub primal_obj: f64,
    pub dual_obj: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// Relative KKT residual `D / (1 + p)` at the returned point.
    pub kkt: f64,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub iters: usize,
    pub converged: bool,
    pub sigma: f64,
    pub trace: Vec<TracePoint>,
}

impl ConvergenceReport {
    /// `|primal - dual| / (1 + |primal|)`.
    pub fn relative_gap(&self) -> f64 {
        (self.primal_obj - self.dual_obj).abs() / (1.0 + self.primal_obj.abs())
    }
}

/// The four squared blocks of the KKT residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    /// `||X - prox_g(X - Xi)||^2`, violation of `-Xi in dg(X)`.
    pub loss: f64,
    /// `||S - Pi(S - X)||^2`, violation of `X in N(S)` for the spectral ball.
    pub spectral: f64,
    /// `||X 1 - 1||^2`.
    pub rows: f64,
    /// `||Xi + y 1^T + S||^2`.
    pub dual: f64,
}

impl KktResidual {
    pub fn total(&self) -> f64 {
        self.loss + self.spectral + self.rows + self.dual
    }

    /// `total / (1 + ||b||^2)` with `b = 1_p`.
    pub fn relative(&self, p: usize) -> f64 {
        self.total() / (1.0 + p as f64)
    }
}

pub fn kkt_residual(state: &SolverState, prob: &NuclearProblem) -> KktResidual {
    let x = &state.x;
    let spectral_pt = clip_spectral(&(&state.s - x), prob.lambda);
    KktResidual {
        loss: loss_residual(prob, x, &state.xi),
        spectral: (&state.s - spectral_pt).norm_squared(),
        rows: row_residual(x),
        dual: dual_residual(&state.xi, &state.y, &state.s),
    }
}

fn loss_residual(prob: &NuclearProblem, x: &DMatrix<f64>, xi: &DMatrix<f64>) -> f64 {
    let p = prob.p();
    let mut acc = 0.0;
    for j in 0..p {
        for i in 0..p {
            let z = scalar_prox(x[(i, j)] - xi[(i, j)], prob.loss.weights[(i, j)], prob.loss.lin(i, j), prob.loss.quad);
            acc += (x[(i, j)] - z).powi(2);
        }
    }
    acc
}

fn row_residual(x: &DMatrix<f64>) -> f64 {
    x.row_iter().map(|r| (r.sum() - 1.0).powi(2)).sum()
}

fn dual_residual(xi: &DMatrix<f64>, y: &DVector<f64>, s: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..xi.ncols() {
        for i in 0..xi.nrows() {
            acc += (xi[(i, j)] + y[i] + s[(i, j)]).powi(2);
        }
    }
    acc
}

/// The `Xi` block update: `Z = prox_{sigma g}(sigma R)` and `Xi = (Z - sigma R) / sigma`.
pub fn prox_dual_xi(r: &DMatrix<f64>, sigma: f64, prob: &NuclearProblem) -> (DMatrix<f64>, DMatrix<f64>) {
    let z = prob.loss.prox(&(r * sigma), sigma);
    let xi = (&z - r * sigma) / sigma;
    (xi, z)
}

/// Exact minimizer in `y` of the augmented Lagrangian:
/// `y = (1 - (X + sigma (Xi + S)) 1) / (sigma p)`.
pub fn update_y(xi: &DMatrix<f64>, s: &DMatrix<f64>, x: &DMatrix<f64>, sigma: f64) -> DVector<f64> {
    let p = x.ncols() as f64;
    DVector::from_fn(x.nrows(), |i, _| {
        let mut row = 0.0;
        for j in 0..x.ncols() {
            row += x[(i, j)] + sigma * (xi[(i, j)] + s[(i, j)]);
        }
        (1.0 - row) / (sigma * p)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmOptions {
    pub sigma0: f64,
    pub gamma: f64,
    /// Bound on the relative KKT residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Also require `|primal - dual| <= gap_factor * tol * (1 + |primal|)`.
    pub gap_factor: Option<f64>,
    /// `sigma` is rescaled when the two infeasibilities differ by more than this ratio.
    pub sigma_ratio: f64,
    pub sigma_factor: f64,
    pub sigma_every: usize,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            sigma0: 1.0,
            gamma: 1.618,
            tol: 1e-6,
            max_iter: 20_000,
            gap_factor: Some(10.0),
            sigma_ratio: 10.0,
            sigma_factor: 1.3,
            sigma_every: 20,
        }
    }
}

impl AdmmOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < GAMMA_MAX) {
            return Err(invalid(format!("step length {} outside (0, golden ratio)", self.gamma)));
        }
        if !(self.sigma0 > 0.0) || !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(invalid("sigma0, tol and max_iter must be positive"));
        }
        if !(self.sigma_factor > 1.0) || !(self.sigma_ratio > 1.0) || self.sigma_every == 0 {
            return Err(invalid("sigma adaptation parameters out of range"));
        }
        Ok(())
    }
}

/// Solver output before any normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmSolution {
    /// Primal estimate, the multiplier recovered from the last spectral step.
    pub x: DMatrix<f64>,
    pub state: SolverState,
    pub report: ConvergenceReport,
}

/// Runs the sGS-ADMM and fails with a convergence error if `max_iter` is hit.
pub fn sgs_admm_solve(prob: &NuclearProblem, opts: &AdmmOptions) -> Result<AdmmSolution> {
    let sol = admm_run(prob, opts, None)?;
    into_result(sol)
}

/// As [`sgs_admm_solve`], starting from a previous state.
pub fn sgs_admm_solve_from(prob: &NuclearProblem, opts: &AdmmOptions, start: SolverState) -> Result<AdmmSolution> {
    let sol = admm_run(prob, opts, Some(start))?;
    into_result(sol)
}

fn into_result(sol: AdmmSolution) -> Result<AdmmSolution> {
    if sol.report.converged {
        return Ok(sol);
    }
    Err(Error::Convergence {
        message: "sGS-ADMM hit its iteration limit".into(),
        iterations: sol.report.iters,
        residual: sol.report.kkt,
        report: Some(Box::new(sol.report)),
    })
}

/// One full solve; non-convergence is reported in the result, not as an error.
pub(crate) fn admm_run(prob: &NuclearProblem, opts: &AdmmOptions, start: Option<SolverState>) -> Result<AdmmSolution> {
    opts.validate()?;
    let p = prob.p();
    let c = prob.lambda;
    let mut st = match start {
        Some(mut s) => {
            if s.x.shape() != (p, p) {
                return Err(invalid("warm start has the wrong shape"));
            }
            s.s = clip_spectral(&s.s, c);
            s.gamma = opts.gamma;
            s
        }
        None => {
            let mut s = prob.default_start();
            s.sigma = opts.sigma0;
            s.gamma = opts.gamma;
            s
        }
    };
    st.iter = 0;

    let ones_t = |y: &DVector<f64>| DMatrix::from_fn(p, p, |i, _| y[i]);
    let mut trace = Vec::new();
    let mut last_adapt = 0;
    let mut best: Option<(f64, DMatrix<f64>, SolverState, f64, f64)> = None;

    for k in 1..=opts.max_iter {
        let sigma = st.sigma;
        // y half step, Xi, y, S
        st.y = update_y(&st.xi, &st.s, &st.x, sigma);
        let r = ones_t(&st.y) + &st.s + &st.x / sigma;
        let (xi, _) = prox_dual_xi(&r, sigma, prob);
        st.xi = xi;
        st.y = update_y(&st.xi, &st.s, &st.x, sigma);
        let aty = ones_t(&st.y);
        let m = -(&st.xi + &aty + &st.x / sigma);
        // S = clip(M); X~ = sigma (S - M) = -sigma U (Sigma - c)_+ V^T
        let dec = svd_above(&m, c);
        let shrink = dec.sigma.map(|s| (s - c).max(0.0));
        let nuc = sigma * shrink.sum();
        let x_tilde = {
            let mut tail = dec.u.clone();
            for (j, s) in shrink.iter().enumerate() {
                tail.column_mut(j).scale_mut(-sigma * s);
            }
            tail * dec.v.transpose()
        };
        st.s = &m + &x_tilde / sigma;
        st.x = &st.x * (1.0 - st.gamma) + &x_tilde * st.gamma;
        st.iter = k;

        let loss_r = loss_residual(prob, &x_tilde, &st.xi);
        let rows_r = row_residual(&x_tilde);
        let dual_r = dual_residual(&st.xi, &st.y, &st.s);
        let kkt = (loss_r + rows_r + dual_r) / (1.0 + p as f64);
        let pobj = prob.loss.value_relaxed(&x_tilde) + c * nuc;
        let dobj = prob.dual_objective(&st.xi, &st.y);
        trace.push(TracePoint { iter: k, kkt, primal_obj: pobj, dual_obj: dobj });

        let gap_ok = match opts.gap_factor {
            None => true,
            Some(f) => (pobj - dobj).abs() <= f * opts.tol * (1.0 + pobj.abs()),
        };
        if best.as_ref().map_or(true, |b| kkt < b.0) {
            best = Some((kkt, x_tilde.clone(), st.clone(), pobj, dobj));
        }
        if kkt <= opts.tol && gap_ok {
            let report = ConvergenceReport {
                kkt,
                primal_obj: pobj,
                dual_obj: dobj,
                iters: k,
                converged: true,
                sigma: st.sigma,
                trace,
            };
            return Ok(AdmmSolution { x: x_tilde, state: st, report });
        }

        if k - last_adapt >= opts.sigma_every {
            let constraint = dual_r.sqrt();
            let optimality = (loss_r + rows_r).sqrt();
            if constraint > opts.sigma_ratio * optimality {
                st.sigma *= opts.sigma_factor;
                last_adapt = k;
            } else if optimality > opts.sigma_ratio * constraint {
                st.sigma /= opts.sigma_factor;
                last_adapt = k;
            }
        }
    }

    let (kkt, x, state, pobj, dobj) = best.expect("at least one iteration");
    let report = ConvergenceReport {
        kkt,
        primal_obj: pobj,
        dual_obj: dobj,
        iters: opts.max_iter,
        converged: false,
        sigma: state.sigma,
        trace,
    };
    Ok(AdmmSolution { x, state, report })
}

/// A row-stochastic matrix derived from a solver output.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub matrix: TransitionMatrix,
    /// `max_i |sum_j X_ij - 1|` before normalization.
    pub row_sum_residual: f64,
    /// Weight `t` of the mean row mixed in to remove negative entries.
    pub blend: f64,
    /// Set when negative entries had to be clamped, which can raise the rank.
    pub clamped: bool,
}

/// Turns a solver output into a transition matrix by clamping.
///
/// Negative entries are set to zero and rows are divided by their sums (rows
/// summing to at most `1e-12` become uniform). This is the smallest repair but
/// can leave tiny extra singular values where entries were clamped.
pub fn clamped_completion(x: &DMatrix<f64>) -> Result<Completion> {
    check_square_finite(x)?;
    let p = x.nrows();
    let row_sum_residual = x.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max);
    let clamped = x.iter().any(|&v| v < 0.0);
    let mut m = x.map(|v| v.max(0.0));
    for mut row in m.row_iter_mut() {
        let s = row.sum();
        if s > 1e-12 {
            row.scale_mut(1.0 / s);
        } else {
            row.fill(1.0 / p as f64);
        }
    }
    Ok(Completion { matrix: TransitionMatrix::new(m)?, row_sum_residual, blend: 0.0, clamped })
}

fn check_square_finite(x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != x.nrows() || x.nrows() == 0 {
        return Err(invalid("expected a nonempty square matrix"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid("estimate has non-finite entries"));
    }
    Ok(())
}

/// Turns a solver output into a transition matrix without raising its rank.
///
/// Rows are divided by their sums (rows summing to at most `1e-12` become
/// uniform). Negative entries left by the spectral step are removed by mixing
/// in the mean row, `X <- (1 - t) X + t 1 v^T`, with the smallest `t` that makes
/// every entry nonnegative. `v` lies in the row space of `X`, so the rank does
/// not grow.
pub fn stochastic_completion(x: &DMatrix<f64>) -> Result<Completion> {
    check_square_finite(x)?;
    let p = x.nrows();
    let mut row_sum_residual: f64 = 0.0;
    let mut m = x.clone();
    for mut row in m.row_iter_mut() {
        let s = row.sum();
        row_sum_residual = row_sum_residual.max((s - 1.0).abs());
        if s > 1e-12 {
            row.scale_mut(1.0 / s);
        } else {
            row.fill(1.0 / p as f64);
        }
    }
    let mut blend = 0.0;
    let mut clamped = false;
    if m.iter().any(|&v| v < 0.0) {
        let mean = DVector::from_fn(p, |j, _| m.column(j).mean());
        let mut t: f64 = 0.0;
        let mut feasible = true;
        for j in 0..p {
            for i in 0..p {
                let v = m[(i, j)];
                if v < 0.0 {
                    if mean[j] > 0.0 {
                        t = t.max(-v / (mean[j] - v));
                    } else {
                        feasible = false;
                    }
                }
            }
        }
        if feasible {
            blend = t;
            for j in 0..p {
                for i in 0..p {
                    m[(i, j)] = ((1.0 - t) * m[(i, j)] + t * mean[j]).max(0.0);
                }
            }
        } else {
            clamped = true;
            m.apply(|v| *v = v.max(0.0));
        }
        for mut row in m.row_iter_mut() {
            let s = row.sum();
            row.scale_mut(1.0 / s);
        }
    }
    Ok(Completion { matrix: TransitionMatrix::new(m)?, row_sum_residual, blend, clamped })
}

/// Nuclear-norm estimate, raw and normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct NuclearEstimate {
    pub lambda: f64,
    pub raw: DMatrix<f64>,
    pub completion: Completion,
    pub report: ConvergenceReport,
    pub state: SolverState,
}

pub fn nuclear_estimate(counts: &TransitionCounts, lambda: f64, opts: &AdmmOptions) -> Result<NuclearEstimate> {
    nuclear_estimate_from(counts, lambda, opts, None)
}

pub(crate) fn nuclear_estimate_from(
    counts: &TransitionCounts,
    lambda: f64,
    opts: &AdmmOptions,
    start: Option<SolverState>,
) -> Result<NuclearEstimate> {
    let prob = NuclearProblem::new(counts, lambda)?;
    let sol = into_result(admm_run(&prob, opts, start)?)?;
    Ok(NuclearEstimate {
        lambda,
        completion: clamped_completion(&sol.x)?,
        raw: sol.x,
        report: sol.report,
        state: sol.state,
    })
}

/// `lambda = constant * sqrt(p log p / n)`.
pub fn lambda_scale(p: usize, n: u64) -> f64 {
    ((p as f64) * (p as f64).ln() / n as f64).sqrt()
}

/// Held-out smoothing weight.
pub const CV_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CvRow {
    pub constant: f64,
    /// Held-out smoothed negative log-likelihood per fold.
    pub fold_losses: Vec<f64>,
    pub mean_loss: f64,
    /// Regularization for the full trajectory.
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub lambda: f64,
    pub constant: f64,
    pub table: Vec<CvRow>,
}

/// Default grid for the constant in front of `sqrt(p log p / n)`.
pub const DEFAULT_CONSTANTS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// Chooses `lambda = C sqrt(p log p / n)` by contiguous-block cross-validation.
///
/// The transitions are split into `folds` contiguous blocks. For each block
/// the estimator is fit on the counts of the other blocks, with `n` taken as
/// the training size, and scored by the `eps`-smoothed negative
/// log-likelihood of the held-out block. The constant with the smallest mean
/// loss wins, ties going to the smaller constant.
pub fn select_lambda_cv(traj: &Trajectory, constants: &[f64], folds: usize, opts: &AdmmOptions) -> Result<CvResult> {
    let p = traj.p();
    let n = traj.transitions();
    if constants.is_empty() || constants.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
        return Err(invalid("constants must be a nonempty list of positive reals"));
    }
    if folds < 2 || n < folds {
        return Err(invalid(format!("cannot split {n} transitions into {folds} folds")));
    }
    if p < 2 {
        return Err(invalid("cross-validation needs at least two states"));
    }
    let states = traj.states();
    let bounds: Vec<usize> = (0..=folds).map(|f| f * n / folds).collect();
    let pairs = |lo: usize, hi: usize| (lo..hi).map(move |k| (states[k], states[k + 1]));

    // larger constants first, so each warm start moves toward less shrinkage
    let mut order: Vec<usize> = (0..constants.len()).collect();
    order.sort_by(|&a, &b| constants[b].total_cmp(&constants[a]));

    let mut losses = vec![vec![0.0; folds]; constants.len()];
    for f in 0..folds {
        let (lo, hi) = (bounds[f], bounds[f + 1]);
        let held = TransitionCounts::from_transitions(p, pairs(lo, hi));
        let train = TransitionCounts::from_transitions(p, pairs(0, lo).chain(pairs(hi, n)));
        if held.total() == 0 || train.total() == 0 {
            return Err(invalid("degenerate fold"));
        }
        let scale = lambda_scale(p, train.total());
        let mut warm: Option<SolverState> = None;
        for &ci in &order {
            let est = nuclear_estimate_from(&train, constants[ci] * scale, opts, warm.take())?;
            let q = smooth(est.completion.matrix.matrix(), CV_EPSILON);
            losses[ci][f] = neg_log_likelihood(&q, &held)?;
            warm = Some(est.state);
        }
    }

    let full_scale = lambda_scale(p, n as u64);
    let table: Vec<CvRow> = constants
        .iter()
        .zip(losses)
        .map(|(&constant, fold_losses)| CvRow {
            constant,
            mean_loss: fold_losses.iter().sum::<f64>() / folds as f64,
            fold_losses,
            lambda: constant * full_scale,
        })
        .collect();
    let best = table
        .iter()
        .min_by(|a, b| a.mean_loss.total_cmp(&b.mean_loss).then(a.constant.total_cmp(&b.constant)))
        .expect("nonempty grid");
    Ok(CvResult { lambda: best.lambda, constant: best.constant, table: table.clone() })
}

/// Cross-validated nuclear-norm estimate on the full trajectory.
pub fn nuclear_estimate_cv(
    traj: &Trajectory,
    constants: &[f64],
    folds: usize,
    opts: &AdmmOptions,
) -> Result<(NuclearEstimate, CvResult)> {
    let cv = select_lambda_cv(traj, constants, folds, opts)?;
    let est = nuclear_estimate(&count_transitions(traj), cv.lambda, opts)?;
    Ok((est, cv))
}
