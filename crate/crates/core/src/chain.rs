//! Markov-chain primitives: transition counting, likelihood, KL divergence,
//! stationary distributions, spectral-gap diagnostics and simulation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::rng::{seeded_rng, streams};

/// Absolute tolerance on row sums of a stochastic matrix.
pub const ROW_SUM_TOL: f64 = 1e-10;

/// Dense row-stochastic `p x p` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    entries: DMatrix<f64>,
}

impl TransitionMatrix {
    /// Validates squareness, nonnegativity and unit row sums.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let p = entries.nrows();
        if p == 0 || entries.ncols() != p {
            return Err(invalid(format!(
                "transition matrix must be square and nonempty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        for i in 0..p {
            let mut sum = 0.0;
            for j in 0..p {
                let v = entries[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(invalid(format!("entry ({i},{j}) = {v} is not a probability")));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(invalid(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(invalid("rows must all have length p"));
        }
        Self::new(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
    }

    pub fn uniform(p: usize) -> Self {
        Self { entries: DMatrix::from_element(p, p, 1.0 / p as f64) }
    }

    pub fn p(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }
}

/// Observed state sequence `X_0, ..., X_n` on `p` states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    states: Vec<usize>,
    p: usize,
}

impl Trajectory {
    pub fn new(states: Vec<usize>, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(invalid("state count must be positive"));
        }
        if states.len() < 2 {
            return Err(invalid(format!("trajectory needs at least one transition, got {} states", states.len())));
        }
        if let Some((k, &s)) = states.iter().enumerate().find(|(_, &s)| s >= p) {
            return Err(invalid(format!("state {s} at position {k} is outside [0, {p})")));
        }
        Ok(Self { states, p })
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of transitions, one less than the number of states.
    pub fn transitions(&self) -> usize {
        self.states.len() - 1
    }
}

/// Transition counts `n_ij` with row totals `n_i` and grand total `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionCounts {
    p: usize,
    counts: Vec<u64>,
    row_totals: Vec<u64>,
    total: u64,
}

impl TransitionCounts {
    pub fn zeros(p: usize) -> Self {
        Self { p, counts: vec![0; p * p], row_totals: vec![0; p], total: 0 }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let p = rows.len();
        if p == 0 || rows.iter().any(|r| r.len() != p) {
            return Err(invalid("count matrix must be square and nonempty"));
        }
        let mut c = Self::zeros(p);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                c.add(i, j, v);
            }
        }
        Ok(c)
    }

    /// Counts the given `(from, to)` pairs.
    pub fn from_transitions(p: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut c = Self::zeros(p);
        for (i, j) in pairs {
            c.add(i, j, 1);
        }
        c
    }

    pub(crate) fn add(&mut self, i: usize, j: usize, v: u64) {
        self.counts[i * self.p + j] += v;
        self.row_totals[i] += v;
        self.total += v;
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.p + j]
    }

    pub fn row_totals(&self) -> &[u64] {
        &self.row_totals
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.p).map(|r| r.to_vec()).collect()
    }

    /// The matrix of empirical frequencies `n_ij / n`.
    pub fn frequencies(&self) -> DMatrix<f64> {
        let n = self.total.max(1) as f64;
        DMatrix::from_fn(self.p, self.p, |i, j| self.get(i, j) as f64 / n)
    }

    /// Whether `(i, j)` belongs to the observed support `n_ij > 0`.
    pub fn observed(&self, i: usize, j: usize) -> bool {
        self.get(i, j) > 0
    }
}

/// Stationary distribution with its extreme entries.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pi: DVector<f64>,
    pi_min: f64,
    pi_max: f64,
}

impl StationaryDistribution {
    pub fn new(pi: DVector<f64>) -> Result<Self> {
        if pi.is_empty() || pi.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(invalid("stationary distribution must be a nonnegative vector"));
        }
        let sum = pi.sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(invalid(format!("stationary distribution sums to {sum}")));
        }
        let pi_min = pi.min();
        let pi_max = pi.max();
        Ok(Self { pi, pi_min, pi_max })
    }

    pub fn uniform(p: usize) -> Self {
        let v = 1.0 / p as f64;
        Self { pi: DVector::from_element(p, v), pi_min: v, pi_max: v }
    }

    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    pub fn pi_min(&self) -> f64 {
        self.pi_min
    }

    pub fn pi_max(&self) -> f64 {
        self.pi_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralGapReport {
    pub rho_plus: f64,
    pub gap: f64,
    pub reversible: bool,
}

/// Counts consecutive pairs of the trajectory.
pub fn count_transitions(traj: &Trajectory) -> TransitionCounts {
    TransitionCounts::from_transitions(traj.p(), traj.states().windows(2).map(|w| (w[0], w[1])))
}

/// Per-row frequencies; rows that were never left get the uniform row `1/p`.
pub fn empirical_estimator(c: &TransitionCounts) -> TransitionMatrix {
    let p = c.p();
    let entries = DMatrix::from_fn(p, p, |i, j| match c.row_totals()[i] {
        0 => 1.0 / p as f64,
        ni => c.get(i, j) as f64 / ni as f64,
    });
    TransitionMatrix { entries }
}

/// Averaged negative log-likelihood `-(1/n) sum n_ij log Q_ij`.
pub fn neg_log_likelihood(q: &DMatrix<f64>, c: &TransitionCounts) -> Result<f64> {
    check_dims(q, c.p())?;
    if c.total() == 0 {
        return Err(invalid("likelihood needs at least one transition"));
    }
    let mut acc = 0.0;
    for i in 0..c.p() {
        for j in 0..c.p() {
            let nij = c.get(i, j);
            if nij == 0 {
                continue;
            }
            let qij = q[(i, j)];
            if qij <= 0.0 {
                return Err(Error::Domain(format!("Q[{i},{j}] = {qij} but {nij} transitions were observed")));
            }
            acc += nij as f64 * qij.ln();
        }
    }
    Ok(-acc / c.total() as f64)
}

/// `D_KL(P, Q) = sum_ij pi_i P_ij log(P_ij / Q_ij)` over the support of `P`.
pub fn kl_divergence(p: &TransitionMatrix, pi: &StationaryDistribution, q: &DMatrix<f64>) -> Result<f64> {
    let dim = p.p();
    check_dims(q, dim)?;
    if pi.pi().len() != dim {
        return Err(invalid("stationary distribution length does not match P"));
    }
    let mut acc = 0.0;
    for i in 0..dim {
        let w = pi.pi()[i];
        for j in 0..dim {
            let pij = p.get(i, j);
            if pij == 0.0 {
                continue;
            }
            let qij = q[(i, j)];
            if qij <= 0.0 {
                return Err(Error::Domain(format!("Q[{i},{j}] = {qij} where P[{i},{j}] = {pij}")));
            }
            acc += w * pij * (pij / qij).ln();
        }
    }
    Ok(acc)
}

/// `D_KL(u, v) = sum_j u_j log(u_j / v_j)` between two distributions.
pub fn row_kl(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(invalid("distributions have different lengths"));
    }
    let mut acc = 0.0;
    for (j, (&a, &b)) in u.iter().zip(v).enumerate() {
        if a == 0.0 {
            continue;
        }
        if b <= 0.0 {
            return Err(Error::Domain(format!("v[{j}] = {b} where u[{j}] = {a}")));
        }
        acc += a * (a / b).ln();
    }
    Ok(acc)
}

/// Constant `k` of `D_KL(u, v) >= k ||u - v||^2` for distributions on `p`
/// points whose entries lie in `[alpha / p, beta / p]`.
pub fn kl_converter_constant(p: usize, alpha: f64, beta: f64) -> f64 {
    p as f64 * alpha / (2.0 * beta * beta)
}

/// KL divergence against the smoothed estimate `(1 - eps) Q + eps / p`.
pub fn kl_divergence_smoothed(
    p: &TransitionMatrix,
    pi: &StationaryDistribution,
    q: &DMatrix<f64>,
    eps: f64,
) -> Result<f64> {
    kl_divergence(p, pi, &smooth(q, eps))
}

/// Mixes `Q` with the uniform matrix so every entry is at least `eps / p`.
pub fn smooth(q: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let floor = eps / q.ncols() as f64;
    q.map(|v| (1.0 - eps) * v + floor)
}

/// Stationary distribution by power iteration on `P^T`.
///
/// Iterates the lazy chain `(I + P) / 2`, which has the same stationary
/// distribution but no periodicity, and stops once `||pi^T P - pi^T||_1 <= tol`.
/// Reducible chains are rejected up front because their stationary
/// distribution is not unique.
pub fn stationary_distribution(p: &TransitionMatrix, tol: f64, max_iter: usize) -> Result<StationaryDistribution> {
    if tol <= 0.0 {
        return Err(invalid("tolerance must be positive"));
    }
    let dim = p.p();
    if !is_irreducible(p.matrix()) {
        return Err(Error::Convergence {
            message: "chain is reducible, stationary distribution is not unique".into(),
            iterations: 0,
            residual: f64::INFINITY,
            report: None,
        });
    }
    let pt = p.matrix().transpose();
    let mut pi = DVector::from_element(dim, 1.0 / dim as f64);
    let mut residual = f64::INFINITY;
    for iter in 0..max_iter {
        let next = &pt * &pi;
        residual = (&next - &pi).lp_norm(1);
        if residual <= tol {
            let s = next.sum();
            return StationaryDistribution::new(next / s);
        }
        pi = (&next + &pi) * 0.5;
        let s = pi.sum();
        pi /= s;
        if iter + 1 == max_iter {
            break;
        }
    }
    Err(Error::Convergence {
        message: "power iteration for the stationary distribution".into(),
        iterations: max_iter,
        residual,
        report: None,
    })
}

/// Strong connectivity of the directed graph with an edge wherever `P_ij > 0`.
fn is_irreducible(m: &DMatrix<f64>) -> bool {
    let p = m.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; p];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..p {
                let w = if forward { m[(i, j)] } else { m[(j, i)] };
                if w > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Right L2(pi) spectral gap of `P` through its additive reversibilization.
///
/// With `A = diag(pi)^{1/2} P diag(pi)^{-1/2}`, the operator `(P + P*) / 2` on
/// L2(pi) is similar to the symmetric matrix `(A + A^T) / 2`, whose top
/// eigenvector is `sqrt(pi)`. `rho_plus` is the largest eigenvalue once that
/// direction is removed.
pub fn spectral_gap(p: &TransitionMatrix, pi: &StationaryDistribution) -> Result<SpectralGapReport> {
    let dim = p.p();
    if pi.pi().len() != dim {
        return Err(invalid("stationary distribution length does not match P"));
    }
    if pi.pi().iter().any(|&v| v <= 0.0) {
        return Err(invalid("spectral gap needs a strictly positive stationary distribution"));
    }
    if dim < 2 {
        return Err(invalid("spectral gap needs at least two states"));
    }
    let sq = pi.pi().map(f64::sqrt);
    let a = DMatrix::from_fn(dim, dim, |i, j| sq[i] * p.get(i, j) / sq[j]);
    let s = (&a + a.transpose()) * 0.5;
    let eig = s.symmetric_eigen();
    let top = (0..dim)
        .max_by(|&x, &y| {
            let ax = eig.eigenvectors.column(x).dot(&sq).abs();
            let ay = eig.eigenvectors.column(y).dot(&sq).abs();
            ax.total_cmp(&ay)
        })
        .expect("dim >= 2");
    let rho_plus = (0..dim).filter(|&k| k != top).map(|k| eig.eigenvalues[k]).fold(f64::NEG_INFINITY, f64::max);

    let mut reversible = true;
    'outer: for i in 0..dim {
        for j in (i + 1)..dim {
            if (pi.pi()[i] * p.get(i, j) - pi.pi()[j] * p.get(j, i)).abs() > 1e-10 {
                reversible = false;
                break 'outer;
            }
        }
    }
    Ok(SpectralGapReport { rho_plus, gap: 1.0 - rho_plus, reversible })
}

/// How `X_0` is drawn in [`simulate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialState {
    Stationary,
    Fixed(usize),
    Uniform,
}

/// Simulates `n` steps of the chain, returning `n + 1` states.
///
/// Each step draws `u ~ U[0, 1)` from the seeded ChaCha8 stream and returns the
/// first state whose cumulative row probability exceeds `u`.
pub fn simulate(p: &TransitionMatrix, n: usize, seed: u64, init: InitialState) -> Result<Trajectory> {
    if n == 0 {
        return Err(invalid("trajectory length must be at least 1"));
    }
    let dim = p.p();
    let mut rng = seeded_rng(seed, streams::SIMULATE);
    let x0 = match init {
        InitialState::Fixed(s) if s < dim => s,
        InitialState::Fixed(s) => return Err(invalid(format!("initial state {s} out of range"))),
        InitialState::Uniform => rng.random_range(0..dim),
        InitialState::Stationary => {
            let pi = stationary_distribution(p, 1e-12, 1_000_000)?;
            sample_cdf(&cumulative(pi.pi().iter().copied()), rng.random::<f64>())
        }
    };
    let cdfs: Vec<Vec<f64>> = (0..dim).map(|i| cumulative(p.matrix().row(i).iter().copied())).collect();
    let mut states = Vec::with_capacity(n + 1);
    states.push(x0);
    let mut cur = x0;
    for _ in 0..n {
        cur = sample_cdf(&cdfs[cur], rng.random::<f64>());
        states.push(cur);
    }
    Trajectory::new(states, dim)
}

fn cumulative(probs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    probs
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

fn sample_cdf(cdf: &[f64], u: f64) -> usize {
    let k = cdf.partition_point(|&c| c <= u);
    if k < cdf.len() {
        return k;
    }
    // u landed above the rounded total; take the last state with mass
    let mut last = cdf.len() - 1;
    while last > 0 && cdf[last] == cdf[last - 1] {
        last -= 1;
    }
    last
}

fn check_dims(q: &DMatrix<f64>, p: usize) -> Result<()> {
    if q.nrows() != p || q.ncols() != p {
        return Err(invalid(format!("expected a {p}x{p} matrix, got {}x{}", q.nrows(), q.ncols())));
    }
    Ok(())
}
