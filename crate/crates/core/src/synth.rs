//! Random low-rank ground-truth transition matrices.

use nalgebra::DMatrix;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::chain::TransitionMatrix;
use crate::error::{invalid, Result};
use crate::rng::{seeded_rng, streams, ChainRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub p: usize,
    pub r: usize,
    pub seed: u64,
    /// Beta shape parameters `(gamma1, gamma2)` of the column scaling.
    pub imbalance: Option<(f64, f64)>,
}

impl SynthConfig {
    pub fn balanced(p: usize, r: usize, seed: u64) -> Self {
        Self { p, r, seed, imbalance: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || self.r > self.p {
            return Err(invalid(format!("rank {} must lie in [1, p = {}]", self.r, self.p)));
        }
        if let Some((g1, g2)) = self.imbalance {
            if !(g1 > 0.0 && g2 > 0.0 && g1.is_finite() && g2.is_finite()) {
                return Err(invalid(format!("beta parameters ({g1}, {g2}) must be positive")));
            }
        }
        Ok(())
    }
}

/// Draws the balanced or imbalanced matrix according to `cfg.imbalance`.
pub fn generate(cfg: &SynthConfig) -> Result<TransitionMatrix> {
    match cfg.imbalance {
        None => random_lowrank(cfg),
        Some(_) => random_lowrank_imbalanced(cfg),
    }
}

/// `P = U V^T` where the rows of `U` and the columns of `V` are squared,
/// normalized Gaussian vectors, so both lie on the simplex.
pub fn random_lowrank(cfg: &SynthConfig) -> Result<TransitionMatrix> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed, streams::SYNTH);
    let (u, v) = simplex_factors(cfg.p, cfg.r, &mut rng);
    TransitionMatrix::new(normalize_rows(u * v.transpose()))
}

/// `U V^T D` with `D_jj ~ Beta(gamma1, gamma2)`, then row-normalized.
pub fn random_lowrank_imbalanced(cfg: &SynthConfig) -> Result<TransitionMatrix> {
    cfg.validate()?;
    let (g1, g2) = cfg.imbalance.ok_or_else(|| invalid("imbalanced generation needs beta parameters"))?;
    let beta = Beta::new(g1, g2).map_err(|e| invalid(format!("beta distribution: {e}")))?;
    let mut rng = seeded_rng(cfg.seed, streams::SYNTH);
    let (u, v) = simplex_factors(cfg.p, cfg.r, &mut rng);
    let d: Vec<f64> = (0..cfg.p)
        .map(|_| loop {
            let x: f64 = beta.sample(&mut rng);
            if x > 0.0 {
                break x;
            }
        })
        .collect();
    scaled_lowrank(u * v.transpose(), &d)
}

/// Scales column `j` of the row-stochastic `base` by `d[j]` and renormalizes rows.
pub fn scaled_lowrank(base: DMatrix<f64>, d: &[f64]) -> Result<TransitionMatrix> {
    if d.len() != base.ncols() || d.iter().any(|&x| !(x > 0.0)) {
        return Err(invalid("column scales must be positive, one per column"));
    }
    let mut m = base;
    for (j, &dj) in d.iter().enumerate() {
        m.column_mut(j).scale_mut(dj);
    }
    TransitionMatrix::new(normalize_rows(m))
}

fn simplex_factors(p: usize, r: usize, rng: &mut ChainRng) -> (DMatrix<f64>, DMatrix<f64>) {
    let u0 = gaussian_nonzero_rows(p, r, rng);
    let v0 = gaussian_nonzero_cols(p, r, rng);
    let mut u = u0.map(|x| x * x);
    for mut row in u.row_iter_mut() {
        let s = row.sum();
        row.scale_mut(1.0 / s);
    }
    let mut v = v0.map(|x| x * x);
    for mut col in v.column_iter_mut() {
        let s = col.sum();
        col.scale_mut(1.0 / s);
    }
    (u, v)
}

fn gaussian_nonzero_rows(p: usize, r: usize, rng: &mut ChainRng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(p, r);
    for i in 0..p {
        loop {
            for k in 0..r {
                m[(i, k)] = StandardNormal.sample(rng);
            }
            if m.row(i).norm_squared() > 0.0 {
                break;
            }
        }
    }
    m
}

fn gaussian_nonzero_cols(p: usize, r: usize, rng: &mut ChainRng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(p, r);
    for k in 0..r {
        loop {
            for i in 0..p {
                m[(i, k)] = StandardNormal.sample(rng);
            }
            if m.column(k).norm_squared() > 0.0 {
                break;
            }
        }
    }
    m
}

/// A probability vector on `p` points with every entry in `[alpha / p, beta / p]`.
///
/// Entries are drawn uniformly from the band and the sum is then corrected by
/// moving each entry towards the violated side in proportion to its headroom.
pub fn bounded_distribution<R: rand::Rng + ?Sized>(p: usize, alpha: f64, beta: f64, rng: &mut R) -> Result<Vec<f64>> {
    if p == 0 || !(0.0 <= alpha && alpha <= 1.0 && 1.0 <= beta && beta.is_finite()) {
        return Err(invalid(format!("need p >= 1 and 0 <= alpha <= 1 <= beta, got p={p}, alpha={alpha}, beta={beta}")));
    }
    let (lo, hi) = (alpha / p as f64, beta / p as f64);
    let mut u: Vec<f64> = (0..p).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
    let deficit = 1.0 - u.iter().sum::<f64>();
    let room: Vec<f64> = u.iter().map(|&x| if deficit > 0.0 { hi - x } else { x - lo }).collect();
    let total: f64 = room.iter().sum();
    if total > 0.0 {
        for (x, r) in u.iter_mut().zip(&room) {
            *x = (*x + deficit * r / total).clamp(lo, hi);
        }
    }
    Ok(u)
}

/// Divides each row by its sum; clears the rounding left by the factor product.
fn normalize_rows(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for mut row in m.row_iter_mut() {
        let s = row.sum();
        row.scale_mut(1.0 / s);
    }
    m
}
