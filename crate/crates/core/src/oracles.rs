//! Slow reference solvers for cross-checking the production algorithms on
//! small instances.
//!
//! The primal problem `g(X) + c ||X||_*` over the row-stochastic matrices is
//! attacked directly: the nuclear norm is replaced by its Huber smoothing
//! `sum_k h_mu(sigma_k)`, and the smoothed problem is minimized by accelerated
//! projected gradient with backtracking while `mu` is driven towards zero.
//! Entries in the observed support are kept above a tiny floor so that the
//! log-likelihood stays finite along the path.

use nalgebra::DMatrix;

use crate::admm::NuclearProblem;
use crate::error::{invalid, Result};
use crate::matops::{project_simplex, svd};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceOptions {
    pub mu_start: f64,
    pub mu_end: f64,
    pub mu_factor: f64,
    pub max_iter: usize,
    /// A stage ends when an accepted step moves the iterate less than this.
    pub step_tol: f64,
    /// Lower bound on entries in the observed support.
    pub floor: f64,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self { mu_start: 1e-2, mu_end: 1e-8, mu_factor: 0.1, max_iter: 20_000, step_tol: 1e-12, floor: 1e-12 }
    }
}

struct Smoothed<'a> {
    prob: &'a NuclearProblem,
    mu: f64,
}

impl Smoothed<'_> {
    fn huber(&self, s: f64) -> f64 {
        if s <= self.mu {
            s * s / (2.0 * self.mu)
        } else {
            s - self.mu / 2.0
        }
    }

    fn value_and_grad(&self, x: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let loss = self.prob.loss();
        let dec = svd(x)?;
        let value = loss.value(x) + self.prob.lambda() * dec.sigma.iter().map(|&s| self.huber(s)).sum::<f64>();
        let mut us = dec.u.clone();
        for (k, &s) in dec.sigma.iter().enumerate() {
            us.column_mut(k).scale_mut((s / self.mu).min(1.0));
        }
        let mut grad = us * dec.v.transpose() * self.prob.lambda();
        let w = loss.weights();
        for k in 0..grad.len() {
            if w[k] > 0.0 {
                grad[k] -= w[k] / x[k];
            }
            grad[k] += loss.linear().map_or(0.0, |l| l[k]) + loss.quad() * x[k];
        }
        Ok((value, grad))
    }

    fn value(&self, x: &DMatrix<f64>) -> Result<f64> {
        let dec = svd(x)?;
        Ok(self.prob.loss().value(x) + self.prob.lambda() * dec.sigma.iter().map(|&s| self.huber(s)).sum::<f64>())
    }
}

/// Projection onto `{X 1 = 1, X >= L}` with `L` the support floor.
fn project(v: &DMatrix<f64>, prob: &NuclearProblem, floor: f64) -> DMatrix<f64> {
    let p = prob.p();
    let mut out = DMatrix::zeros(p, p);
    for i in 0..p {
        let lb: Vec<f64> = (0..p).map(|j| if prob.in_omega(i, j) { floor } else { 0.0 }).collect();
        let mass = 1.0 - lb.iter().sum::<f64>();
        let shifted: Vec<f64> = (0..p).map(|j| (v[(i, j)] - lb[j]) / mass).collect();
        for (j, z) in project_simplex(&shifted).into_iter().enumerate() {
            out[(i, j)] = lb[j] + mass * z;
        }
    }
    out
}

/// Reference minimizer of `prob` over the row-stochastic matrices.
pub fn reference_nuclear(prob: &NuclearProblem, opts: &ReferenceOptions) -> Result<DMatrix<f64>> {
    let p = prob.p();
    if !(opts.mu_end > 0.0 && opts.mu_start >= opts.mu_end && opts.mu_factor > 0.0 && opts.mu_factor < 1.0) {
        return Err(invalid("smoothing schedule must decrease from mu_start to a positive mu_end"));
    }
    if !(opts.floor > 0.0 && opts.floor * p as f64 <= 0.5) {
        return Err(invalid("support floor must be positive and small"));
    }
    let mut x = project(&DMatrix::from_element(p, p, 1.0 / p as f64), prob, opts.floor);
    let mut mu = opts.mu_start;
    loop {
        x = fista_stage(&Smoothed { prob, mu }, x, opts)?;
        if mu <= opts.mu_end {
            return Ok(x);
        }
        mu = (mu * opts.mu_factor).max(opts.mu_end);
    }
}

fn fista_stage(f: &Smoothed<'_>, x0: DMatrix<f64>, opts: &ReferenceOptions) -> Result<DMatrix<f64>> {
    let mut x = x0;
    let mut fx = f.value(&x)?;
    let mut y = x.clone();
    let mut t: f64 = 1.0;
    let mut step = 1.0;
    for _ in 0..opts.max_iter {
        let (fy, gy) = f.value_and_grad(&y)?;
        let (next, fnext) = loop {
            let cand = project(&(&y - &gy * step), f.prob, opts.floor);
            let d = &cand - &y;
            let fc = f.value(&cand)?;
            if fc <= fy + gy.dot(&d) + d.norm_squared() / (2.0 * step) + 1e-15 * fy.abs() {
                break (cand, fc);
            }
            step *= 0.5;
            if step < 1e-30 {
                return Ok(x);
            }
        };
        let moved = (&next - &x).norm();
        if fnext > fx {
            // Adaptive restart: drop the momentum and retry from x.
            y = x.clone();
            t = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &x) * ((t - 1.0) / t_next);
        t = t_next;
        x = next;
        fx = fnext;
        step *= 1.2;
        if moved < opts.step_tol {
            break;
        }
    }
    Ok(x)
}
