//! Truncated-SVD baseline: empirical estimator, rank-`r` truncation, then
//! Euclidean projection of every row onto the probability simplex.

use nalgebra::DMatrix;

use crate::chain::{empirical_estimator, TransitionCounts, TransitionMatrix};
use crate::error::{invalid, Result};
use crate::matops::{project_simplex, truncated_svd};

pub fn spectral_estimator(c: &TransitionCounts, r: usize) -> Result<TransitionMatrix> {
    let p = c.p();
    if r == 0 || r > p {
        return Err(invalid(format!("rank {r} must lie in [1, p = {p}]")));
    }
    let emp = empirical_estimator(c);
    if r == p {
        return Ok(emp);
    }
    let low = truncated_svd(emp.matrix(), r)?.reconstruct();
    let mut out = DMatrix::zeros(p, p);
    for i in 0..p {
        let row: Vec<f64> = low.row(i).iter().copied().collect();
        for (j, v) in project_simplex(&row).into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    TransitionMatrix::new(out)
}
