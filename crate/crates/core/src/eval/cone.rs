//! Restricted-cone check for the nuclear-norm estimate.
//!
//! With `M` the rank-`r` model subspace of `P` and `Delta = Phat - P`, the
//! error is expected to satisfy
//! `||Delta_{Mbar perp}||_* <= 3 ||Delta_{Mbar}||_* + 4 ||P_{M perp}||_*`
//! whenever `lambda >= 2 ||Pi_N(grad l_n(P))||_2`, where `Pi_N` removes row
//! means and `grad l_n(P)_ij = -(n_ij / n) / P_ij`.

use nalgebra::DMatrix;

use crate::chain::{TransitionCounts, TransitionMatrix};
use crate::error::{invalid, Error, Result};
use crate::matops::{model_subspace_decompose, nuclear_norm, project_centering, singular_values, truncated_svd};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeReport {
    /// `lambda >= 2 grad_norm`.
    pub triggered: bool,
    /// `lhs <= rhs`.
    pub inequality: bool,
    /// The trigger implies the inequality.
    pub holds: bool,
    /// `||Delta_{Mbar perp}||_*`.
    pub lhs: f64,
    /// `3 ||Delta_{Mbar}||_* + 4 ||P_{M perp}||_*`.
    pub rhs: f64,
    pub grad_norm: f64,
    /// `||Delta_{Mbar}||_*`.
    pub mbar_nuclear: f64,
    /// `||P_{M perp}||_*`, zero when `P` has rank at most `r`.
    pub tail_nuclear: f64,
    pub delta_nuclear: f64,
    pub delta_frobenius: f64,
}

/// `grad l_n(P)`: `-(n_ij / n) / P_ij` on observed entries, zero elsewhere.
pub fn likelihood_gradient(p: &TransitionMatrix, c: &TransitionCounts) -> Result<DMatrix<f64>> {
    let dim = p.p();
    if c.p() != dim {
        return Err(invalid("counts and matrix dimensions differ"));
    }
    if c.total() == 0 {
        return Err(invalid("gradient needs at least one transition"));
    }
    let n = c.total() as f64;
    let mut g = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            let nij = c.get(i, j);
            if nij > 0 {
                let v = p.get(i, j);
                if v <= 0.0 {
                    return Err(Error::Domain(format!("P[{i},{j}] = 0 on an observed transition")));
                }
                g[(i, j)] = -(nij as f64 / n) / v;
            }
        }
    }
    Ok(g)
}

pub fn cone_diagnostic(
    p: &TransitionMatrix,
    phat: &DMatrix<f64>,
    c: &TransitionCounts,
    lambda: f64,
    r: usize,
) -> Result<ConeReport> {
    let dim = p.p();
    if phat.shape() != (dim, dim) {
        return Err(invalid("estimate and truth dimensions differ"));
    }
    let grad = likelihood_gradient(p, c)?;
    let grad_norm = singular_values(&project_centering(&grad))[0];
    let basis = truncated_svd(p.matrix(), r)?.subspaces();
    let delta = phat - p.matrix();
    let dec = model_subspace_decompose(&delta, &basis)?;
    let p_model = model_subspace_decompose(p.matrix(), &basis)?.m;
    let tail_nuclear = nuclear_norm(&(p.matrix() - p_model));
    let mbar_nuclear = nuclear_norm(&dec.mbar);
    let lhs = nuclear_norm(&dec.mbar_perp);
    let rhs = 3.0 * mbar_nuclear + 4.0 * tail_nuclear;
    let triggered = lambda >= 2.0 * grad_norm;
    let inequality = lhs <= rhs;
    Ok(ConeReport {
        triggered,
        inequality,
        holds: !triggered || inequality,
        lhs,
        rhs,
        grad_norm,
        mbar_nuclear,
        tail_nuclear,
        delta_nuclear: nuclear_norm(&delta),
        delta_frobenius: delta.norm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admm::{nuclear_estimate, AdmmOptions};
    use crate::chain::{count_transitions, simulate, InitialState};
    use crate::synth::{random_lowrank, SynthConfig};

    fn setup(seed: u64) -> (TransitionMatrix, TransitionCounts) {
        let p = random_lowrank(&SynthConfig::balanced(10, 2, seed)).unwrap();
        let traj = simulate(&p, 3000, seed, InitialState::Stationary).unwrap();
        (p, count_transitions(&traj))
    }

    #[test]
    fn exact_estimate_has_zero_lhs() {
        let (p, c) = setup(1);
        let rep = cone_diagnostic(&p, p.matrix(), &c, 1.0, 2).unwrap();
        assert!(rep.lhs < 1e-12);
        assert!(rep.holds && rep.inequality);
    }

    #[test]
    fn low_rank_truth_has_no_tail_term() {
        let (p, c) = setup(2);
        let phat = crate::chain::empirical_estimator(&c);
        let rep = cone_diagnostic(&p, phat.matrix(), &c, 0.0, 2).unwrap();
        assert!(rep.tail_nuclear < 1e-10);
        assert!((rep.rhs - 3.0 * rep.mbar_nuclear).abs() < 1e-9);
        assert!(!rep.triggered && rep.holds);
    }

    #[test]
    fn gradient_rejects_zero_on_support() {
        let p = TransitionMatrix::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let c = TransitionCounts::from_rows(&[vec![1, 1], vec![1, 1]]).unwrap();
        assert!(matches!(likelihood_gradient(&p, &c), Err(Error::Domain(_))));
    }

    #[test]
    fn triangle_and_cone_converter() {
        for seed in 0..3 {
            let (p, c) = setup(seed);
            let g = cone_diagnostic(&p, p.matrix(), &c, 0.0, 2).unwrap().grad_norm;
            let lambda = 2.5 * g;
            let est = nuclear_estimate(&c, lambda, &AdmmOptions::default()).unwrap();
            let rep = cone_diagnostic(&p, est.completion.matrix.matrix(), &c, lambda, 2).unwrap();
            assert!(rep.triggered);
            assert!(rep.delta_nuclear <= rep.mbar_nuclear + rep.lhs + 1e-10);
            if rep.inequality {
                assert!(rep.delta_nuclear <= 4.0 * (4.0f64).sqrt() * rep.delta_frobenius + 1e-10);
            }
        }
    }
}
