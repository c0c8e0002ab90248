//! Estimation error metrics.

use crate::chain::{kl_divergence, kl_divergence_smoothed, StationaryDistribution, TransitionMatrix};
use crate::error::{invalid, Error, Result};
use crate::matops::{sin_theta_frob, truncated_svd};

/// Smoothing weight of the labeled `eta_kl_smoothed` value.
pub const KL_SMOOTHING: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricTriple {
    /// `||P - Phat||_F^2`.
    pub eta_f: f64,
    /// `D_KL(P, Phat)`; `+inf` when `Phat` vanishes where `P` does not.
    pub eta_kl: f64,
    /// `D_KL(P, (1 - eps) Phat + eps / p)` with `eps = KL_SMOOTHING`.
    pub eta_kl_smoothed: f64,
    /// Larger squared `sin Theta` distance of the rank-`r` left and right subspaces.
    pub eta_uv: f64,
}

pub fn metrics(
    p: &TransitionMatrix,
    pi: &StationaryDistribution,
    phat: &TransitionMatrix,
    r: usize,
) -> Result<MetricTriple> {
    let dim = p.p();
    if phat.p() != dim || pi.pi().len() != dim {
        return Err(invalid(format!(
            "dimension mismatch: P is {dim}x{dim}, Phat is {0}x{0}, pi has {1} entries",
            phat.p(),
            pi.pi().len()
        )));
    }
    let eta_f = (p.matrix() - phat.matrix()).norm_squared();
    let eta_kl = match kl_divergence(p, pi, phat.matrix()) {
        Ok(v) => v,
        Err(Error::Domain(_)) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    let eta_kl_smoothed = kl_divergence_smoothed(p, pi, phat.matrix(), KL_SMOOTHING)?;
    let a = truncated_svd(p.matrix(), r)?;
    let b = truncated_svd(phat.matrix(), r)?;
    let su = sin_theta_frob(&a.u, &b.u)?;
    let sv = sin_theta_frob(&a.v, &b.v)?;
    Ok(MetricTriple { eta_f, eta_kl, eta_kl_smoothed, eta_uv: (su * su).max(sv * sv) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::stationary_distribution;
    use crate::synth::{random_lowrank, SynthConfig};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn tm(rows: &[&[f64]]) -> TransitionMatrix {
        TransitionMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn identical_estimate_scores_zero() {
        let p = random_lowrank(&SynthConfig::balanced(8, 2, 1)).unwrap();
        let pi = stationary_distribution(&p, 1e-13, 1_000_000).unwrap();
        let m = metrics(&p, &pi, &p, 2).unwrap();
        assert_eq!(m.eta_f, 0.0);
        assert!(m.eta_kl.abs() < 1e-12);
        assert!(m.eta_uv < 1e-10);
    }

    #[test]
    fn two_state_frobenius() {
        let p = tm(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let q = tm(&[&[0.6, 0.4], &[0.4, 0.6]]);
        let m = metrics(&p, &StationaryDistribution::uniform(2), &q, 1).unwrap();
        assert!((m.eta_f - 0.04).abs() < 1e-15);
    }

    #[test]
    fn shared_rank_one_subspaces() {
        let p = tm(&[&[0.3, 0.7], &[0.3, 0.7]]);
        let q = tm(&[&[0.3, 0.7], &[0.3, 0.7]]);
        assert!(metrics(&p, &StationaryDistribution::uniform(2), &q, 1).unwrap().eta_uv < 1e-12);
    }

    #[test]
    fn zero_on_support_gives_infinite_kl() {
        let p = tm(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let q = tm(&[&[1.0, 0.0], &[0.5, 0.5]]);
        let m = metrics(&p, &StationaryDistribution::uniform(2), &q, 1).unwrap();
        assert!(m.eta_kl.is_infinite());
        assert!(m.eta_kl_smoothed.is_finite() && m.eta_kl_smoothed > 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let p = tm(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let q = TransitionMatrix::uniform(3);
        assert!(matches!(metrics(&p, &StationaryDistribution::uniform(2), &q, 1), Err(Error::InvalidInput(_))));
    }

    fn permute(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(perm[i], perm[j])])
    }

    proptest! {
        #[test]
        fn permutation_covariance(seed in 0u64..200, shift in 1usize..6) {
            let p = random_lowrank(&SynthConfig::balanced(6, 2, seed)).unwrap();
            let q = random_lowrank(&SynthConfig::balanced(6, 2, seed + 1000)).unwrap();
            let pi = stationary_distribution(&p, 1e-13, 1_000_000).unwrap();
            let perm: Vec<usize> = (0..6).map(|i| (i + shift) % 6).collect();
            let pp = TransitionMatrix::new(permute(p.matrix(), &perm)).unwrap();
            let qp = TransitionMatrix::new(permute(q.matrix(), &perm)).unwrap();
            let pip = StationaryDistribution::new(nalgebra::DVector::from_fn(6, |i, _| pi.pi()[perm[i]])).unwrap();
            let a = metrics(&p, &pi, &q, 2).unwrap();
            let b = metrics(&pp, &pip, &qp, 2).unwrap();
            prop_assert!((a.eta_f - b.eta_f).abs() < 1e-12);
            prop_assert!((a.eta_kl - b.eta_kl).abs() < 1e-10);
            prop_assert!((a.eta_uv - b.eta_uv).abs() < 1e-8);
            prop_assert!(a.eta_uv >= 0.0 && a.eta_uv <= 2.0 + 1e-12);
        }
    }
}
