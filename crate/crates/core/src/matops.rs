//! Matrix primitives shared by the solvers: SVD with a fixed sign convention,
//! nuclear and Ky Fan norms, spectral clipping, subspace distances and the
//! model-subspace decomposition.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};

/// Singular values closer than this are treated as tied.
pub const TIE_TOL: f64 = 1e-10;

/// Thin SVD `M = U diag(sigma) V^T` with `sigma` nonincreasing.
///
/// The sign of each singular pair is fixed so that the largest-magnitude
/// entry of each left singular vector is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `U diag(sigma) V^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (k, s) in self.sigma.iter().enumerate() {
            us.column_mut(k).scale_mut(*s);
        }
        us * self.v.transpose()
    }

    /// Keeps the leading `r` triplets.
    pub fn truncate(mut self, r: usize) -> Self {
        let r = r.min(self.sigma.len());
        self.u = self.u.columns(0, r).into_owned();
        self.v = self.v.columns(0, r).into_owned();
        self.sigma = self.sigma.rows(0, r).into_owned();
        self
    }

    pub fn subspaces(&self) -> SubspacePair {
        SubspacePair { u: self.u.clone(), v: self.v.clone() }
    }
}

/// Full SVD of a finite matrix.
pub fn svd(m: &DMatrix<f64>) -> Result<SvdResult> {
    check_finite(m)?;
    Ok(svd_unchecked(m))
}

/// Factors accepted from the LAPACK-style backend must reproduce `M` and be
/// orthonormal to within this multiple of `(1 + ||M||_F)`.
const SVD_CHECK_TOL: f64 = 1e-10;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Unordered `(U, sigma, V^T)`. The nalgebra result is verified and replaced by
/// a one-sided Jacobi decomposition when it is inaccurate, which happens on some
/// exactly rank-deficient inputs with repeated singular values.
fn raw_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let dec = m.clone().svd_unordered(true, true);
    let u = dec.u.expect("left vectors requested");
    let vt = dec.v_t.expect("right vectors requested");
    let s = dec.singular_values;
    if svd_is_accurate(m, &u, &s, &vt) {
        return (u, s, vt);
    }
    let (u, s, v) = jacobi_svd(m);
    (u, s, v.transpose())
}

fn svd_is_accurate(m: &DMatrix<f64>, u: &DMatrix<f64>, s: &DVector<f64>, vt: &DMatrix<f64>) -> bool {
    let tol = SVD_CHECK_TOL * (1.0 + m.norm());
    if s.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return false;
    }
    let mut us = u.clone();
    for (k, x) in s.iter().enumerate() {
        us.column_mut(k).scale_mut(*x);
    }
    let k = s.len();
    let eye = DMatrix::<f64>::identity(k, k);
    (us * vt - m).norm() <= tol
        && (u.transpose() * u - &eye).norm() <= tol
        && (vt * vt.transpose() - &eye).norm() <= tol
}

/// One-sided Jacobi SVD of a square or tall matrix; wide inputs are transposed.
fn jacobi_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    if m.nrows() < m.ncols() {
        let (u, s, v) = jacobi_svd(&m.transpose());
        return (v, s, u);
    }
    let n = m.ncols();
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let alpha = a.column(i).norm_squared();
                let beta = a.column(j).norm_squared();
                let gamma = a.column(i).dot(&a.column(j));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut a, &mut v] {
                    for r in 0..mat.nrows() {
                        let (x, y) = (mat[(r, i)], mat[(r, j)]);
                        mat[(r, i)] = c * x - s * y;
                        mat[(r, j)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sigma = DVector::zeros(n);
    let mut u = DMatrix::zeros(m.nrows(), n);
    let mut missing = Vec::new();
    for k in 0..n {
        let s = a.column(k).norm();
        sigma[k] = s;
        if s > 0.0 {
            u.column_mut(k).copy_from(&(a.column(k) / s));
        } else {
            missing.push(k);
        }
    }
    // Null directions of U: Gram-Schmidt on the standard basis.
    let mut filled: Vec<usize> = (0..n).filter(|k| !missing.contains(k)).collect();
    let mut e = 0;
    for k in missing {
        while e < m.nrows() {
            let mut cand = DVector::<f64>::zeros(m.nrows());
            cand[e] = 1.0;
            e += 1;
            for _ in 0..2 {
                for &f in &filled {
                    let d = u.column(f).dot(&cand);
                    cand -= u.column(f) * d;
                }
            }
            let nrm = cand.norm();
            if nrm > 1e-8 {
                u.column_mut(k).copy_from(&(cand / nrm));
                filled.push(k);
                break;
            }
        }
    }
    (u, sigma, v)
}

pub(crate) fn svd_unchecked(m: &DMatrix<f64>) -> SvdResult {
    let (u, s, vt) = raw_svd(m);
    let k = s.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));

    let mut uo = DMatrix::zeros(u.nrows(), k);
    let mut vo = DMatrix::zeros(vt.ncols(), k);
    let mut so = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        let ucol = u.column(src);
        let lead = ucol.iter().copied().fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        uo.column_mut(dst).copy_from(&(ucol * sign));
        vo.column_mut(dst).copy_from(&(vt.row(src).transpose() * sign));
        so[dst] = s[src].max(0.0);
    }
    SvdResult { u: uo, sigma: so, v: vo }
}

/// The singular triplets with `sigma > c`, in descending order, from the
/// eigendecomposition of `M^T M`. Cheaper than a full SVD when only the part
/// above a threshold is needed.
pub(crate) fn svd_above(m: &DMatrix<f64>, c: f64) -> SvdResult {
    let eig = (m.transpose() * m).symmetric_eigen();
    let c2 = c * c;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&k| eig.eigenvalues[k] > c2).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let k = order.len();
    let mut u = DMatrix::zeros(m.nrows(), k);
    let mut v = DMatrix::zeros(m.ncols(), k);
    let mut sigma = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        let vc = eig.eigenvectors.column(src);
        let mut uc = m * vc;
        let s = uc.norm();
        uc /= s;
        u.column_mut(dst).copy_from(&uc);
        v.column_mut(dst).copy_from(&vc);
        sigma[dst] = s;
    }
    SvdResult { u, sigma, v }
}

/// The leading `r` singular triplets.
///
/// Computed as a full SVD followed by truncation; the signature leaves room for
/// an iterative backend on larger problems.
pub fn truncated_svd(m: &DMatrix<f64>, r: usize) -> Result<SvdResult> {
    let p = m.nrows().min(m.ncols());
    if r == 0 || r > p {
        return Err(invalid(format!("truncation rank {r} outside [1, {p}]")));
    }
    Ok(svd(m)?.truncate(r))
}

/// Singular values in nonincreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    let mut s: Vec<f64> = raw_svd(m).1.iter().map(|v| v.max(0.0)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    DVector::from_vec(s)
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).sum()
}

/// Sum of the `r` largest singular values.
pub fn kyfan_norm(m: &DMatrix<f64>, r: usize) -> f64 {
    singular_values(m).iter().take(r).sum()
}

/// Count of singular values at least `tol_rel * sigma_1`.
pub fn numerical_rank(m: &DMatrix<f64>, tol_rel: f64) -> usize {
    rank_of(&singular_values(m), tol_rel)
}

pub(crate) fn rank_of(sigma: &DVector<f64>, tol_rel: f64) -> usize {
    let top = sigma.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sigma.iter().filter(|&&s| s >= tol_rel * top).count()
}

/// A Ky Fan subgradient `U_r V_r^T` and whether `sigma_r` ties with `sigma_{r+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct KyFanSubgradient {
    pub w: DMatrix<f64>,
    pub tie: bool,
}

pub fn kyfan_subgradient(m: &DMatrix<f64>, r: usize) -> Result<KyFanSubgradient> {
    let dec = svd(m)?;
    kyfan_subgradient_from(&dec, r)
}

pub fn kyfan_subgradient_from(dec: &SvdResult, r: usize) -> Result<KyFanSubgradient> {
    let k = dec.rank();
    if r == 0 || r > k {
        return Err(invalid(format!("Ky Fan order {r} outside [1, {k}]")));
    }
    let w = dec.u.columns(0, r) * dec.v.columns(0, r).transpose();
    let tie = r < k && dec.sigma[r - 1] - dec.sigma[r] <= TIE_TOL;
    Ok(KyFanSubgradient { w, tie })
}

/// Frobenius projection onto the spectral-norm ball of radius `c`.
pub fn clip_spectral(m: &DMatrix<f64>, c: f64) -> DMatrix<f64> {
    let mut dec = svd_unchecked(m);
    if dec.sigma.iter().all(|&s| s <= c) {
        return m.clone();
    }
    dec.sigma.apply(|s| *s = s.min(c));
    dec.reconstruct()
}

/// Pair of column-orthonormal bases.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspacePair {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl SubspacePair {
    pub fn new(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        if u.shape() != v.shape() {
            return Err(invalid("left and right bases must have the same shape"));
        }
        check_orthonormal(&u, 1e-8)?;
        check_orthonormal(&v, 1e-8)?;
        Ok(Self { u, v })
    }
}

/// `||sin Theta(A, B)||_F = sqrt(r - ||A^T B||_F^2)` for `p x r` orthonormal bases.
pub fn sin_theta_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(invalid("bases must have the same shape"));
    }
    check_orthonormal(a, 1e-6)?;
    check_orthonormal(b, 1e-6)?;
    let r = a.ncols() as f64;
    let overlap = (a.transpose() * b).norm_squared();
    Ok((r - overlap).max(0.0).sqrt())
}

/// `Q - Q 1 1^T / p`: removes each row's mean.
pub fn project_centering(q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = q.clone();
    let p = q.ncols() as f64;
    for mut row in out.row_iter_mut() {
        let mean = row.sum() / p;
        row.add_scalar_mut(-mean);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelDecomposition {
    /// `U U^T D V V^T`.
    pub m: DMatrix<f64>,
    /// Everything with a component in `span(U)` rows or `span(V)` columns.
    pub mbar: DMatrix<f64>,
    /// `(I - U U^T) D (I - V V^T)`.
    pub mbar_perp: DMatrix<f64>,
}

pub fn model_subspace_decompose(delta: &DMatrix<f64>, basis: &SubspacePair) -> Result<ModelDecomposition> {
    let p = delta.nrows();
    if basis.u.nrows() != p || basis.v.nrows() != delta.ncols() {
        return Err(invalid("basis dimension does not match the matrix"));
    }
    check_orthonormal(&basis.u, 1e-8)?;
    check_orthonormal(&basis.v, 1e-8)?;
    let pu = &basis.u * basis.u.transpose();
    let pv = &basis.v * basis.v.transpose();
    let m = &pu * delta * &pv;
    let left = delta - &pu * delta;
    let mbar_perp = &left - &left * &pv;
    let mbar = delta - &mbar_perp;
    Ok(ModelDecomposition { m, mbar, mbar_perp })
}

/// Euclidean projection of `v` onto the probability simplex (sort and threshold).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(invalid("matrix has non-finite entries"));
    }
    Ok(())
}

fn check_orthonormal(b: &DMatrix<f64>, tol: f64) -> Result<()> {
    let gram = b.transpose() * b;
    let k = gram.nrows();
    let dev = (gram - DMatrix::<f64>::identity(k, k)).abs().max();
    if dev > tol {
        return Err(invalid(format!("basis is not orthonormal (deviation {dev:.2e})")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn block_diagonal_with_repeated_values() {
        let m = DMatrix::from_fn(10, 10, |i, j| if (i < 5) == (j < 5) { 0.2 } else { 0.0 });
        let dec = svd(&m).unwrap();
        assert_abs_diff_eq!(dec.reconstruct(), m, epsilon = 1e-12);
        assert_abs_diff_eq!(dec.sigma[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dec.sigma[1], 1.0, epsilon = 1e-12);
        assert!(dec.sigma[2] < 1e-12);
        let eye = DMatrix::<f64>::identity(10, 10);
        assert_abs_diff_eq!(dec.u.transpose() * &dec.u, eye, epsilon = 1e-12);
        assert_abs_diff_eq!(nuclear_norm(&m), 2.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn jacobi_matches_definition(seed in 0u64..50, p in 1usize..7, q in 1usize..7) {
            let m = gaussian(p, q, seed);
            let (u, s, v) = jacobi_svd(&m);
            prop_assert!(svd_is_accurate(&m, &u, &s, &v.transpose()));
        }
    }

    fn gaussian(p: usize, q: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(p, q, |_, _| StandardNormal.sample(&mut rng))
    }

    fn diag(d: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(d))
    }

    #[test]
    fn svd_basic_cases() {
        let s = svd(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(s.sigma.as_slice(), &[1.0, 1.0, 1.0]);

        let s = svd(&diag(&[3.0, 2.0, 1.0])).unwrap();
        assert_eq!(s.sigma.as_slice(), &[3.0, 2.0, 1.0]);
        assert_abs_diff_eq!(s.u, DMatrix::identity(3, 3), epsilon = 1e-12);
        assert_abs_diff_eq!(s.v, DMatrix::identity(3, 3), epsilon = 1e-12);

        let u = DVector::from_vec(vec![0.6, 0.8, 0.0]);
        let v = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let s = svd(&(&u * v.transpose())).unwrap();
        assert_abs_diff_eq!(s.sigma[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.sigma[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.sigma[2], 0.0, epsilon = 1e-12);

        let mut bad = DMatrix::<f64>::zeros(2, 2);
        bad[(0, 1)] = f64::NAN;
        assert!(svd(&bad).is_err());
    }

    #[test]
    fn svd_reconstructs_and_is_orthonormal() {
        let m = gaussian(12, 12, 3);
        let s = svd(&m).unwrap();
        assert_abs_diff_eq!(s.reconstruct(), m, epsilon = 1e-10);
        assert_abs_diff_eq!(s.u.transpose() * &s.u, DMatrix::identity(12, 12), epsilon = 1e-10);
        assert_abs_diff_eq!(s.v.transpose() * &s.v, DMatrix::identity(12, 12), epsilon = 1e-10);
        assert!(s.sigma.as_slice().windows(2).all(|w| w[0] >= w[1]));
        for k in 0..12 {
            let lead = s.u.column(k).iter().copied().fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
            assert!(lead > 0.0);
        }
    }

    #[test]
    fn truncated_matches_leading_block() {
        let s = truncated_svd(&diag(&[3.0, 2.0, 1.0]), 2).unwrap();
        assert_eq!(s.sigma.as_slice(), &[3.0, 2.0]);

        let m = gaussian(20, 20, 11);
        let full = svd(&m).unwrap();
        let t = truncated_svd(&m, 5).unwrap();
        assert_abs_diff_eq!(t.sigma, full.sigma.rows(0, 5).into_owned(), epsilon = 1e-8);
        assert_abs_diff_eq!(t.u, full.u.columns(0, 5).into_owned(), epsilon = 1e-8);
        assert_abs_diff_eq!(t.v, full.v.columns(0, 5).into_owned(), epsilon = 1e-8);
        assert_eq!(truncated_svd(&m, 20).unwrap(), full);
        assert!(truncated_svd(&m, 0).is_err());
        assert!(truncated_svd(&m, 21).is_err());
    }

    #[test]
    fn norms() {
        assert_abs_diff_eq!(nuclear_norm(&DMatrix::identity(4, 4)), 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(nuclear_norm(&diag(&[3.0, 2.0, 1.0])), 6.0, epsilon = 1e-12);
        assert_eq!(nuclear_norm(&DMatrix::zeros(3, 3)), 0.0);
        assert_abs_diff_eq!(kyfan_norm(&diag(&[3.0, 2.0, 1.0]), 2), 5.0, epsilon = 1e-12);
        let m = gaussian(6, 6, 1);
        assert_abs_diff_eq!(kyfan_norm(&m, 6), nuclear_norm(&m), epsilon = 1e-12);
        let rank1 = DVector::from_vec(vec![1.0, 2.0]) * DVector::from_vec(vec![3.0, 1.0]).transpose();
        let s1 = singular_values(&rank1)[0];
        for r in 1..=2 {
            assert_abs_diff_eq!(kyfan_norm(&rank1, r), s1, epsilon = 1e-12);
        }
    }

    #[test]
    fn rank_counts() {
        assert_eq!(numerical_rank(&diag(&[3.0, 2.0, 1e-14]), 1e-8), 2);
        assert_eq!(numerical_rank(&DMatrix::identity(5, 5), 1e-8), 5);
        assert_eq!(numerical_rank(&DMatrix::zeros(4, 4), 1e-8), 0);
    }

    #[test]
    fn nuclear_minus_kyfan_vanishes_exactly_at_low_rank() {
        let a = gaussian(8, 2, 5);
        let b = gaussian(8, 2, 6);
        let low = &a * b.transpose();
        assert!(nuclear_norm(&low) - kyfan_norm(&low, 2) < 1e-10);
        assert!(nuclear_norm(&low) - kyfan_norm(&low, 1) > 1e-3);
        let full = gaussian(8, 8, 7);
        assert!(nuclear_norm(&full) - kyfan_norm(&full, 3) > 1e-3);
    }

    #[test]
    fn kyfan_subgradient_cases() {
        let g = kyfan_subgradient(&diag(&[3.0, 2.0, 1.0]), 1).unwrap();
        assert_abs_diff_eq!(g.w, diag(&[1.0, 0.0, 0.0]), epsilon = 1e-12);
        assert!(!g.tie);
        let g = kyfan_subgradient(&diag(&[3.0, 2.0, 1.0]), 3).unwrap();
        assert_abs_diff_eq!(g.w, DMatrix::identity(3, 3), epsilon = 1e-12);
        let g = kyfan_subgradient(&diag(&[2.0, 1.0, 1.0]), 2).unwrap();
        assert!(g.tie);
    }

    #[test]
    fn kyfan_subgradient_directional_derivative() {
        let m = gaussian(10, 10, 21);
        let g = kyfan_subgradient(&m, 3).unwrap();
        assert_abs_diff_eq!(g.w.dot(&m), kyfan_norm(&m, 3), epsilon = 1e-10);
        // the Ky Fan norm is differentiable at M with gradient W, so the
        // one-sided slope along W is <W, W> = r
        let base = kyfan_norm(&m, 3);
        for t in [1e-4, 1e-5] {
            let slope = (kyfan_norm(&(&m + &g.w * t), 3) - base) / t;
            assert_abs_diff_eq!(slope, g.w.norm_squared(), epsilon = 1e-3);
        }
        assert_abs_diff_eq!(g.w.norm_squared(), 3.0, epsilon = 1e-10);
    }

    #[test]
    fn clipping_cases() {
        assert_abs_diff_eq!(clip_spectral(&diag(&[3.0, 1.0]), 2.0), diag(&[2.0, 1.0]), epsilon = 1e-12);
        let m = diag(&[0.5, -0.25]);
        assert_eq!(clip_spectral(&m, 1.0), m);
        assert_eq!(clip_spectral(&DMatrix::zeros(3, 3), 0.7), DMatrix::zeros(3, 3));
        let c = clip_spectral(&gaussian(9, 9, 2), 0.5);
        assert!(singular_values(&c)[0] <= 0.5 + 1e-12);
    }

    #[test]
    fn sin_theta_cases() {
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert_eq!(sin_theta_frob(&e1, &e1).unwrap(), 0.0);
        assert_abs_diff_eq!(sin_theta_frob(&e1, &e2).unwrap(), 1.0, epsilon = 1e-12);
        let th = std::f64::consts::PI / 6.0;
        let b = DMatrix::from_column_slice(2, 1, &[th.cos(), th.sin()]);
        assert_abs_diff_eq!(sin_theta_frob(&e1, &b).unwrap(), 0.5, epsilon = 1e-12);
        let not_unit = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        assert!(sin_theta_frob(&e1, &not_unit).is_err());
    }

    #[test]
    fn centering_cases() {
        assert_eq!(project_centering(&DMatrix::zeros(3, 3)), DMatrix::zeros(3, 3));
        let c = project_centering(&DMatrix::identity(2, 2));
        assert_abs_diff_eq!(c, DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]), epsilon = 1e-15);
        let m = gaussian(5, 5, 9);
        let once = project_centering(&m);
        assert_abs_diff_eq!(project_centering(&once), once, epsilon = 1e-14);
    }

    #[test]
    fn decomposition_cases() {
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let basis = SubspacePair::new(e1.clone(), e1.clone()).unwrap();
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let dec = model_subspace_decompose(&d, &basis).unwrap();
        assert_eq!(dec.mbar_perp, d);
        assert_eq!(dec.m, DMatrix::zeros(2, 2));

        let s = svd(&gaussian(6, 6, 4)).unwrap().truncate(2);
        let inside = &s.u * DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]) * s.v.transpose();
        let dec = model_subspace_decompose(&inside, &s.subspaces()).unwrap();
        assert!(dec.mbar_perp.norm() < 1e-12);
        assert_abs_diff_eq!(dec.m, inside, epsilon = 1e-12);

        assert!(SubspacePair::new(DMatrix::from_element(2, 1, 1.0), e1).is_err());
    }

    #[test]
    fn simplex_projection_examples() {
        assert_eq!(project_simplex(&[0.2, 0.8]), vec![0.2, 0.8]);
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let w = project_simplex(&[0.5, 0.5, 0.5]);
        for x in w {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    fn arb_matrix(p: usize) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-2.0f64..2.0, p * p).prop_map(move |v| DMatrix::from_vec(p, p, v))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn clipping_is_nonexpansive(a in arb_matrix(5), b in arb_matrix(5), c in 0.0f64..3.0) {
            let d = (clip_spectral(&a, c) - clip_spectral(&b, c)).norm();
            prop_assert!(d <= (&a - &b).norm() + 1e-10);
        }

        #[test]
        fn kyfan_subgradient_inequality(x in arb_matrix(5), y in arb_matrix(5), r in 1usize..=5) {
            let w = kyfan_subgradient(&x, r).unwrap().w;
            let lhs = kyfan_norm(&y, r);
            let rhs = kyfan_norm(&x, r) + w.dot(&(&y - &x));
            prop_assert!(lhs >= rhs - 1e-9);
        }

        #[test]
        fn nuclear_equals_full_kyfan(x in arb_matrix(6)) {
            prop_assert!((nuclear_norm(&x) - kyfan_norm(&x, 6)).abs() < 1e-10);
            prop_assert!(nuclear_norm(&x) - kyfan_norm(&x, 2) >= -1e-12);
        }

        #[test]
        fn centering_kills_row_sums(x in arb_matrix(5)) {
            let c = project_centering(&x);
            for i in 0..5 {
                prop_assert!(c.row(i).sum().abs() < 1e-12);
            }
        }

        #[test]
        fn decomposition_is_orthogonal(x in arb_matrix(6), seed in 0u64..1000) {
            let s = svd(&gaussian(6, 6, seed)).unwrap().truncate(2);
            let dec = model_subspace_decompose(&x, &s.subspaces()).unwrap();
            prop_assert!(dec.mbar.dot(&dec.mbar_perp).abs() < 1e-10);
            let pyth = dec.mbar.norm_squared() + dec.mbar_perp.norm_squared();
            prop_assert!((x.norm_squared() - pyth).abs() < 1e-10);
        }

        #[test]
        fn simplex_projection_is_optimal(v in prop::collection::vec(-1.0f64..2.0, 1..12), probe in prop::collection::vec(0.0f64..1.0, 12)) {
            let w = project_simplex(&v);
            let s: f64 = w.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            // any other simplex point is no closer
            let q: Vec<f64> = probe[..v.len()].iter().map(|x| x + 1e-9).collect();
            let qs: f64 = q.iter().sum();
            let dist = |a: &[f64]| a.iter().zip(&v).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
            let q: Vec<f64> = q.iter().map(|x| x / qs).collect();
            prop_assert!(dist(&w) <= dist(&q) + 1e-12);
        }
    }
}
