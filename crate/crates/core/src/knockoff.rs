//! Gaussian model-X knockoff machinery.
//!
//! For covariates `X ~ N(0, Σ)` with precision `Ω = Σ⁻¹`, knockoffs follow
//! `X̃ | X ~ N(X(I − Ω diag(s)), A)` with `A = 2 diag(s) − diag(s) Ω diag(s)`,
//! equivalently `X̃ = X(I − Ω diag(s)) + U` with `U ~ N(0, A)`. This module
//! builds `s`, `A`, and the conditional mean map, and samples `U` and joint
//! knockoffs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{
    correlation_from_covariance, is_symmetric, min_eigenvalue_sym, symmetrize, CholeskyLower,
};

/// Relative symmetry tolerance for validated precision matrices.
pub const SYMMETRY_RTOL: f64 = 1e-10;

/// Default slack keeping `A` strictly positive definite when `2 λ_min`
/// saturates the equicorrelated bound.
pub const DEFAULT_SHRINK: f64 = 1.0 - 1e-6;

/// A validated symmetric positive definite precision matrix `Ω = Σ⁻¹`.
#[derive(Debug, Clone)]
pub struct PrecisionMatrix {
    omega: DMatrix<f64>,
    chol: CholeskyLower,
}

impl PrecisionMatrix {
    pub fn new(omega: DMatrix<f64>) -> Result<Self> {
        if omega.nrows() != omega.ncols() || omega.nrows() == 0 {
            return Err(Error::DimensionMismatch("precision matrix must be square".into()));
        }
        if !is_symmetric(&omega, SYMMETRY_RTOL) {
            return Err(Error::NotSymmetric { tol: SYMMETRY_RTOL });
        }
        let mut omega = omega;
        symmetrize(&mut omega);
        let chol = CholeskyLower::new(&omega).ok_or(Error::PrecisionNotPd)?;
        Ok(Self { omega, chol })
    }

    pub fn identity(p: usize) -> Self {
        Self::new(DMatrix::identity(p, p)).expect("identity is PD")
    }

    pub fn dim(&self) -> usize {
        self.omega.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.omega
    }

    /// Implied covariance `Σ = Ω⁻¹`.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// Everything needed to sample valid knockoffs for a fixed `(Ω, s)` pair.
#[derive(Debug, Clone)]
pub struct KnockoffParams {
    s: DVector<f64>,
    a: DMatrix<f64>,
    gamma_map: DMatrix<f64>,
    a_chol: CholeskyLower,
}

impl KnockoffParams {
    /// Build `A = 2 diag(s) − diag(s) Ω diag(s)` and the mean map
    /// `I − Ω diag(s)`, verifying that `A` admits a Cholesky factor.
    pub fn new(omega: &PrecisionMatrix, s: DVector<f64>) -> Result<Self> {
        let p = omega.dim();
        if s.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "s has length {} for a {p}-dimensional precision matrix",
                s.len()
            )));
        }
        if s.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidHyper("s entries must be nonnegative".into()));
        }
        let a = compute_a(omega, &s)?;
        let a_chol = CholeskyLower::new(&a).ok_or(Error::KnockoffANotPd)?;
        let mut gamma_map = DMatrix::identity(p, p);
        let om = omega.matrix();
        for i in 0..p {
            for j in 0..p {
                gamma_map[(i, j)] -= om[(i, j)] * s[j];
            }
        }
        Ok(Self { s, a, gamma_map, a_chol })
    }

    pub fn dim(&self) -> usize {
        self.s.len()
    }

    pub fn s(&self) -> &DVector<f64> {
        &self.s
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// `I − Ω diag(s)`: right-multiplying `X` by this gives the conditional
    /// knockoff mean `Γ`.
    pub fn gamma_map(&self) -> &DMatrix<f64> {
        &self.gamma_map
    }

    pub fn a_chol(&self) -> &CholeskyLower {
        &self.a_chol
    }
}

/// Latent knockoff noise, one row per observation; the prior law of each row
/// is `N(0, A)`.
#[derive(Debug, Clone)]
pub struct LatentU {
    pub u: DMatrix<f64>,
}

impl LatentU {
    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn p(&self) -> usize {
        self.u.ncols()
    }
}

/// Equicorrelated `s`: `s_j = shrink · min(2 λ_min(R), 1) · σ_jj` with `R`
/// the correlation matrix of `sigma`.
///
/// `shrink` must lie in `(0, 1]`; a value of exactly 1 can make `A`
/// numerically singular, which is reported as an error.
pub fn compute_s_equicorrelated(sigma: &DMatrix<f64>, shrink: f64) -> Result<DVector<f64>> {
    if !(shrink > 0.0 && shrink <= 1.0) {
        return Err(Error::InvalidHyper(format!("shrink must be in (0, 1], got {shrink}")));
    }
    if sigma.nrows() != sigma.ncols() || !is_symmetric(sigma, 1e-8) {
        return Err(Error::CovarianceNotPd);
    }
    let r = correlation_from_covariance(sigma)?;
    let lambda_min = min_eigenvalue_sym(&r);
    if lambda_min <= 0.0 || CholeskyLower::new(sigma).is_none() {
        return Err(Error::CovarianceNotPd);
    }
    let s_corr = shrink * (2.0 * lambda_min).min(1.0);
    let s = DVector::from_fn(sigma.nrows(), |j, _| s_corr * sigma[(j, j)]);

    // Verify the implied A admits a Cholesky factor before handing s out.
    let omega = PrecisionMatrix::new(
        CholeskyLower::new(sigma).ok_or(Error::CovarianceNotPd)?.inverse(),
    )?;
    let a = compute_a(&omega, &s)?;
    if CholeskyLower::new(&a).is_none() {
        return Err(Error::KnockoffANotPd);
    }
    Ok(s)
}

/// `A = 2 diag(s) − diag(s) Ω diag(s)`, symmetrized.
pub fn compute_a(omega: &PrecisionMatrix, s: &DVector<f64>) -> Result<DMatrix<f64>> {
    let p = omega.dim();
    if s.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "s has length {} for dimension {p}",
            s.len()
        )));
    }
    let om = omega.matrix();
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            a[(i, j)] = -s[i] * om[(i, j)] * s[j];
        }
        a[(i, i)] += 2.0 * s[i];
    }
    symmetrize(&mut a);
    Ok(a)
}

/// Conditional knockoff mean `Γ = X (I − Ω diag(s))`.
pub fn knockoff_mean_map(
    x: &DMatrix<f64>,
    omega: &PrecisionMatrix,
    s: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let p = omega.dim();
    if x.ncols() != p || s.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "x has {} columns, s has length {}, dimension is {p}",
            x.ncols(),
            s.len()
        )));
    }
    // Γ = X − (X Ω) diag(s)
    let mut xo = x * omega.matrix();
    for j in 0..p {
        let sj = s[j];
        for i in 0..x.nrows() {
            xo[(i, j)] = x[(i, j)] - xo[(i, j)] * sj;
        }
    }
    Ok(xo)
}

/// `n` i.i.d. rows from the knockoff noise prior `N(0, A)`.
pub fn sample_u_prior<R: Rng>(a: &DMatrix<f64>, n: usize, rng: &mut R) -> Result<LatentU> {
    let chol = CholeskyLower::new(a).ok_or(Error::ANotPd)?;
    Ok(LatentU { u: chol.sample_rows(n, rng) })
}

/// One joint knockoff draw: `X̃ = X(I − Ω diag(s)) + U` with `U ~ N(0, A)`.
pub fn sample_joint_knockoffs<R: Rng>(
    x: &DMatrix<f64>,
    omega: &PrecisionMatrix,
    s: &DVector<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let gamma = knockoff_mean_map(x, omega, s)?;
    let a = compute_a(omega, s)?;
    let u = sample_u_prior(&a, x.nrows(), rng)?;
    Ok(gamma + u.u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{empirical_covariance, max_abs_diff};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_by_two() -> PrecisionMatrix {
        PrecisionMatrix::new(DMatrix::from_row_slice(
            2,
            2,
            &[4.0 / 3.0, -2.0 / 3.0, -2.0 / 3.0, 4.0 / 3.0],
        ))
        .unwrap()
    }

    #[test]
    fn s_identity_covariance() {
        let sigma = DMatrix::identity(4, 4);
        let s = compute_s_equicorrelated(&sigma, DEFAULT_SHRINK).unwrap();
        for j in 0..4 {
            assert!((s[j] - DEFAULT_SHRINK).abs() < 1e-12);
        }
    }

    #[test]
    fn s_saturated_bound_is_singular_without_shrink() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        // λ_min(R) = 0.5 so s = (1, 1) gives a singular A.
        assert!(matches!(
            compute_s_equicorrelated(&sigma, 1.0),
            Err(Error::KnockoffANotPd)
        ));
        let s = compute_s_equicorrelated(&sigma, 0.95).unwrap();
        assert!((s[0] - 0.95).abs() < 1e-12);
        let omega = PrecisionMatrix::new(sigma.try_inverse().unwrap()).unwrap();
        let a = compute_a(&omega, &s).unwrap();
        assert!(CholeskyLower::new(&a).is_some());
    }

    #[test]
    fn s_scales_with_diagonal() {
        let sigma = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        let s = compute_s_equicorrelated(&sigma, DEFAULT_SHRINK).unwrap();
        assert!((s[0] - 4.0 * DEFAULT_SHRINK).abs() < 1e-10);
        assert!((s[1] - 9.0 * DEFAULT_SHRINK).abs() < 1e-10);
    }

    #[test]
    fn s_diagonal_scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = DMatrix::from_fn(4, 4, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let mut sigma = &b * b.transpose();
        for i in 0..4 {
            sigma[(i, i)] += 4.0;
        }
        let s0 = compute_s_equicorrelated(&sigma, 0.9).unwrap();
        let scales: [f64; 4] = [2.0, 0.5, 3.0, 1.5];
        let mut scaled = sigma.clone();
        for i in 0..4 {
            for j in 0..4 {
                scaled[(i, j)] *= scales[i].sqrt() * scales[j].sqrt();
            }
        }
        let s1 = compute_s_equicorrelated(&scaled, 0.9).unwrap();
        for j in 0..4 {
            assert!((s1[j] - scales[j] * s0[j]).abs() < 1e-8 * s1[j].abs().max(1.0));
        }
    }

    #[test]
    fn compute_a_matches_hand_cases() {
        let eye = PrecisionMatrix::identity(3);
        let ones = DVector::from_element(3, 1.0);
        let a = compute_a(&eye, &ones).unwrap();
        assert_eq!(a, DMatrix::identity(3, 3));

        let halves = DVector::from_element(3, 0.5);
        let a = compute_a(&eye, &halves).unwrap();
        for i in 0..3 {
            assert!((a[(i, i)] - 0.75).abs() < 1e-15);
        }

        let omega = two_by_two();
        let a = compute_a(&omega, &DVector::from_element(2, 1.0)).unwrap();
        for v in [a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]] {
            assert!((v - 2.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn mean_map_degenerate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(5, 3, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let eye = PrecisionMatrix::identity(3);
        let gamma = knockoff_mean_map(&x, &eye, &DVector::from_element(3, 1.0)).unwrap();
        assert!(gamma.iter().all(|&v| v.abs() < 1e-14));

        let gamma = knockoff_mean_map(&x, &eye, &DVector::zeros(3)).unwrap();
        assert_eq!(gamma, x);
    }

    #[test]
    fn mean_map_matches_brute_force_product() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let omega = two_by_two();
        let s = DVector::from_row_slice(&[0.9, 0.9]);
        let gamma = knockoff_mean_map(&x, &omega, &s).unwrap();
        // Oracle: dense product done index by index.
        let mut map = DMatrix::<f64>::identity(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                map[(i, j)] -= omega.matrix()[(i, j)] * s[j];
            }
        }
        let mut want = DMatrix::zeros(1, 2);
        for j in 0..2 {
            for k in 0..2 {
                want[(0, j)] += x[(0, k)] * map[(k, j)];
            }
        }
        assert!(max_abs_diff(&gamma, &want) < 1e-14);
    }

    #[test]
    fn mean_map_is_linear_in_x() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x1 = DMatrix::from_fn(4, 2, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let x2 = DMatrix::from_fn(4, 2, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let omega = two_by_two();
        let s = DVector::from_row_slice(&[0.5, 0.7]);
        let lhs = knockoff_mean_map(&(2.0 * &x1 + 3.0 * &x2), &omega, &s).unwrap();
        let rhs = 2.0 * knockoff_mean_map(&x1, &omega, &s).unwrap()
            + 3.0 * knockoff_mean_map(&x2, &omega, &s).unwrap();
        assert!(max_abs_diff(&lhs, &rhs) < 1e-12);
    }

    #[test]
    fn u_prior_empirical_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::identity(2, 2);
        let u = sample_u_prior(&a, 100_000, &mut rng).unwrap();
        let cov = empirical_covariance(&u.u);
        assert!(max_abs_diff(&cov, &a) < 0.05);
    }

    #[test]
    fn u_prior_rejects_degenerate_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = DMatrix::zeros(2, 2);
        assert!(matches!(sample_u_prior(&a, 3, &mut rng), Err(Error::ANotPd)));
    }

    #[test]
    fn u_prior_deterministic_under_seed() {
        let a = DMatrix::identity(2, 2);
        let u1 = sample_u_prior(&a, 3, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let u2 = sample_u_prior(&a, 3, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(u1.u, u2.u);
    }

    #[test]
    fn joint_knockoffs_nearly_independent_when_s_saturates_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = 3;
        let n = 40_000;
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let omega = PrecisionMatrix::identity(p);
        let s = DVector::from_element(p, DEFAULT_SHRINK);
        let xk = sample_joint_knockoffs(&x, &omega, &s, &mut rng).unwrap();
        // cross covariance should be ≈ Σ − diag(s) ≈ 0
        let mut joint = DMatrix::zeros(n, 2 * p);
        joint.view_mut((0, 0), (n, p)).copy_from(&x);
        joint.view_mut((0, p), (n, p)).copy_from(&xk);
        let cov = empirical_covariance(&joint);
        for a in 0..p {
            for b in 0..p {
                assert!(cov[(a, p + b)].abs() < 0.05, "cross block entry too large");
            }
        }
    }
}
