//! Dense linear-algebra helpers shared by the samplers.
//!
//! Every multivariate normal draw in the crate goes through
//! [`CholeskyLower`], so determinism under a fixed seed is decided in one
//! place.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Replace `m` with `(m + mᵀ)/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    debug_assert_eq!(p, m.ncols());
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Check symmetry up to a relative tolerance on the largest entry.
pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-300);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

/// Correlation matrix of a covariance matrix.
pub fn correlation_from_covariance(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = sigma.nrows();
    let mut d = DVector::zeros(p);
    for j in 0..p {
        let v = sigma[(j, j)];
        if v <= 0.0 {
            return Err(Error::CovarianceNotPd);
        }
        d[j] = 1.0 / v.sqrt();
    }
    let mut r = sigma.clone();
    for i in 0..p {
        for j in 0..p {
            r[(i, j)] *= d[i] * d[j];
        }
    }
    Ok(r)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue_sym(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &v| a.min(v))
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue_sym(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::NEG_INFINITY, |a, &v| a.max(v))
}

/// Lower-triangular Cholesky factor of a positive definite matrix.
///
/// The single primitive behind all multivariate normal sampling and the PD
/// checks of the knockoff machinery.
#[derive(Debug, Clone)]
pub struct CholeskyLower {
    l: DMatrix<f64>,
}

impl CholeskyLower {
    /// Factor `a = L Lᵀ`; `None` if `a` is not numerically PD.
    pub fn new(a: &DMatrix<f64>) -> Option<Self> {
        nalgebra::Cholesky::new(a.clone()).map(|c| Self { l: c.unpack() })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// One draw from `N(0, L Lᵀ)`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let z = standard_normal_vector(self.dim(), rng);
        &self.l * z
    }

    /// `n` independent rows from `N(0, L Lᵀ)`, as an `n × p` matrix.
    pub fn sample_rows<R: Rng>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let p = self.dim();
        let mut out = DMatrix::zeros(n, p);
        for i in 0..n {
            let row = self.sample(rng);
            out.row_mut(i).copy_from(&row.transpose());
        }
        out
    }

    /// Solve `L Lᵀ x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self
            .l
            .solve_lower_triangular(b)
            .expect("triangular solve on Cholesky factor");
        self.l
            .transpose()
            .solve_upper_triangular(&y)
            .expect("triangular solve on Cholesky factor")
    }

    /// Inverse of the factored matrix.
    pub fn inverse(&self) -> DMatrix<f64> {
        let p = self.dim();
        let mut inv = DMatrix::zeros(p, p);
        for j in 0..p {
            let mut e = DVector::zeros(p);
            e[j] = 1.0;
            inv.column_mut(j).copy_from(&self.solve(&e));
        }
        symmetrize(&mut inv);
        inv
    }

    /// Log-determinant of the factored matrix.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }
}

/// Vector of independent standard normals.
pub fn standard_normal_vector<R: Rng>(p: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(p, |_, _| rng.sample(StandardNormal))
}

/// Log-density of `N(mean, var)` at `x`.
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var)
}

/// Empirical covariance (denominator `n`) of the rows of `x`.
pub fn empirical_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let p = x.ncols();
    let mut means = DVector::zeros(p);
    for j in 0..p {
        means[j] = x.column(j).sum() / n as f64;
    }
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..n {
        for a in 0..p {
            let da = x[(i, a)] - means[a];
            for b in a..p {
                cov[(a, b)] += da * (x[(i, b)] - means[b]);
            }
        }
    }
    for a in 0..p {
        for b in a..p {
            let v = cov[(a, b)] / n as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    cov
}

/// Maximum absolute entry of `a - b`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |acc, (&x, &y)| acc.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn symmetrize_kills_asymmetry() {
        let mut m = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.1, 2.0]);
        symmetrize(&mut m);
        assert_eq!(m[(0, 1)], 0.2);
        assert_eq!(m[(1, 0)], 0.2);
    }

    #[test]
    fn correlation_has_unit_diagonal() {
        let sigma = DMatrix::from_row_slice(2, 2, &[4.0, 1.2, 1.2, 9.0]);
        let r = correlation_from_covariance(&sigma).unwrap();
        assert!((r[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((r[(1, 1)] - 1.0).abs() < 1e-14);
        assert!((r[(0, 1)] - 1.2 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn cholesky_solve_and_inverse_agree() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let chol = CholeskyLower::new(&a).unwrap();
        let b = DVector::from_row_slice(&[1.0, -2.0, 0.7]);
        let x = chol.solve(&b);
        let back = &a * &x;
        for i in 0..3 {
            assert!((back[i] - b[i]).abs() < 1e-12);
        }
        let inv = chol.inverse();
        let eye = &a * &inv;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((eye[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mvn_sampling_is_deterministic_under_seed() {
        let a = DMatrix::identity(3, 3);
        let chol = CholeskyLower::new(&a).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let s1 = chol.sample_rows(3, &mut r1);
        let s2 = chol.sample_rows(3, &mut r2);
        assert_eq!(s1, s2);
    }
}
