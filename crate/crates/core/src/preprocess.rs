//! Column centering and the rank-based Gaussianization used for real data.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Center every column in place; returns the subtracted means.
pub fn center_columns(x: &mut DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    let means = DVector::from_fn(x.ncols(), |j, _| x.column(j).sum() / n);
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            x[(i, j)] -= means[j];
        }
    }
    means
}

/// Center a vector in place; returns the subtracted mean.
pub fn center_vector(y: &mut DVector<f64>) -> f64 {
    let mean = y.sum() / y.len() as f64;
    for v in y.iter_mut() {
        *v -= mean;
    }
    mean
}

/// Rank-based marginal Gaussianization under a Gaussian copula.
///
/// Per column: average ranks → empirical CDF Winsorized at
/// `δ_n = 1/(4 n^{1/4} √(π log n))` → standard normal quantile → standardized
/// to zero mean and unit variance. Being rank-based, the transform is exactly
/// invariant to monotone transformations of a column.
pub fn nonparanormal_transform(x: &DMatrix<f64>, names: &[String]) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let p = x.ncols();
    if n < 2 {
        return Err(Error::InvalidData("nonparanormal transform needs at least 2 rows".into()));
    }
    let nf = n as f64;
    let delta = 1.0 / (4.0 * nf.powf(0.25) * (std::f64::consts::PI * nf.ln()).sqrt());
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut out = DMatrix::zeros(n, p);
    for j in 0..p {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            let name = names.get(j).cloned().unwrap_or_else(|| format!("x{}", j + 1));
            return Err(Error::DegenerateColumn { name });
        }
        let ranks = average_ranks(&col);
        let mut z: Vec<f64> = ranks
            .iter()
            .map(|&r| {
                let u = (r / nf).clamp(delta, 1.0 - delta);
                normal.inverse_cdf(u)
            })
            .collect();
        standardize(&mut z);
        for i in 0..n {
            out[(i, j)] = z[i];
        }
    }
    Ok(out)
}

/// 1-based ranks with ties resolved by averaging.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut k = i;
        while k + 1 < n && values[idx[k + 1]] == values[idx[i]] {
            k += 1;
        }
        // tied block [i, k]: average of ranks i+1 ..= k+1
        let avg = (i + k + 2) as f64 / 2.0;
        for &pos in &idx[i..=k] {
            ranks[pos] = avg;
        }
        i = k + 1;
    }
    ranks
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    for x in v.iter_mut() {
        *x = (*x - mean) / sd;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("x{}", j + 1)).collect()
    }

    #[test]
    fn centering_zeroes_means() {
        let mut x = DMatrix::from_row_slice(3, 2, &[1.0, 10.0, 2.0, 20.0, 3.0, 33.0]);
        center_columns(&mut x);
        for j in 0..2 {
            assert!(x.column(j).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_column_is_nearly_unchanged() {
        let n = 200;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = nonparanormal_transform(&x, &names(1)).unwrap();
        let xc: Vec<f64> = x.column(0).iter().copied().collect();
        let zc: Vec<f64> = z.column(0).iter().copied().collect();
        let mx = xc.iter().sum::<f64>() / n as f64;
        let mz = zc.iter().sum::<f64>() / n as f64;
        let mut num = 0.0;
        let mut dx = 0.0;
        let mut dz = 0.0;
        for i in 0..n {
            num += (xc[i] - mx) * (zc[i] - mz);
            dx += (xc[i] - mx).powi(2);
            dz += (zc[i] - mz).powi(2);
        }
        let corr = num / (dx.sqrt() * dz.sqrt());
        assert!(corr > 0.99, "correlation with input only {corr}");
        // standardized output
        let var = zc.iter().map(|&v| (v - mz).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!(mz.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn monotone_transform_invariance() {
        let n = 50;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let ex = x.map(f64::exp);
        let a = nonparanormal_transform(&x, &names(1)).unwrap();
        let b = nonparanormal_transform(&ex, &names(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ties_get_average_ranks() {
        let ranks = average_ranks(&[2.0, 1.0, 2.0, 3.0]);
        assert_eq!(ranks, vec![2.5, 1.0, 2.5, 4.0]);
    }

    #[test]
    fn constant_column_is_degenerate() {
        let x = DMatrix::from_element(5, 1, 7.0);
        match nonparanormal_transform(&x, &names(1)) {
            Err(Error::DegenerateColumn { name }) => assert_eq!(name, "x1"),
            other => panic!("expected degenerate column error, got {other:?}"),
        }
    }
}
