//! Convergence diagnostics for scalar draw sequences.

use crate::error::{Error, Result};
use crate::regression::PosteriorDraws;

/// Geweke z-score comparing the first `frac_a` and last `frac_b` of a chain.
///
/// `z = (mean_A − mean_B) / sqrt(S_A(0)/n_A + S_B(0)/n_B)` where `S(0)` is a
/// Bartlett-windowed estimate of the spectral density at frequency zero.
pub fn geweke_z(chain: &[f64], frac_a: f64, frac_b: f64) -> Result<f64> {
    const MIN_LEN: usize = 100;
    if chain.len() < MIN_LEN {
        return Err(Error::ChainTooShort { min: MIN_LEN, got: chain.len() });
    }
    if !(frac_a > 0.0 && frac_b > 0.0 && frac_a + frac_b <= 1.0) {
        return Err(Error::InvalidHyper(format!(
            "window fractions must be positive and sum to at most 1, got {frac_a} and {frac_b}"
        )));
    }
    let n = chain.len();
    let na = ((frac_a * n as f64).floor() as usize).max(2);
    let nb = ((frac_b * n as f64).floor() as usize).max(2);
    let a = &chain[..na];
    let b = &chain[n - nb..];
    let (mean_a, sve_a) = spectral_variance_at_zero(a)?;
    let (mean_b, sve_b) = spectral_variance_at_zero(b)?;
    let denom = sve_a / na as f64 + sve_b / nb as f64;
    if denom <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((mean_a - mean_b) / denom.sqrt())
}

/// Convenience wrapper with the conventional 10% / 50% windows.
pub fn geweke_z_default(chain: &[f64]) -> Result<f64> {
    geweke_z(chain, 0.1, 0.5)
}

/// Mean and Bartlett-windowed spectral density at zero of a segment.
///
/// The lag truncation follows the Newey-West automatic choice
/// `K = ⌊4 (n/100)^{2/9}⌋`; the triangular window keeps the estimate
/// nonnegative.
fn spectral_variance_at_zero(x: &[f64]) -> Result<(f64, f64)> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0 = x.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let k_max = ((4.0 * (n as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize).clamp(1, n - 1);
    let mut s0 = c0;
    for k in 1..=k_max {
        let mut ck = 0.0;
        for t in 0..(n - k) {
            ck += (x[t] - mean) * (x[t + k] - mean);
        }
        ck /= n as f64;
        let weight = 1.0 - k as f64 / (k_max as f64 + 1.0);
        s0 += 2.0 * weight * ck;
    }
    if s0 <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((mean, s0))
}

/// Geweke summary over all coefficient chains of a run.
#[derive(Debug, Clone, Copy)]
pub struct GewekeSummary {
    /// Signed average z over non-degenerate coefficient chains.
    pub mean_z: f64,
    /// Average |z| over the same chains.
    pub mean_abs_z: f64,
    /// How many coefficient chains had enough variation to score.
    pub scored: usize,
}

/// Score every `β_j` and `β̃_j` chain; chains with zero variance (variables
/// never selected) are skipped.
pub fn geweke_summary(draws: &PosteriorDraws) -> Option<GewekeSummary> {
    let mut zs = Vec::new();
    for source in [&draws.beta, &draws.beta_tilde] {
        for j in 0..source.ncols() {
            let chain: Vec<f64> = source.column(j).iter().copied().collect();
            if let Ok(z) = geweke_z_default(&chain) {
                zs.push(z);
            }
        }
    }
    if zs.is_empty() {
        return None;
    }
    let k = zs.len() as f64;
    Some(GewekeSummary {
        mean_z: zs.iter().sum::<f64>() / k,
        mean_abs_z: zs.iter().map(|z| z.abs()).sum::<f64>() / k,
        scored: zs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn iid_chains_are_calibrated() {
        // |z| < 3 should hold for ≈99.7% of i.i.d. chains.
        let mut inside = 0;
        let seeds = 200;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let chain: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
            let z = geweke_z_default(&chain).unwrap();
            if z.abs() < 3.0 {
                inside += 1;
            }
        }
        assert!(inside >= 196, "only {inside}/{seeds} chains inside ±3");
    }

    #[test]
    fn constant_chain_reports_zero_variance() {
        let chain = vec![1.5; 500];
        assert!(matches!(geweke_z_default(&chain), Err(Error::ZeroVariance)));
    }

    #[test]
    fn short_chain_is_rejected() {
        let chain = vec![0.0; 99];
        assert!(matches!(
            geweke_z_default(&chain),
            Err(Error::ChainTooShort { min: 100, got: 99 })
        ));
    }

    #[test]
    fn shifted_second_half_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut chain: Vec<f64> = (0..5_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for v in chain.iter_mut().skip(2_500) {
            *v += 2.0;
        }
        let z = geweke_z_default(&chain).unwrap();
        assert!(z.abs() > 5.0, "drifted chain got z = {z}");
    }
}
