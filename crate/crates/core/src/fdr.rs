//! Feature statistics, non-inclusion upper bounds, and greedy selection that
//! controls the Bayesian false discovery rate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-draw feature statistics `W_j = |β_j| − |β̃_j|`, one row per kept draw.
#[derive(Debug, Clone)]
pub struct WDraws {
    w: DMatrix<f64>,
}

impl WDraws {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        if w.nrows() == 0 {
            return Err(Error::EmptyDraws);
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite W draws".into()));
        }
        Ok(Self { w })
    }

    pub fn n_draws(&self) -> usize {
        self.w.nrows()
    }

    pub fn p(&self) -> usize {
        self.w.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn column_mean(&self, j: usize) -> f64 {
        self.w.column(j).sum() / self.n_draws() as f64
    }

    /// Sorted copies of column `j`, for quantile summaries.
    pub fn column_quantiles(&self, j: usize, probs: &[f64]) -> Vec<f64> {
        let mut v: Vec<f64> = self.w.column(j).iter().copied().collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        probs.iter().map(|&p| quantile_sorted(&v, p)).collect()
    }
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = prob.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Elementwise `|β| − |β̃|` across draws.
pub fn compute_w(beta_draws: &DMatrix<f64>, beta_tilde_draws: &DMatrix<f64>) -> Result<WDraws> {
    if beta_draws.shape() != beta_tilde_draws.shape() {
        return Err(Error::DimensionMismatch(format!(
            "beta draws {:?} vs knockoff draws {:?}",
            beta_draws.shape(),
            beta_tilde_draws.shape()
        )));
    }
    let w = DMatrix::from_fn(beta_draws.nrows(), beta_draws.ncols(), |t, j| {
        beta_draws[(t, j)].abs() - beta_tilde_draws[(t, j)].abs()
    });
    WDraws::new(w)
}

/// Monte Carlo upper bounds on the posterior non-inclusion probabilities.
#[derive(Debug, Clone)]
pub struct UpperBounds {
    /// `1 − (#{W_j > 0} − #{W_j < 0})/T` per variable, clipped to `[0, 1]`.
    pub bounds: DVector<f64>,
    /// How many variables had a raw estimate above 1 (clipped down).
    pub clipped: usize,
}

/// Estimate `P[r_j = 0 | D] ≤ 1 − (1/T) Σ_t (1{W_j > 0} − 1{W_j < 0})`.
///
/// Draws with `W_j = 0` count in neither indicator, so a variable that is
/// never selected gets bound 1. The raw estimator can exceed 1 when negative
/// draws outnumber positive ones; since it bounds a probability it is clipped
/// to `[0, 1]` and the clip count reported.
pub fn estimate_upper_bound(w: &WDraws) -> UpperBounds {
    let t = w.n_draws() as f64;
    let mut clipped = 0;
    let bounds = DVector::from_fn(w.p(), |j, _| {
        let mut pos = 0i64;
        let mut neg = 0i64;
        for &v in w.matrix().column(j).iter() {
            if v > 0.0 {
                pos += 1;
            } else if v < 0.0 {
                neg += 1;
            }
        }
        let raw = 1.0 - (pos - neg) as f64 / t;
        if raw > 1.0 {
            clipped += 1;
        }
        raw.clamp(0.0, 1.0)
    });
    UpperBounds { bounds, clipped }
}

/// The two-sided tail statistic `2 P̂[W_j ≤ 0 | D]`.
///
/// Coincides with [`estimate_upper_bound`] whenever no draw has `W_j = 0`
/// exactly; reported alongside the primary bound, never used for selection.
pub fn estimate_two_sided_bound(w: &WDraws) -> DVector<f64> {
    let t = w.n_draws() as f64;
    DVector::from_fn(w.p(), |j, _| {
        let nonpos = w.matrix().column(j).iter().filter(|&&v| v <= 0.0).count();
        (2.0 * nonpos as f64 / t).clamp(0.0, 1.0)
    })
}

/// Output of the greedy BFDR selection.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SelectionReport {
    /// Upper bounds in original variable order.
    pub upper_bound: Vec<f64>,
    /// Variable indices sorted by ascending bound, ties broken by index.
    pub order: Vec<usize>,
    /// `bfdr_curve[k]` = mean of the first `k+1` sorted bounds.
    pub bfdr_curve: Vec<f64>,
    /// Selected variables (ascending index order).
    pub selected: Vec<usize>,
    /// FDR level used.
    pub q: f64,
}

/// Sort bounds ascending and keep the longest prefix whose running mean stays
/// at or below `q`.
pub fn select_bfdr(bounds: &DVector<f64>, q: f64) -> Result<SelectionReport> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidHyper(format!("q must be in (0,1), got {q}")));
    }
    if bounds.iter().any(|&b| !(0.0..=1.0).contains(&b)) {
        return Err(Error::InvalidData("bounds must lie in [0,1]".into()));
    }
    let p = bounds.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        bounds[a]
            .partial_cmp(&bounds[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut bfdr_curve = Vec::with_capacity(p);
    let mut running = 0.0;
    let mut keep = 0;
    for (k, &j) in order.iter().enumerate() {
        running += bounds[j];
        let mean = running / (k + 1) as f64;
        bfdr_curve.push(mean);
        if mean <= q {
            keep = k + 1;
        }
    }
    let mut selected: Vec<usize> = order[..keep].to_vec();
    selected.sort_unstable();
    Ok(SelectionReport {
        upper_bound: bounds.iter().copied().collect(),
        order,
        bfdr_curve,
        selected,
        q,
    })
}

/// Mean bound over a candidate set, with the `|S| ∨ 1` convention: an empty
/// set has estimated BFDR 0.
pub fn estimated_bfdr(bounds: &DVector<f64>, s: &[usize]) -> f64 {
    if s.is_empty() {
        return 0.0;
    }
    s.iter().map(|&j| bounds[j]).sum::<f64>() / s.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wdraws(rows: &[&[f64]]) -> WDraws {
        let t = rows.len();
        let p = rows[0].len();
        let mut m = DMatrix::zeros(t, p);
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        WDraws::new(m).unwrap()
    }

    #[test]
    fn w_basic_values_and_antisymmetry() {
        let beta = DMatrix::from_row_slice(1, 3, &[1.5, 0.0, -0.4]);
        let beta_tilde = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 0.9]);
        let w = compute_w(&beta, &beta_tilde).unwrap();
        assert_eq!(w.matrix()[(0, 0)], 1.5);
        assert_eq!(w.matrix()[(0, 1)], 0.0);
        let swapped = compute_w(&beta_tilde, &beta).unwrap();
        for j in 0..3 {
            assert_eq!(w.matrix()[(0, j)], -swapped.matrix()[(0, j)]);
        }
    }

    #[test]
    fn w_shape_mismatch() {
        let a = DMatrix::zeros(2, 3);
        let b = DMatrix::zeros(2, 2);
        assert!(compute_w(&a, &b).is_err());
    }

    #[test]
    fn upper_bound_counting() {
        // All positive → 0; all zero → 1; 6 pos, 2 neg, 2 zero → 0.6.
        let w = wdraws(&[
            &[1.0, 0.0, 1.0],
            &[2.0, 0.0, 1.0],
            &[0.5, 0.0, 1.0],
            &[0.1, 0.0, 1.0],
            &[1.0, 0.0, 1.0],
            &[1.0, 0.0, 1.0],
            &[3.0, 0.0, -1.0],
            &[0.2, 0.0, -1.0],
            &[0.9, 0.0, 0.0],
            &[1.1, 0.0, 0.0],
        ]);
        let ub = estimate_upper_bound(&w);
        assert_eq!(ub.bounds[0], 0.0);
        assert_eq!(ub.bounds[1], 1.0);
        assert!((ub.bounds[2] - 0.6).abs() < 1e-15);
        assert_eq!(ub.clipped, 0);
    }

    #[test]
    fn upper_bound_clips_when_negative_dominates() {
        let w = wdraws(&[&[-1.0], &[-2.0], &[1.0]]);
        let ub = estimate_upper_bound(&w);
        assert_eq!(ub.bounds[0], 1.0);
        assert_eq!(ub.clipped, 1);
    }

    #[test]
    fn two_sided_bound_matches_primary_without_zeros() {
        let w = wdraws(&[&[1.0, -1.0], &[2.0, -0.5], &[-1.0, 0.3], &[0.5, 0.8]]);
        let a = estimate_upper_bound(&w).bounds;
        let b = estimate_two_sided_bound(&w);
        for j in 0..2 {
            assert!((a[j] - b[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn select_bfdr_worked_example() {
        let bounds = DVector::from_row_slice(&[0.0, 0.05, 0.5]);
        let rep = select_bfdr(&bounds, 0.1).unwrap();
        assert_eq!(rep.order, vec![0, 1, 2]);
        assert!((rep.bfdr_curve[0] - 0.0).abs() < 1e-15);
        assert!((rep.bfdr_curve[1] - 0.025).abs() < 1e-15);
        assert!((rep.bfdr_curve[2] - 0.55 / 3.0).abs() < 1e-15);
        assert_eq!(rep.selected, vec![0, 1]);
    }

    #[test]
    fn select_bfdr_edge_cases() {
        let all_high = DVector::from_element(4, 0.9);
        assert!(select_bfdr(&all_high, 0.1).unwrap().selected.is_empty());
        let all_zero = DVector::zeros(4);
        assert_eq!(select_bfdr(&all_zero, 0.1).unwrap().selected.len(), 4);
    }

    #[test]
    fn estimated_bfdr_conventions() {
        let bounds = DVector::from_row_slice(&[0.04, 0.2, 0.6]);
        assert_eq!(estimated_bfdr(&bounds, &[]), 0.0);
        assert_eq!(estimated_bfdr(&bounds, &[0]), 0.04);
        let full = estimated_bfdr(&bounds, &[0, 1, 2]);
        assert!((full - (0.04 + 0.2 + 0.6) / 3.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn selection_monotone_in_q(bounds in proptest::collection::vec(0.0f64..=1.0, 1..20),
                                   q1 in 0.01f64..0.5, dq in 0.01f64..0.49) {
            let b = DVector::from_vec(bounds);
            let q2 = (q1 + dq).min(0.99);
            let s1 = select_bfdr(&b, q1).unwrap().selected;
            let s2 = select_bfdr(&b, q2).unwrap().selected;
            for j in &s1 {
                prop_assert!(s2.contains(j));
            }
        }

        #[test]
        fn selected_bfdr_at_most_q(bounds in proptest::collection::vec(0.0f64..=1.0, 1..20),
                                   q in 0.01f64..0.99) {
            let b = DVector::from_vec(bounds);
            let rep = select_bfdr(&b, q).unwrap();
            prop_assert!(estimated_bfdr(&b, &rep.selected) <= q + 1e-12);
        }

        #[test]
        fn selection_permutation_equivariant(bounds in proptest::collection::vec(0.0f64..=1.0, 2..12),
                                             q in 0.01f64..0.99,
                                             rot in 1usize..11) {
            let p = bounds.len();
            let rot = rot % p;
            // Ties are broken by original index, which is not label-invariant,
            // so equivariance is exact only for distinct bounds.
            let mut sorted = bounds.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assume!(sorted.windows(2).all(|w| w[0] != w[1]));
            let b = DVector::from_vec(bounds.clone());
            // rotate labels by `rot`
            let perm: Vec<usize> = (0..p).map(|j| (j + rot) % p).collect();
            let mut rotated = vec![0.0; p];
            for j in 0..p {
                rotated[perm[j]] = bounds[j];
            }
            let rb = DVector::from_vec(rotated);
            let base = select_bfdr(&b, q).unwrap();
            let rot_rep = select_bfdr(&rb, q).unwrap();
            let mut mapped: Vec<usize> = base.selected.iter().map(|&j| perm[j]).collect();
            mapped.sort_unstable();
            prop_assert_eq!(mapped, rot_rep.selected);
        }
    }
}
