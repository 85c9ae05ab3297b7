//! Point estimates that seed the bootstrap: thresholded group lasso,
//! least-squares refit on the selected groups, and the noise level.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Coefficients, FitResult, GroupPartition, GroupedDesign};

#[derive(Debug, Clone)]
pub struct PointEstimate {
    pub beta_tilde: Coefficients,
    pub sigma_hat: f64,
    pub active_groups: Vec<usize>,
    pub refit: bool,
    /// The refit design was rank deficient and a minimum-norm solution was used.
    pub rank_deficient: bool,
}

impl PointEstimate {
    /// Point estimate with given coefficients and noise level, no refit.
    pub fn fixed(beta_tilde: Coefficients, sigma_hat: f64) -> Self {
        let active_groups = beta_tilde.active_groups();
        PointEstimate { beta_tilde, sigma_hat, active_groups, refit: false, rank_deficient: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointEstimateReport {
    pub beta: Vec<f64>,
    /// 1-based group indices.
    pub active_groups: Vec<usize>,
    pub sigma_hat: f64,
    pub refit: bool,
    pub rank_deficient: bool,
}

impl From<&PointEstimate> for PointEstimateReport {
    fn from(p: &PointEstimate) -> Self {
        PointEstimateReport {
            beta: p.beta_tilde.values().iter().copied().collect(),
            active_groups: p.active_groups.iter().map(|j| j + 1).collect(),
            sigma_hat: p.sigma_hat,
            refit: p.refit,
            rank_deficient: p.rank_deficient,
        }
    }
}

/// `floor(n / p_max) - 1`, the default number of groups kept when the
/// thresholded estimate has too many nonzero coefficients.
pub fn default_cap(n: usize, partition: &GroupPartition) -> usize {
    (n / partition.p_max()).saturating_sub(1)
}

/// Zero every group with `||beta_(j)|| <= b_th`. If `n` or more coefficients
/// survive, keep only the `cap` groups with the largest norms (ties go to the
/// smaller group index).
pub fn threshold_group_lasso(fit: &FitResult, b_th: f64, n: usize, cap: Option<usize>) -> Coefficients {
    let partition = fit.beta.partition().clone();
    let norms = fit.beta.group_l2_norms();
    let mut kept: Vec<usize> = (0..partition.n_groups()).filter(|&j| norms[j] > b_th).collect();
    let survivors: usize = kept
        .iter()
        .map(|&j| partition.group(j).iter().filter(|&&k| fit.beta.values()[k] != 0.0).count())
        .sum();
    if survivors >= n {
        let cap = cap.unwrap_or_else(|| default_cap(n, &partition));
        kept.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
        kept.truncate(cap);
        kept.sort_unstable();
    }
    let mut out = Coefficients::zeros(partition.clone());
    for j in kept {
        out.set_group(j, &fit.beta.group_unchecked(j));
    }
    out
}

/// `lambda * sqrt(q * p_max) / 2` with `q = |G(beta_hat)|`.
pub fn default_threshold(fit: &FitResult, partition: &GroupPartition) -> f64 {
    let q = fit.beta.active_groups().len();
    0.5 * fit.lambda * ((q * partition.p_max()) as f64).sqrt()
}

/// Threshold that keeps exactly the `k` largest groups of `fit` (modulo ties):
/// the `(k+1)`-th largest group norm.
pub fn threshold_keeping(fit: &FitResult, k: usize) -> f64 {
    let mut norms = fit.beta.group_l2_norms();
    norms.sort_unstable_by(|a, b| b.total_cmp(a));
    norms.get(k).copied().unwrap_or(0.0)
}

/// Least squares of `y` on the columns of the active groups. Coefficients
/// outside those groups are zero; `sigma_hat^2 = RSS / (n - |M|)`, or
/// `||y||^2 / n` for an empty model.
pub fn refit_ols(design: &GroupedDesign, y: &DVector<f64>, active_groups: &[usize]) -> Result<PointEstimate> {
    let partition = design.partition().clone();
    let n = design.n();
    if y.len() != n {
        return Err(Error::InvalidData(format!("response has length {} but design has {n} rows", y.len())));
    }
    for &j in active_groups {
        partition.check_group(j)?;
    }
    let mut support: Vec<usize> = active_groups.iter().flat_map(|&j| partition.group(j).iter().copied()).collect();
    support.sort_unstable();
    support.dedup();

    if support.is_empty() {
        return Ok(PointEstimate {
            beta_tilde: Coefficients::zeros(partition),
            sigma_hat: (y.norm_squared() / n as f64).sqrt(),
            active_groups: Vec::new(),
            refit: true,
            rank_deficient: false,
        });
    }
    if support.len() >= n {
        return Err(Error::OverdeterminedRefit { support: support.len(), n });
    }

    let xm = design.x().select_columns(&support);
    let (coef, rank) = min_norm_least_squares(&xm, y)?;
    let rank_deficient = rank < support.len();
    if rank_deficient {
        warn!("refit design has rank {rank} < {} columns; using the minimum-norm solution", support.len());
    }
    let residual = y - &xm * &coef;
    let sigma2 = residual.norm_squared() / (n - support.len()) as f64;

    let mut values = DVector::zeros(partition.p());
    for (&k, &b) in support.iter().zip(coef.iter()) {
        values[k] = b;
    }
    let beta_tilde = Coefficients::new(values, partition)?;
    Ok(PointEstimate {
        active_groups: beta_tilde.active_groups(),
        beta_tilde,
        sigma_hat: sigma2.sqrt(),
        refit: true,
        rank_deficient,
    })
}

/// Minimum-norm least squares via SVD. Returns the solution and numeric rank.
fn min_norm_least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, usize)> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|s| **s > eps).count();
    let coef = svd.solve(b, eps).map_err(|e| Error::NumericFailure(e.to_string()))?;
    Ok((coef, rank))
}

/// Scaled gap between the two largest magnitudes of `theta`. A single entry
/// is treated as having a zero runner-up.
pub fn margin(theta: &[f64]) -> f64 {
    let mut mags: Vec<f64> = theta.iter().map(|x| x.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));
    let first = mags.first().copied().unwrap_or(0.0);
    let second = mags.get(1).copied().unwrap_or(0.0);
    (first - second) / std::f64::consts::SQRT_2
}

/// Convenience: threshold and cap `fit`, then refit on the survivors.
pub fn thresholded_refit(
    design: &GroupedDesign,
    y: &DVector<f64>,
    fit: &FitResult,
    b_th: f64,
    cap: Option<usize>,
) -> Result<PointEstimate> {
    let thresholded = threshold_group_lasso(fit, b_th, design.n(), cap);
    refit_ols(design, y, &thresholded.active_groups())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Exponent;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn fit_with(groups: Vec<Vec<usize>>, values: Vec<f64>, lambda: f64) -> FitResult {
        let partition = Arc::new(GroupPartition::with_default_weights(groups).unwrap());
        FitResult {
            beta: Coefficients::new(DVector::from_vec(values), partition).unwrap(),
            lambda,
            alpha: Exponent::TWO,
            objective: 0.0,
            kkt_residual: 0.0,
            iterations: 0,
            converged: true,
        }
    }

    fn three_groups() -> FitResult {
        // group norms 5, 3, 1
        fit_with(vec![vec![0, 1], vec![2], vec![3]], vec![3.0, 4.0, -3.0, 1.0], 0.1)
    }

    #[test]
    fn thresholding_examples() {
        let fit = three_groups();
        assert_eq!(threshold_group_lasso(&fit, 0.0, 100, None).values(), fit.beta.values());
        assert!(threshold_group_lasso(&fit, 6.0, 100, None).values().iter().all(|v| *v == 0.0));
        let t = threshold_group_lasso(&fit, 2.0, 100, None);
        assert_eq!(t.active_groups(), vec![0, 1]);
        assert_eq!(t.values()[3], 0.0);
    }

    #[test]
    fn cap_keeps_largest_groups() {
        let fit = three_groups();
        // 4 nonzero >= n = 4 triggers the cap.
        let t = threshold_group_lasso(&fit, 0.0, 4, Some(2));
        assert_eq!(t.active_groups(), vec![0, 1]);
        // default cap floor(4 / 2) - 1 = 1
        let t = threshold_group_lasso(&fit, 0.0, 4, None);
        assert_eq!(t.active_groups(), vec![0]);
        // ties broken by group index
        let tied = fit_with(vec![vec![0], vec![1], vec![2]], vec![1.0, -1.0, 1.0], 0.1);
        let t = threshold_group_lasso(&tied, 0.0, 3, Some(2));
        assert_eq!(t.active_groups(), vec![0, 1]);
    }

    #[test]
    fn default_threshold_examples() {
        let null = fit_with(vec![vec![0, 1]], vec![0.0, 0.0], 0.4);
        assert_eq!(default_threshold(&null, null.beta.partition()), 0.0);

        let groups: Vec<Vec<usize>> = (0..5).map(|j| (j * 10..(j + 1) * 10).collect()).collect();
        let mut values = vec![0.0; 50];
        for j in 0..4 {
            values[j * 10] = 1.0;
        }
        let fit = fit_with(groups, values, 0.4);
        assert_relative_eq!(default_threshold(&fit, fit.beta.partition()), 0.2 * 40f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(default_threshold(&fit, fit.beta.partition()), 1.2649110640673518, epsilon = 1e-12);

        let single = fit_with((0..12).map(|k| vec![k]).collect(), (0..12).map(|k| if k < 9 { 1.0 } else { 0.0 }).collect(), 0.2);
        assert_relative_eq!(default_threshold(&single, single.beta.partition()), 0.3, epsilon = 1e-15);
    }

    fn design(x: DMatrix<f64>, groups: Vec<Vec<usize>>) -> GroupedDesign {
        GroupedDesign::new(x, Arc::new(GroupPartition::with_default_weights(groups).unwrap())).unwrap()
    }

    #[test]
    fn refit_examples() {
        let d = design(DMatrix::from_element(4, 1, 1.0), vec![vec![0]]);
        let pe = refit_ols(&d, &DVector::from_vec(vec![1.0, 2.0, 3.0, 6.0]), &[0]).unwrap();
        assert_relative_eq!(pe.beta_tilde.values()[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(pe.sigma_hat.powi(2), 14.0 / 3.0, epsilon = 1e-12);

        let pe = refit_ols(&d, &DVector::from_vec(vec![1.0, -1.0, 1.0, -1.0]), &[]).unwrap();
        assert!(pe.beta_tilde.values().iter().all(|v| *v == 0.0));
        assert_relative_eq!(pe.sigma_hat, 1.0);

        let x = DMatrix::from_row_slice(4, 3, &[1.0, 0.0, 2.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 2.0, -1.0, 1.0]);
        let d = design(x.clone(), vec![vec![0, 1], vec![2]]);
        let y = x.columns(0, 2) * DVector::from_vec(vec![1.5, -2.0]);
        let pe = refit_ols(&d, &y, &[0]).unwrap();
        assert_relative_eq!(pe.beta_tilde.values()[0], 1.5, epsilon = 1e-12);
        assert_relative_eq!(pe.beta_tilde.values()[1], -2.0, epsilon = 1e-12);
        assert_eq!(pe.beta_tilde.values()[2], 0.0);
        assert!(pe.sigma_hat < 1e-7);
        assert_eq!(pe.active_groups, vec![0]);
    }

    #[test]
    fn refit_errors_and_rank_deficiency() {
        let d = design(DMatrix::from_element(2, 2, 1.0), vec![vec![0, 1]]);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(refit_ols(&d, &y, &[0]), Err(Error::OverdeterminedRefit { support: 2, n: 2 })));

        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
        let d = design(x, vec![vec![0, 1]]);
        let pe = refit_ols(&d, &DVector::from_vec(vec![2.0, 4.0, 6.0, 8.0]), &[0]).unwrap();
        assert!(pe.rank_deficient);
        assert_relative_eq!(pe.beta_tilde.values()[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(pe.beta_tilde.values()[1], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn margin_examples() {
        assert_relative_eq!(margin(&[2.0, 1.0]), 1.0 / 2f64.sqrt());
        assert_eq!(margin(&[1.0, -1.0]), 0.0);
        assert_relative_eq!(margin(&[3.0, -5.0, 0.5]), 2f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(margin(&[-4.0]), 4.0 / 2f64.sqrt());
    }

    proptest! {
        #[test]
        fn threshold_is_monotone(values in proptest::collection::vec(-3.0f64..3.0, 6), a in 0.0f64..4.0, b in 0.0f64..4.0) {
            let fit = fit_with(vec![vec![0, 1], vec![2], vec![3, 4, 5]], values, 0.1);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let big = threshold_group_lasso(&fit, lo, 100, None).active_groups();
            let small = threshold_group_lasso(&fit, hi, 100, None).active_groups();
            prop_assert!(small.iter().all(|j| big.contains(j)));
        }

        #[test]
        fn refit_residual_orthogonal(seed in 0u64..500) {
            let mut s = seed;
            let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); ((s >> 33) as f64) / (1u64 << 31) as f64 - 0.5 };
            let x = DMatrix::from_fn(12, 6, |_, _| next());
            let y = DVector::from_fn(12, |_, _| next());
            let d = design(x.clone(), vec![vec![0, 1], vec![2, 3], vec![4, 5]]);
            let pe = refit_ols(&d, &y, &[0, 2]).unwrap();
            let r = &y - &x * pe.beta_tilde.values();
            let xm = x.select_columns(&[0, 1, 4, 5]);
            prop_assert!((xm.tr_mul(&r)).amax() <= 1e-8);
            // never worse than any other coefficients on the same support
            let other = pe.beta_tilde.values().map(|v| v * 0.9);
            prop_assert!(r.norm() <= (&y - &x * other).norm() + 1e-12);
        }

        #[test]
        fn margin_sign_and_permutation_invariant(v in proptest::collection::vec(-5.0f64..5.0, 1..7)) {
            let m = margin(&v);
            let mut flipped: Vec<f64> = v.iter().map(|x| -x).collect();
            flipped.reverse();
            prop_assert_eq!(m, margin(&flipped));
            prop_assert!(m >= 0.0);
        }
    }
}
