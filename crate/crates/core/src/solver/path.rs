//! Regularization paths and K-fold cross-validation.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, stream_rng, Execution};
use crate::model::{Coefficients, Exponent, FitResult, GroupedDesign};
use crate::solver::bcd::{fit, group_correlation, SolverConfig};
use crate::solver::prox::check_exponent;

/// Smallest `lambda` at which `beta = 0` is optimal:
/// `max_j ||X_(j)^T y / n||_{a*} / w_j`.
pub fn lambda_max(design: &GroupedDesign, y: &DVector<f64>, alpha: Exponent) -> Result<f64> {
    check_exponent(alpha)?;
    if y.len() != design.n() {
        return Err(Error::InvalidData(format!(
            "response has length {} but design has {} rows",
            y.len(),
            design.n()
        )));
    }
    let dual = alpha.conjugate();
    let partition = design.partition();
    Ok((0..design.n_groups())
        .map(|j| dual.norm(group_correlation(design, y, j).as_slice()) / partition.weight(j))
        .fold(0.0, f64::max))
}

/// Strictly decreasing sequence of positive penalty levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaPath {
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSpec {
    pub n_lambda: usize,
    pub ratio_min: f64,
}

impl Default for PathSpec {
    fn default() -> Self {
        PathSpec { n_lambda: 100, ratio_min: 0.01 }
    }
}

impl LambdaPath {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidData("lambda path is empty".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidData("lambda path values must be positive".into()));
        }
        if values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidData("lambda path must be strictly decreasing".into()));
        }
        Ok(LambdaPath { values })
    }

    /// Log-spaced from `lambda_max` down to `ratio_min * lambda_max`.
    pub fn log_spaced(lambda_max: f64, spec: PathSpec) -> Result<Self> {
        if !(lambda_max.is_finite() && lambda_max > 0.0) {
            return Err(Error::InvalidData(format!(
                "lambda_max = {lambda_max}; a path needs a nonzero response"
            )));
        }
        if spec.n_lambda == 0 || !(spec.ratio_min > 0.0 && spec.ratio_min < 1.0) {
            return Err(Error::InvalidConfig(
                "path needs n_lambda >= 1 and ratio_min in (0, 1)".into(),
            ));
        }
        if spec.n_lambda == 1 {
            return Self::new(vec![lambda_max]);
        }
        let step = spec.ratio_min.ln() / (spec.n_lambda - 1) as f64;
        Self::new((0..spec.n_lambda).map(|i| lambda_max * (step * i as f64).exp()).collect())
    }

    pub fn for_data(design: &GroupedDesign, y: &DVector<f64>, alpha: Exponent, spec: PathSpec) -> Result<Self> {
        Self::log_spaced(lambda_max(design, y, alpha)?, spec)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Warm-started fits along the path.
pub fn fit_path(
    design: &GroupedDesign,
    y: &DVector<f64>,
    alpha: Exponent,
    path: &LambdaPath,
    config: &SolverConfig,
) -> Result<Vec<FitResult>> {
    let mut fits: Vec<FitResult> = Vec::with_capacity(path.len());
    for &lambda in path.values() {
        let warm: Option<&Coefficients> = fits.last().map(|f| &f.beta);
        let next = fit(design, y, lambda, alpha, config, warm)?;
        fits.push(next);
    }
    Ok(fits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda: f64,
    pub index: usize,
    /// Mean held-out squared prediction error per path value.
    pub errors: Vec<f64>,
}

/// K-fold cross-validation over `path`. Fold membership is a seeded shuffle;
/// ties in CV error go to the larger `lambda`.
#[allow(clippy::too_many_arguments)]
pub fn cv_select_lambda(
    design: &GroupedDesign,
    y: &DVector<f64>,
    alpha: Exponent,
    path: &LambdaPath,
    folds: usize,
    seed: u64,
    config: &SolverConfig,
    exec: Execution,
) -> Result<CvResult> {
    let n = design.n();
    if folds < 2 || n < folds {
        return Err(Error::InvalidFolds { folds, n });
    }
    if y.len() != n {
        return Err(Error::InvalidData(format!("response has length {} but design has {n} rows", y.len())));
    }
    if path.len() == 1 {
        return Ok(CvResult { lambda: path.values()[0], index: 0, errors: vec![f64::NAN] });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % folds;
    }

    let per_fold = map_indexed(folds, exec, |k| -> Result<Vec<f64>> {
        let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != k).collect();
        let test: Vec<usize> = (0..n).filter(|&i| assignment[i] == k).collect();
        let train_design = design.select_rows(&train)?;
        let y_train = y.select_rows(&train);
        let x_test = design.x().select_rows(&test);
        let y_test = y.select_rows(&test);
        let fits = fit_path(&train_design, &y_train, alpha, path, config)?;
        Ok(fits
            .iter()
            .map(|f| (&y_test - &x_test * f.beta.values()).norm_squared())
            .collect())
    });

    let mut totals = vec![0.0; path.len()];
    for fold in per_fold {
        for (t, e) in totals.iter_mut().zip(fold?) {
            *t += e;
        }
    }
    let errors: Vec<f64> = totals.into_iter().map(|t| t / n as f64).collect();
    let mut index = 0;
    for (i, &e) in errors.iter().enumerate() {
        if e < errors[index] {
            index = i;
        }
    }
    Ok(CvResult { lambda: path.values()[index], index, errors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GroupPartition;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn orthonormal_example() -> (GroupedDesign, DVector<f64>) {
        let partition = Arc::new(GroupPartition::with_default_weights(vec![vec![0, 1], vec![2, 3]]).unwrap());
        let design = GroupedDesign::new(DMatrix::identity(4, 4) * 2.0, partition).unwrap();
        (design, DVector::from_vec(vec![6.0, 8.0, 0.2, 0.2]))
    }

    #[test]
    fn lambda_max_examples() {
        let (design, y) = orthonormal_example();
        assert_relative_eq!(lambda_max(&design, &y, Exponent::TWO).unwrap(), 5.0 / 2f64.sqrt(), epsilon = 1e-12);
        assert_eq!(lambda_max(&design, &DVector::zeros(4), Exponent::TWO).unwrap(), 0.0);
    }

    #[test]
    fn fit_at_lambda_max_is_zero() {
        let (design, y) = orthonormal_example();
        for alpha in [Exponent::TWO, Exponent::INFINITY, Exponent::new(4.0).unwrap()] {
            let lmax = lambda_max(&design, &y, alpha).unwrap();
            let f = fit(&design, &y, lmax, alpha, &SolverConfig::default(), None).unwrap();
            assert!(f.beta.values().iter().all(|v| *v == 0.0));
            assert_eq!(f.kkt_residual, 0.0);
            let f = fit(&design, &y, 2.0 * lmax, alpha, &SolverConfig::default(), None).unwrap();
            assert!(f.beta.values().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn path_is_log_spaced() {
        let path = LambdaPath::log_spaced(2.0, PathSpec::default()).unwrap();
        assert_eq!(path.len(), 100);
        assert_eq!(path.values()[0], 2.0);
        assert_relative_eq!(path.values()[99], 0.02, epsilon = 1e-12);
        assert!(LambdaPath::new(vec![1.0, 1.0]).is_err());
        assert!(LambdaPath::log_spaced(0.0, PathSpec::default()).is_err());
    }

    #[test]
    fn cv_single_value_path_and_fold_errors() {
        let (design, y) = orthonormal_example();
        let path = LambdaPath::new(vec![0.7]).unwrap();
        let cfg = SolverConfig::default();
        let cv = cv_select_lambda(&design, &y, Exponent::TWO, &path, 2, 1, &cfg, Execution::Sequential).unwrap();
        assert_eq!(cv.lambda, 0.7);
        assert!(matches!(
            cv_select_lambda(&design, &y, Exponent::TWO, &path, 5, 1, &cfg, Execution::Sequential),
            Err(Error::InvalidFolds { folds: 5, n: 4 })
        ));
        assert!(cv_select_lambda(&design, &y, Exponent::TWO, &path, 1, 1, &cfg, Execution::Sequential).is_err());
    }
}
