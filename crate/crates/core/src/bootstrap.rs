//! Parametric bootstrap for penalized group regression.
//!
//! Given a point estimate `(beta_tilde, sigma_hat)` each replicate draws
//! `y* = X beta_tilde + eps*`, refits the penalized problem at the original
//! `lambda`, and records `f_j = ||L_j (beta*_(j) - beta_tilde_(j))||^2` for
//! every group (`L_j = X_(j)` unless custom matrices are supplied). Group
//! `j` is rejected at level `gamma` when `||L_j beta_hat_(j)||^2` exceeds the
//! bootstrap `(1 - gamma)`-quantile of `f_j`.

use std::fmt::Write as _;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{derive_seed, map_indexed, stream_rng, Execution};
use crate::model::{Coefficients, Exponent, FitResult, GroupedDesign};
use crate::pointest::{
    default_threshold, threshold_keeping, thresholded_refit, PointEstimate, PointEstimateReport,
};
use crate::solver::{cv_select_lambda, fit, LambdaPath, PathSpec, SolverConfig};

/// Distribution of the simulated errors. Every law has mean zero.
#[derive(Debug, Clone, PartialEq)]
pub enum ErrorLaw {
    Gaussian { sigma: f64 },
    /// Resampling with replacement from a centered residual pool.
    Residual { pool: Vec<f64> },
    /// `+-sigma` with equal probability.
    Rademacher { sigma: f64 },
    /// Uniform on `[-sqrt(3) sigma, sqrt(3) sigma]`.
    Uniform { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawKind {
    #[default]
    Gaussian,
    Residual,
    Rademacher,
    Uniform,
}

impl ErrorLaw {
    pub fn residual(residuals: &[f64]) -> Result<Self> {
        if residuals.is_empty() {
            return Err(Error::InvalidData("residual pool is empty".into()));
        }
        let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
        Ok(ErrorLaw::Residual { pool: residuals.iter().map(|r| r - mean).collect() })
    }

    /// Law of `kind` scaled to `sigma`, or built from `residuals`.
    pub fn from_kind(kind: LawKind, sigma: f64, residuals: &[f64]) -> Result<Self> {
        Ok(match kind {
            LawKind::Gaussian => ErrorLaw::Gaussian { sigma },
            LawKind::Rademacher => ErrorLaw::Rademacher { sigma },
            LawKind::Uniform => ErrorLaw::Uniform { sigma },
            LawKind::Residual => Self::residual(residuals)?,
        })
    }

    /// Standard deviation of the law.
    pub fn scale(&self) -> f64 {
        match self {
            ErrorLaw::Gaussian { sigma } | ErrorLaw::Rademacher { sigma } | ErrorLaw::Uniform { sigma } => *sigma,
            ErrorLaw::Residual { pool } => {
                (pool.iter().map(|r| r * r).sum::<f64>() / pool.len() as f64).sqrt()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DVector<f64> {
        match self {
            ErrorLaw::Gaussian { sigma } => {
                DVector::from_fn(n, |_, _| sigma * rng.sample::<f64, _>(StandardNormal))
            }
            ErrorLaw::Rademacher { sigma } => {
                DVector::from_fn(n, |_, _| if rng.random::<bool>() { *sigma } else { -sigma })
            }
            ErrorLaw::Uniform { sigma } => {
                let half = 3f64.sqrt() * sigma;
                if half == 0.0 {
                    return DVector::zeros(n);
                }
                let dist = Uniform::new_inclusive(-half, half).expect("finite bounds");
                DVector::from_fn(n, |_, _| dist.sample(rng))
            }
            ErrorLaw::Residual { pool } => {
                DVector::from_fn(n, |_, _| pool[rng.random_range(0..pool.len())])
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let s = self.scale();
        if !(s.is_finite() && s >= 0.0) {
            return Err(Error::InvalidData(format!("error law scale {s} is invalid")));
        }
        Ok(())
    }
}

/// Matrices `L_j` defining `f_j(d) = ||L_j d||^2`.
#[derive(Debug, Clone, Default)]
pub enum StatisticMatrices {
    /// `L_j = X_(j)`.
    #[default]
    Design,
    /// One matrix per group, each with `p_j` columns.
    Custom(Vec<DMatrix<f64>>),
}

impl StatisticMatrices {
    pub fn validate(&self, design: &GroupedDesign) -> Result<()> {
        if let StatisticMatrices::Custom(ms) = self {
            if ms.len() != design.n_groups() {
                return Err(Error::InvalidConfig(format!(
                    "{} statistic matrices for {} groups",
                    ms.len(),
                    design.n_groups()
                )));
            }
            for (j, m) in ms.iter().enumerate() {
                if m.ncols() != design.partition().group_size(j) {
                    return Err(Error::InvalidConfig(format!(
                        "statistic matrix {} has {} columns, group has {}",
                        j + 1,
                        m.ncols(),
                        design.partition().group_size(j)
                    )));
                }
            }
        }
        Ok(())
    }

    fn matrix<'a>(&'a self, design: &'a GroupedDesign, j: usize) -> &'a DMatrix<f64> {
        match self {
            StatisticMatrices::Design => design.block(j),
            StatisticMatrices::Custom(ms) => &ms[j],
        }
    }

    /// `f_j(d) = ||L_j d||^2`.
    pub fn statistic(&self, design: &GroupedDesign, j: usize, d: &DVector<f64>) -> f64 {
        (self.matrix(design, j) * d).norm_squared()
    }

    /// Half-width of the confidence interval for a singleton group.
    fn half_width(&self, design: &GroupedDesign, j: usize, quantile: f64) -> Option<f64> {
        let m = self.matrix(design, j);
        if m.ncols() != 1 {
            return None;
        }
        let scale = m.norm();
        Some(if scale == 0.0 { f64::INFINITY } else { quantile.sqrt() / scale })
    }
}

/// Group statistics of one replicate.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub stats: Vec<f64>,
    pub converged: bool,
    pub kkt_residual: f64,
}

/// One bootstrap replicate: simulate, refit at `lambda`, compute `f_j` for
/// every group.
#[allow(clippy::too_many_arguments)]
pub fn draw_bootstrap_sample<R: Rng + ?Sized>(
    design: &GroupedDesign,
    point: &PointEstimate,
    law: &ErrorLaw,
    lambda: f64,
    alpha: Exponent,
    config: &SolverConfig,
    matrices: &StatisticMatrices,
    rng: &mut R,
) -> Result<Replicate> {
    let eps = law.sample(design.n(), rng);
    let y_star = design.predict(&point.beta_tilde) + eps;
    let refit = fit(design, &y_star, lambda, alpha, config, Some(&point.beta_tilde))?;
    let stats = (0..design.n_groups())
        .map(|j| {
            let d = refit.beta.group(j).expect("group in range") - point.beta_tilde.group(j).expect("group in range");
            matrices.statistic(design, j, &d)
        })
        .collect();
    Ok(Replicate { stats, converged: refit.converged, kkt_residual: refit.kkt_residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSettings {
    pub replicates: usize,
    pub seed: u64,
    /// Redraws allowed for a replicate whose refit does not converge.
    pub max_retries: usize,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        BootstrapSettings { replicates: 300, seed: 0, max_retries: 3 }
    }
}

/// `N x J` replicate statistics plus the RNG stream used for each row.
#[derive(Debug, Clone)]
pub struct BootstrapRun {
    pub stats: Vec<Vec<f64>>,
    pub streams: Vec<u64>,
    pub retries: usize,
    pub lambda: f64,
    pub alpha: Exponent,
}

impl BootstrapRun {
    pub fn replicates(&self) -> usize {
        self.stats.len()
    }

    /// Replicate values of `f_j`.
    pub fn group_stats(&self, j: usize) -> Vec<f64> {
        self.stats.iter().map(|row| row[j]).collect()
    }
}

/// Stream id for replicate `index`, attempt `attempt`.
fn replicate_stream(index: usize, attempt: usize) -> u64 {
    ((index as u64) << 8) | attempt as u64
}

#[allow(clippy::too_many_arguments)]
pub fn bootstrap_run(
    design: &GroupedDesign,
    point: &PointEstimate,
    law: &ErrorLaw,
    lambda: f64,
    alpha: Exponent,
    config: &SolverConfig,
    matrices: &StatisticMatrices,
    settings: &BootstrapSettings,
    exec: Execution,
) -> Result<BootstrapRun> {
    if settings.replicates == 0 {
        return Err(Error::InvalidConfig("at least one bootstrap replicate is required".into()));
    }
    law.validate()?;
    matrices.validate(design)?;
    let rows = map_indexed(settings.replicates, exec, |i| -> Result<(Vec<f64>, u64, usize)> {
        for attempt in 0..=settings.max_retries {
            let stream = replicate_stream(i, attempt);
            let mut rng = stream_rng(settings.seed, stream);
            let rep = draw_bootstrap_sample(design, point, law, lambda, alpha, config, matrices, &mut rng)?;
            if rep.converged {
                return Ok((rep.stats, stream, attempt));
            }
            warn!("replicate {i} attempt {attempt} did not converge (kkt {:.3e})", rep.kkt_residual);
        }
        Err(Error::NonConvergence { replicate: i, attempts: settings.max_retries + 1 })
    });
    let mut stats = Vec::with_capacity(settings.replicates);
    let mut streams = Vec::with_capacity(settings.replicates);
    let mut retries = 0;
    for row in rows {
        let (s, stream, attempt) = row?;
        stats.push(s);
        streams.push(stream);
        retries += attempt;
    }
    Ok(BootstrapRun { stats, streams, retries, lambda, alpha })
}

/// `ceil((1 - gamma) N)`-th order statistic.
pub fn bootstrap_quantile(stats: &[f64], gamma: f64) -> f64 {
    assert!(!stats.is_empty(), "quantile of an empty sample");
    let mut sorted = stats.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len();
    let k = ((1.0 - gamma) * n as f64 - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[k - 1]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupTest {
    pub reject: bool,
    pub p_value: f64,
    pub quantile: f64,
}

/// Reject when `statistic` exceeds the bootstrap quantile; the p-value is
/// `(1 + #{stats >= statistic}) / (N + 1)`.
pub fn test_group(statistic: f64, stats: &[f64], gamma: f64) -> GroupTest {
    let quantile = bootstrap_quantile(stats, gamma);
    let exceed = stats.iter().filter(|s| **s >= statistic).count();
    GroupTest {
        reject: statistic > quantile,
        p_value: (1 + exceed) as f64 / (stats.len() + 1) as f64,
        quantile,
    }
}

/// Whether `theta` lies in the confidence region of group `j`:
/// `f_j(beta_hat_(j) - theta) <= quantile`.
pub fn region_covers(
    design: &GroupedDesign,
    matrices: &StatisticMatrices,
    j: usize,
    beta_hat_group: &DVector<f64>,
    theta: &DVector<f64>,
    quantile: f64,
) -> bool {
    matrices.statistic(design, j, &(beta_hat_group - theta)) <= quantile
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupInference {
    /// 0-based group index.
    pub group: usize,
    pub size: usize,
    /// `||L_j beta_hat_(j)||^2`.
    pub statistic: f64,
    pub quantile: f64,
    pub p_value: f64,
    pub reject: bool,
    /// Whether the region covers the supplied true coefficients.
    pub covered: Option<bool>,
    /// Confidence interval for singleton groups.
    pub interval: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceSummary {
    pub groups: Vec<GroupInference>,
    pub lambda: f64,
    pub alpha: Exponent,
    pub gamma: f64,
    pub replicates: usize,
    pub retries: usize,
    pub threshold: f64,
    pub beta_hat: Vec<f64>,
    pub point: PointEstimateReport,
    pub warnings: Vec<String>,
}

impl InferenceSummary {
    pub fn rejected(&self) -> Vec<usize> {
        self.groups.iter().filter(|g| g.reject).map(|g| g.group).collect()
    }

    /// One row per group: `j,T_j,quantile,p,reject,covered`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("j,T_j,quantile,p,reject,covered\n");
        for g in &self.groups {
            let covered = g.covered.map(|c| c.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{},{}",
                g.group + 1,
                g.statistic,
                g.quantile,
                g.p_value,
                g.reject,
                covered
            );
        }
        out
    }
}

/// Tests, regions and optional coverage against `truth` for every group.
#[allow(clippy::too_many_arguments)]
pub fn summarize(
    design: &GroupedDesign,
    beta_hat: &FitResult,
    point: &PointEstimate,
    run: &BootstrapRun,
    matrices: &StatisticMatrices,
    gamma: f64,
    threshold: f64,
    truth: Option<&Coefficients>,
) -> InferenceSummary {
    let mut warnings = Vec::new();
    if (run.replicates() as f64) < 1.0 / gamma {
        let msg = format!(
            "only {} bootstrap replicates at gamma = {gamma}; the quantile is the sample maximum",
            run.replicates()
        );
        warn!("{msg}");
        warnings.push(msg);
    }
    let degenerate = point.sigma_hat == 0.0;
    if degenerate {
        let msg = "sigma_hat = 0: replicate statistics are deterministic and no group is rejected".to_string();
        warn!("{msg}");
        warnings.push(msg);
    }
    if point.rank_deficient {
        warnings.push("refit design was rank deficient; minimum-norm refit used".into());
    }
    if run.retries > 0 {
        warnings.push(format!("{} replicate redraws after non-convergence", run.retries));
    }

    let groups = (0..design.n_groups())
        .map(|j| {
            let b = beta_hat.beta.group_unchecked(j);
            let statistic = matrices.statistic(design, j, &b);
            let stats = run.group_stats(j);
            let test = test_group(statistic, &stats, gamma);
            let covered = truth.map(|t| region_covers(design, matrices, j, &b, &t.group_unchecked(j), test.quantile));
            let interval = matrices.half_width(design, j, test.quantile).map(|h| (b[0] - h, b[0] + h));
            GroupInference {
                group: j,
                size: b.len(),
                statistic,
                quantile: test.quantile,
                p_value: test.p_value,
                reject: test.reject && !degenerate,
                covered,
                interval,
            }
        })
        .collect();

    InferenceSummary {
        groups,
        lambda: run.lambda,
        alpha: run.alpha,
        gamma,
        replicates: run.replicates(),
        retries: run.retries,
        threshold,
        beta_hat: beta_hat.beta.values().iter().copied().collect(),
        point: PointEstimateReport::from(point),
        warnings,
    }
}

/// How the thresholded estimate is formed from the CV fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ThresholdRule {
    /// `lambda sqrt(q p_max) / 2`.
    #[default]
    Default,
    Fixed { value: f64 },
    /// Keep the `k` largest groups.
    KeepTop { k: usize },
}

impl ThresholdRule {
    pub fn resolve(&self, fit: &FitResult) -> f64 {
        match *self {
            ThresholdRule::Default => default_threshold(fit, fit.beta.partition()),
            ThresholdRule::Fixed { value } => value,
            ThresholdRule::KeepTop { k } => threshold_keeping(fit, k),
        }
    }
}

/// Everything `run_inference` needs besides the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub gamma: f64,
    pub replicates: usize,
    pub alpha: Exponent,
    pub folds: usize,
    pub path: PathSpec,
    pub solver: SolverConfig,
    pub law: LawKind,
    pub threshold: ThresholdRule,
    /// Groups kept when the thresholded estimate has `n` or more nonzeros;
    /// `None` means `floor(n / p_max) - 1`.
    pub cap: Option<usize>,
    pub max_retries: usize,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            gamma: 0.05,
            replicates: 300,
            alpha: Exponent::TWO,
            folds: 10,
            path: PathSpec::default(),
            solver: SolverConfig::default(),
            law: LawKind::Gaussian,
            threshold: ThresholdRule::Default,
            cap: None,
            max_retries: 3,
            seed: 0,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig(format!("gamma = {} must lie in (0, 1)", self.gamma)));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("replicates must be at least 1".into()));
        }
        self.solver.validate()
    }

    fn settings(&self) -> BootstrapSettings {
        BootstrapSettings {
            replicates: self.replicates,
            seed: derive_seed(self.seed, 1),
            max_retries: self.max_retries,
        }
    }
}

/// Output of the end-to-end pipeline.
#[derive(Debug, Clone)]
pub struct Inference {
    pub summary: InferenceSummary,
    pub fit: FitResult,
    pub point: PointEstimate,
    pub run: BootstrapRun,
    pub cv_errors: Vec<f64>,
}

/// Cross-validated group lasso fit at the selected `lambda`.
pub fn cv_fit(
    design: &GroupedDesign,
    y: &DVector<f64>,
    config: &InferenceConfig,
    exec: Execution,
) -> Result<(FitResult, Vec<f64>)> {
    config.validate()?;
    let path = LambdaPath::for_data(design, y, config.alpha, config.path)?;
    let cv = cv_select_lambda(
        design,
        y,
        config.alpha,
        &path,
        config.folds,
        derive_seed(config.seed, 0),
        &config.solver,
        exec,
    )?;
    let fit = fit(design, y, cv.lambda, config.alpha, &config.solver, None)?;
    if !fit.converged {
        warn!("fit at the selected lambda stopped with kkt residual {:.3e}", fit.kkt_residual);
    }
    Ok((fit, cv.errors))
}

/// Threshold, refit and bootstrap an existing fit.
#[allow(clippy::too_many_arguments)]
pub fn infer_from_fit(
    design: &GroupedDesign,
    y: &DVector<f64>,
    fit: &FitResult,
    config: &InferenceConfig,
    threshold: ThresholdRule,
    matrices: &StatisticMatrices,
    truth: Option<&Coefficients>,
    exec: Execution,
) -> Result<(InferenceSummary, PointEstimate, BootstrapRun)> {
    let b_th = threshold.resolve(fit);
    let point = thresholded_refit(design, y, fit, b_th, config.cap)?;
    let residuals = y - design.predict(&point.beta_tilde);
    let law = ErrorLaw::from_kind(config.law, point.sigma_hat, residuals.as_slice())?;
    let run = bootstrap_run(
        design,
        &point,
        &law,
        fit.lambda,
        fit.alpha,
        &config.solver,
        matrices,
        &config.settings(),
        exec,
    )?;
    let summary = summarize(design, fit, &point, &run, matrices, config.gamma, b_th, truth);
    Ok((summary, point, run))
}

/// CV `lambda`, fit, threshold, refit, bootstrap, test every group.
pub fn run_inference(
    design: &GroupedDesign,
    y: &DVector<f64>,
    config: &InferenceConfig,
    truth: Option<&Coefficients>,
    exec: Execution,
) -> Result<Inference> {
    let (fit, cv_errors) = cv_fit(design, y, config, exec)?;
    let (summary, point, run) = infer_from_fit(
        design,
        y,
        &fit,
        config,
        config.threshold,
        &StatisticMatrices::Design,
        truth,
        exec,
    )?;
    Ok(Inference { summary, fit, point, run, cv_errors })
}
