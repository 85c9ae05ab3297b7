//! Block proximal-gradient coordinate descent for
//! `1/2 ||y - X b||^2 + n lambda sum_j w_j ||b_(j)||_a`.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::stream_rng;
use crate::model::{Coefficients, Exponent, FitResult, GroupedDesign};
use crate::solver::prox::{check_exponent, prox_group_lalpha};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BlockOrder {
    #[default]
    Cyclic,
    Randomized {
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Maximum number of full sweeps over the blocks.
    pub max_iterations: usize,
    pub kkt_tolerance: f64,
    /// Relative objective change below which a sweep counts as stalled.
    pub objective_tolerance: f64,
    pub block_order: BlockOrder,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 10_000,
            kkt_tolerance: 1e-8,
            objective_tolerance: 1e-12,
            block_order: BlockOrder::Cyclic,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.kkt_tolerance > 0.0 && self.objective_tolerance > 0.0) {
            return Err(Error::InvalidConfig("solver tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Consecutive sweeps with a flat objective and no halving of the KKT
/// residual before giving up on the KKT target.
const STALL_PATIENCE: usize = 50;
/// Proximal-gradient steps per block visit.
const INNER_STEPS: usize = 10;
/// Relative objective decrease above which a sweep skips the KKT check.
const KKT_CHECK_RATIO: f64 = 1e-7;
/// Sweeps between full residual recomputations.
const RESIDUAL_REFRESH: usize = 64;

/// `1/2 ||y - X b||^2 + n lambda sum_j w_j ||b_(j)||_a`.
pub fn penalized_objective(
    design: &GroupedDesign,
    y: &DVector<f64>,
    beta: &Coefficients,
    lambda: f64,
    alpha: Exponent,
) -> f64 {
    let r = y - design.predict(beta);
    objective_from_residual(design, &r, beta, lambda, alpha)
}

fn objective_from_residual(
    design: &GroupedDesign,
    r: &DVector<f64>,
    beta: &Coefficients,
    lambda: f64,
    alpha: Exponent,
) -> f64 {
    0.5 * r.norm_squared() + design.n() as f64 * lambda * beta.weighted_group_norm(alpha)
}

/// `X_(j)^T r / n`.
pub(crate) fn group_correlation(design: &GroupedDesign, r: &DVector<f64>, j: usize) -> DVector<f64> {
    design.block(j).tr_mul(r) / design.n() as f64
}

/// Distance from `g` to `scale * subdifferential(||.||_a)(b)` for `b != 0`.
fn subgradient_distance(g: &DVector<f64>, b: &DVector<f64>, scale: f64, alpha: Exponent) -> f64 {
    let a = alpha.value();
    if a == 2.0 {
        return (g - b * (scale / b.norm())).norm();
    }
    if alpha.is_infinite() {
        // Subdifferential: convex hull of sign(b_k) e_k over the maximal
        // coordinates. Off-maximal coordinates of g must vanish; the rest are
        // projected onto the scaled simplex.
        let max = b.amax();
        let tied: Vec<bool> = b.iter().map(|x| x.abs() >= max * (1.0 - 1e-12)).collect();
        let mut off = 0.0;
        let mut h = Vec::new();
        for k in 0..b.len() {
            if tied[k] {
                h.push(b[k].signum() * g[k]);
            } else {
                off += g[k] * g[k];
            }
        }
        let proj = project_simplex(&h, scale);
        let on: f64 = h.iter().zip(&proj).map(|(x, p)| (x - p).powi(2)).sum();
        return (off + on).sqrt();
    }
    let norm = alpha.norm(b.as_slice());
    let grad = b.map(|x| x.signum() * (x.abs() / norm).powf(a - 1.0));
    (g - grad * scale).norm()
}

/// Projection onto `{s >= 0, sum s = total}`.
fn project_simplex(h: &[f64], total: f64) -> Vec<f64> {
    let mut sorted = h.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let candidate = (cumsum - total) / (i + 1) as f64;
        if s > candidate {
            theta = candidate;
        }
    }
    h.iter().map(|x| (x - theta).max(0.0)).collect()
}

fn kkt_from_residual(
    design: &GroupedDesign,
    r: &DVector<f64>,
    beta: &Coefficients,
    lambda: f64,
    alpha: Exponent,
) -> f64 {
    let dual = alpha.conjugate();
    let partition = design.partition();
    (0..design.n_groups())
        .map(|j| {
            let g = group_correlation(design, r, j);
            let w = partition.weight(j);
            if beta.is_group_active(j) {
                subgradient_distance(&g, &beta.group_unchecked(j), lambda * w, alpha)
            } else {
                w * (dual.norm(g.as_slice()) / w - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Largest violation of the stationarity conditions at `beta`, measured on
/// the gradient scale `X_(j)^T (y - X b) / n`.
pub fn kkt_residual(
    design: &GroupedDesign,
    y: &DVector<f64>,
    beta: &Coefficients,
    lambda: f64,
    alpha: Exponent,
) -> f64 {
    let r = y - design.predict(beta);
    kkt_from_residual(design, &r, beta, lambda, alpha)
}

fn check_inputs(design: &GroupedDesign, y: &DVector<f64>, lambda: f64) -> Result<()> {
    if y.len() != design.n() {
        return Err(Error::InvalidData(format!(
            "response has length {} but design has {} rows",
            y.len(),
            design.n()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("response contains non-finite values".into()));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidData(format!("lambda = {lambda} must be finite and nonnegative")));
    }
    Ok(())
}

/// Solve the penalized least-squares problem by block coordinate descent.
pub fn fit(
    design: &GroupedDesign,
    y: &DVector<f64>,
    lambda: f64,
    alpha: Exponent,
    config: &SolverConfig,
    warm_start: Option<&Coefficients>,
) -> Result<FitResult> {
    fit_traced(design, y, lambda, alpha, config, warm_start, |_| {})
}

/// [`fit`] with a callback receiving the objective after every sweep.
pub fn fit_traced(
    design: &GroupedDesign,
    y: &DVector<f64>,
    lambda: f64,
    alpha: Exponent,
    config: &SolverConfig,
    warm_start: Option<&Coefficients>,
    mut on_sweep: impl FnMut(f64),
) -> Result<FitResult> {
    check_exponent(alpha)?;
    check_inputs(design, y, lambda)?;
    config.validate()?;

    let partition = design.partition();
    let mut beta = match warm_start {
        Some(w) if w.values().len() == design.p() => {
            Coefficients::new(w.values().clone(), partition.clone())?
        }
        Some(w) => {
            return Err(Error::InvalidData(format!(
                "warm start has length {} but design has {} columns",
                w.values().len(),
                design.p()
            )))
        }
        None => Coefficients::zeros(partition.clone()),
    };
    for j in 0..design.n_groups() {
        if design.lipschitz(j) == 0.0 && beta.is_group_active(j) {
            beta.set_group(j, &DVector::zeros(partition.group_size(j)));
        }
    }

    let n = design.n() as f64;
    let mut r = y - design.predict(&beta);
    let mut objective = objective_from_residual(design, &r, &beta, lambda, alpha);
    let mut kkt = kkt_from_residual(design, &r, &beta, lambda, alpha);
    let mut order: Vec<usize> = (0..design.n_groups()).collect();
    let mut rng = match config.block_order {
        BlockOrder::Randomized { seed } => Some(stream_rng(seed, 0)),
        BlockOrder::Cyclic => None,
    };

    let mut iterations = 0;
    let mut stalled = 0;
    let mut stall_kkt = f64::INFINITY;
    while kkt > config.kkt_tolerance && iterations < config.max_iterations {
        iterations += 1;
        if let Some(rng) = rng.as_mut() {
            order.shuffle(rng);
        }
        for &j in &order {
            let lip = design.lipschitz(j);
            if lip == 0.0 {
                continue;
            }
            let block = design.block(j);
            let gram = design.gram(j);
            let current = beta.group_unchecked(j);
            let threshold = n * lambda * partition.weight(j) / lip;
            // Gradient of the block objective is `c - G b`.
            let c = block.tr_mul(&r) + gram * &current;
            let mut updated = current.clone();
            for _ in 0..INNER_STEPS {
                let step = (&c - gram * &updated) / lip;
                let next = prox_group_lalpha(&(&updated + step), threshold, alpha)?;
                let moved = (&next - &updated).amax();
                updated = next;
                if moved <= 1e-12 * updated.amax() {
                    break;
                }
            }
            let delta = &updated - &current;
            if delta.iter().any(|d| *d != 0.0) {
                r.gemv(-1.0, block, &delta, 1.0);
                beta.set_group(j, &updated);
            }
        }
        if iterations % RESIDUAL_REFRESH == 0 {
            r = y - design.predict(&beta);
        }
        let next = objective_from_residual(design, &r, &beta, lambda, alpha);
        on_sweep(next);
        let decrease = (objective - next).abs();
        if decrease <= KKT_CHECK_RATIO * next.abs() || iterations == config.max_iterations {
            kkt = kkt_from_residual(design, &r, &beta, lambda, alpha);
        }
        let flat = decrease <= config.objective_tolerance * next.abs().max(f64::MIN_POSITIVE);
        if flat && stalled > 0 && kkt >= 0.5 * stall_kkt {
            stalled += 1;
            if stalled >= STALL_PATIENCE {
                break;
            }
        } else if flat {
            stalled = 1;
            stall_kkt = kkt;
        } else {
            stalled = 0;
        }
        objective = next;
    }

    let r = y - design.predict(&beta);
    let kkt_residual = kkt_from_residual(design, &r, &beta, lambda, alpha);
    Ok(FitResult {
        objective: objective_from_residual(design, &r, &beta, lambda, alpha),
        converged: kkt_residual <= config.kkt_tolerance,
        beta,
        lambda,
        alpha,
        kkt_residual,
        iterations,
    })
}
