//! Synthetic designs, true coefficients, grouping schemes and CSV ingestion.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::exec::stream_rng;
use crate::model::GroupPartition;

/// Size of the plain groups in the P1 and P2 schemes.
pub const BLOCK_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CovarianceKind {
    /// `Sigma_jk = r^|j-k|`.
    Toeplitz { r: f64 },
    /// `(Sigma^-1)_jk = r^|j-k|`.
    ExpdecayInverse { r: f64 },
    Identity,
}

impl CovarianceKind {
    /// Short setting label: `i` for Toeplitz, `ii` for exponential decay.
    pub fn label(&self) -> &'static str {
        match self {
            CovarianceKind::Toeplitz { .. } => "i",
            CovarianceKind::ExpdecayInverse { .. } => "ii",
            CovarianceKind::Identity => "I",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModel {
    pub kind: CovarianceKind,
    pub p: usize,
}

fn power_matrix(p: usize, r: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |j, k| r.powi(j.abs_diff(k) as i32))
}

pub fn make_sigma(model: &CovarianceModel) -> Result<DMatrix<f64>> {
    let p = model.p;
    let check_r = |r: f64| {
        if r > 0.0 && r < 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("covariance parameter r = {r} must lie in (0, 1)")))
        }
    };
    let sigma = match model.kind {
        CovarianceKind::Identity => DMatrix::identity(p, p),
        CovarianceKind::Toeplitz { r } => {
            check_r(r)?;
            power_matrix(p, r)
        }
        CovarianceKind::ExpdecayInverse { r } => {
            check_r(r)?;
            let chol = power_matrix(p, r)
                .cholesky()
                .ok_or_else(|| Error::NumericFailure("precision matrix is not positive definite".into()))?;
            let inv = chol.inverse();
            (&inv + inv.transpose()) * 0.5
        }
    };
    if sigma.clone().cholesky().is_none() {
        return Err(Error::NumericFailure("covariance matrix is not positive definite".into()));
    }
    Ok(sigma)
}

/// `n` rows drawn from `N_p(0, sigma)`: `X = Z L^T` with `sigma = L L^T`.
pub fn sample_design(n: usize, sigma: &DMatrix<f64>, seed: u64) -> Result<DMatrix<f64>> {
    let l = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericFailure("covariance matrix is not positive definite".into()))?
        .l();
    let p = sigma.nrows();
    let mut rng = stream_rng(seed, 0);
    let z = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(z * l.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    #[default]
    Head,
    EvenlySpaced,
}

impl Placement {
    pub fn label(&self) -> &'static str {
        match self {
            Placement::Head => "1",
            Placement::EvenlySpaced => "2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Amplitude {
    /// `Unif(-b, b)`.
    Uniform { b: f64 },
    /// `+-epsilon` with random signs.
    Fixed { epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSpec {
    pub s0: usize,
    pub placement: Placement,
    pub amplitude: Amplitude,
    pub seed: u64,
}

/// 0-based support of `s0` active coefficients among `p`.
pub fn support_indices(s0: usize, p: usize, placement: Placement) -> Result<Vec<usize>> {
    if s0 > p {
        return Err(Error::InvalidSpec(format!("s0 = {s0} exceeds p = {p}")));
    }
    Ok(match placement {
        Placement::Head => (0..s0).collect(),
        Placement::EvenlySpaced => {
            let mut idx: Vec<usize> = (1..=s0)
                .map(|i| ((i * p) as f64 / s0 as f64).round() as usize)
                .map(|k| k.clamp(1, p) - 1)
                .collect();
            idx.dedup();
            idx
        }
    })
}

pub(crate) fn draw_amplitudes<R: Rng + ?Sized>(amplitude: Amplitude, count: usize, rng: &mut R) -> Result<Vec<f64>> {
    match amplitude {
        Amplitude::Uniform { b } => {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::InvalidSpec(format!("amplitude bound {b} must be positive")));
            }
            let dist = Uniform::new(-b, b).expect("valid bounds");
            Ok((0..count).map(|_| dist.sample(rng)).collect())
        }
        Amplitude::Fixed { epsilon } => {
            if !epsilon.is_finite() {
                return Err(Error::InvalidSpec(format!("amplitude {epsilon} must be finite")));
            }
            Ok((0..count).map(|_| if rng.random::<bool>() { epsilon } else { -epsilon }).collect())
        }
    }
}

/// True coefficient vector `beta_0`.
pub fn assign_coefficients(spec: &CoefficientSpec, p: usize) -> Result<DVector<f64>> {
    let support = support_indices(spec.s0, p, spec.placement)?;
    let mut rng = stream_rng(spec.seed, 0);
    let values = draw_amplitudes(spec.amplitude, support.len(), &mut rng)?;
    let mut beta = DVector::zeros(p);
    for (k, v) in support.into_iter().zip(values) {
        beta[k] = v;
    }
    Ok(beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GroupingScheme {
    /// The active coefficients form one group; the rest are consecutive
    /// blocks of ten.
    P1,
    /// Two groups, each mixing half of the active coefficients with as many
    /// zero ones; the rest are consecutive blocks of ten.
    P2,
    Singleton,
    FixedSize { m: usize },
}

impl GroupingScheme {
    pub fn label(&self) -> String {
        match self {
            GroupingScheme::P1 => "P1".into(),
            GroupingScheme::P2 => "P2".into(),
            GroupingScheme::Singleton => "singleton".into(),
            GroupingScheme::FixedSize { m } => format!("size{m}"),
        }
    }
}

fn consecutive_blocks(indices: &[usize], size: usize) -> Result<Vec<Vec<usize>>> {
    if !indices.len().is_multiple_of(size) {
        return Err(Error::InvalidGrouping(format!(
            "{} remaining coefficients do not split into blocks of {size}",
            indices.len()
        )));
    }
    Ok(indices.chunks(size).map(|c| c.to_vec()).collect())
}

/// Partition of `p` coefficients given the 0-based support of `beta_0`.
pub fn grouping_scheme(scheme: GroupingScheme, p: usize, support: &[usize]) -> Result<GroupPartition> {
    let mut active = support.to_vec();
    active.sort_unstable();
    active.dedup();
    if active.last().is_some_and(|&k| k >= p) {
        return Err(Error::InvalidGrouping(format!("support index beyond p = {p}")));
    }
    let inactive: Vec<usize> = (0..p).filter(|k| active.binary_search(k).is_err()).collect();
    let groups = match scheme {
        GroupingScheme::Singleton => (0..p).map(|k| vec![k]).collect(),
        GroupingScheme::FixedSize { m } => {
            if m == 0 {
                return Err(Error::InvalidGrouping("group size must be positive".into()));
            }
            return GroupPartition::consecutive(p, m);
        }
        GroupingScheme::P1 => {
            let mut groups = Vec::new();
            if !active.is_empty() {
                groups.push(active.clone());
            }
            groups.extend(consecutive_blocks(&inactive, BLOCK_SIZE)?);
            groups
        }
        GroupingScheme::P2 => {
            if !active.len().is_multiple_of(2) || active.is_empty() {
                return Err(Error::InvalidGrouping(format!(
                    "P2 needs an even, nonzero number of active coefficients, got {}",
                    active.len()
                )));
            }
            let half = active.len() / 2;
            if inactive.len() < active.len() {
                return Err(Error::InvalidGrouping("too few zero coefficients for P2".into()));
            }
            let mut groups = Vec::new();
            for g in 0..2 {
                let mut group: Vec<usize> = active[g * half..(g + 1) * half].to_vec();
                group.extend_from_slice(&inactive[g * half..(g + 1) * half]);
                group.sort_unstable();
                groups.push(group);
            }
            groups.extend(consecutive_blocks(&inactive[2 * half..], BLOCK_SIZE)?);
            groups
        }
    };
    GroupPartition::with_default_weights(groups)
}

/// Pearson correlation matrix of the columns of `x`.
fn correlation_matrix(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let mut z = x.clone();
    for (k, mut col) in z.column_iter_mut().enumerate() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
        let norm = col.norm();
        if !(norm > 0.0) || norm <= 1e-12 * (mean.abs() * (n as f64).sqrt()) {
            return Err(Error::UndefinedCorrelation(k + 1));
        }
        col /= norm;
    }
    Ok(z.tr_mul(&z))
}

/// Greedy correlation grouping: repeatedly take the remaining column with the
/// largest total absolute correlation and group it with its `m - 1` most
/// correlated remaining partners. Ties go to the smaller column index.
pub fn group_by_correlation(x: &DMatrix<f64>, m: usize) -> Result<GroupPartition> {
    let p = x.ncols();
    if m == 0 || !p.is_multiple_of(m) {
        return Err(Error::InvalidGrouping(format!("p = {p} is not divisible by group size {m}")));
    }
    let r = correlation_matrix(x)?.abs();
    let mut remaining: Vec<usize> = (0..p).collect();
    let mut groups = Vec::with_capacity(p / m);
    while !remaining.is_empty() {
        let total = |i: usize| remaining.iter().map(|&j| r[(i, j)]).sum::<f64>();
        let mut lead = remaining[0];
        let mut best = total(lead);
        for &i in &remaining[1..] {
            let t = total(i);
            if t > best {
                best = t;
                lead = i;
            }
        }
        let mut partners: Vec<usize> = remaining.iter().copied().filter(|&j| j != lead).collect();
        partners.sort_by(|&a, &b| r[(lead, b)].total_cmp(&r[(lead, a)]).then(a.cmp(&b)));
        let mut group = vec![lead];
        group.extend_from_slice(&partners[..m - 1]);
        group.sort_unstable();
        remaining.retain(|j| group.binary_search(j).is_err());
        groups.push(group);
    }
    GroupPartition::with_default_weights(groups)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvOptions {
    /// `None` treats the first row as a header when any cell is non-numeric.
    pub header: Option<bool>,
    /// Replace each column by normal scores `Phi^-1((rank - 0.5) / n)`.
    pub quantile_transform: bool,
}

/// Numeric matrix from CSV text.
pub fn parse_design_csv(text: &str, options: &CsvOptions) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse { row: i + 1, column: 0, message: e.to_string() })?;
        records.push(rec);
    }
    let skip = match options.header {
        Some(h) => h as usize,
        None => records
            .first()
            .is_some_and(|r| r.iter().any(|c| c.parse::<f64>().is_err()))
            .into(),
    };
    let rows = &records[skip.min(records.len())..];
    if rows.is_empty() {
        return Err(Error::Parse { row: skip + 1, column: 0, message: "no data rows".into() });
    }
    let p = rows[0].len();
    let mut data = Vec::with_capacity(rows.len() * p);
    for (i, rec) in rows.iter().enumerate() {
        let row = i + skip + 1;
        if rec.len() != p {
            return Err(Error::Parse {
                row,
                column: rec.len().min(p) + 1,
                message: format!("expected {p} fields, found {}", rec.len()),
            });
        }
        for (k, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: k + 1,
                message: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { row, column: k + 1, message: "non-finite value".into() });
            }
            data.push(v);
        }
    }
    let mut x = DMatrix::from_row_slice(rows.len(), p, &data);
    if options.quantile_transform {
        quantile_transform(&mut x);
    }
    Ok(x)
}

pub fn load_design_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<DMatrix<f64>> {
    parse_design_csv(&std::fs::read_to_string(path)?, options)
}

/// Column-wise normal scores with mid-ranks for ties.
pub fn quantile_transform(x: &mut DMatrix<f64>) {
    let n = x.nrows();
    let normal = Normal::standard();
    for mut col in x.column_iter_mut() {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
        let mut scores = vec![0.0; n];
        let mut start = 0;
        while start < n {
            let mut end = start + 1;
            while end < n && col[order[end]] == col[order[start]] {
                end += 1;
            }
            let rank = (start + end + 1) as f64 / 2.0;
            let score = normal.inverse_cdf((rank - 0.5) / n as f64);
            for &i in &order[start..end] {
                scores[i] = score;
            }
            start = end;
        }
        for (c, s) in col.iter_mut().zip(scores) {
            *c = s;
        }
    }
}

/// Center each column and scale it to unit sample variance. Constant columns
/// are only centered.
pub fn standardize_columns(x: &mut DMatrix<f64>) {
    let n = x.nrows() as f64;
    for mut col in x.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / n).sqrt();
        if sd > 0.0 {
            col /= sd;
        }
    }
}

/// Seeded random permutation of `0..p`.
pub fn permutation(p: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p).collect();
    idx.shuffle(&mut stream_rng(seed, 0));
    idx
}
