//! Shared domain types: group partitions, grouped designs, coefficient
//! vectors and penalized fits.
//!
//! Group indices are 0-based in the Rust API. Serialized forms (partition
//! JSON, CSV reports) use 1-based indices for both groups and predictors.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Penalty / norm exponent in `[1, inf]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Exponent(f64);

impl Exponent {
    pub const ONE: Exponent = Exponent(1.0);
    pub const TWO: Exponent = Exponent(2.0);
    pub const INFINITY: Exponent = Exponent(f64::INFINITY);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value < 1.0 {
            return Err(Error::InvalidData(format!("norm exponent {value} is not in [1, inf]")));
        }
        Ok(Exponent(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    /// Hölder conjugate: 1/a + 1/a* = 1.
    pub fn conjugate(self) -> Exponent {
        if self.0 == 1.0 {
            Exponent::INFINITY
        } else if self.0.is_infinite() {
            Exponent::ONE
        } else if self.0 == 2.0 {
            Exponent::TWO
        } else {
            Exponent(self.0 / (self.0 - 1.0))
        }
    }

    /// `||v||_a`.
    pub fn norm(self, v: &[f64]) -> f64 {
        lp_norm(v, self.0)
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            serializer.serialize_str("inf")
        } else {
            serializer.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct ExponentVisitor;

        impl Visitor<'_> for ExponentVisitor {
            type Value = Exponent;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number >= 1 or the string \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Exponent, E> {
                Exponent::new(v).map_err(E::custom)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Exponent, E> {
                self.visit_f64(v as f64)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Exponent, E> {
                self.visit_f64(v as f64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Exponent, E> {
                match v.to_ascii_lowercase().as_str() {
                    "inf" | "infinity" => Ok(Exponent::INFINITY),
                    other => other
                        .parse::<f64>()
                        .map_err(E::custom)
                        .and_then(|x| self.visit_f64(x)),
                }
            }
        }

        deserializer.deserialize_any(ExponentVisitor)
    }
}

/// `||v||_a` for `a` in `[1, inf]`, scaled to avoid overflow for large `a`.
pub fn lp_norm(v: &[f64], a: f64) -> f64 {
    if a == 2.0 {
        return v.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    if a == 1.0 {
        return v.iter().map(|x| x.abs()).sum();
    }
    let max = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if a.is_infinite() || max == 0.0 {
        return max;
    }
    let s: f64 = v.iter().map(|x| (x.abs() / max).powf(a)).sum();
    max * s.powf(1.0 / a)
}

/// Nonoverlapping cover of the predictors `0..p` by `J` weighted groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PartitionFile", into = "PartitionFile")]
pub struct GroupPartition {
    groups: Vec<Vec<usize>>,
    weights: Vec<f64>,
    p: usize,
}

/// On-disk form: 1-based indices, weights optional (default `sqrt(p_j)`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionFile {
    pub groups: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl TryFrom<PartitionFile> for GroupPartition {
    type Error = Error;

    fn try_from(file: PartitionFile) -> Result<Self> {
        let mut groups = Vec::with_capacity(file.groups.len());
        for g in file.groups {
            let zero_based = g
                .into_iter()
                .map(|k| {
                    k.checked_sub(1).ok_or_else(|| {
                        Error::InvalidPartition("predictor indices are 1-based".into())
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            groups.push(zero_based);
        }
        match file.weights {
            Some(w) => GroupPartition::new(groups, w),
            None => GroupPartition::with_default_weights(groups),
        }
    }
}

impl From<GroupPartition> for PartitionFile {
    fn from(partition: GroupPartition) -> Self {
        PartitionFile {
            groups: partition
                .groups
                .iter()
                .map(|g| g.iter().map(|k| k + 1).collect())
                .collect(),
            weights: Some(partition.weights),
        }
    }
}

impl GroupPartition {
    /// Build a partition from 0-based index sets. Indices inside each group
    /// are sorted ascending; group order is kept as given.
    pub fn new(groups: Vec<Vec<usize>>, weights: Vec<f64>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidPartition("at least one group is required".into()));
        }
        if weights.len() != groups.len() {
            return Err(Error::InvalidPartition(format!(
                "{} weights for {} groups",
                weights.len(),
                groups.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidPartition(format!("weight {w} is not positive")));
        }
        let mut groups = groups;
        let mut p = 0;
        for (j, g) in groups.iter_mut().enumerate() {
            if g.is_empty() {
                return Err(Error::InvalidPartition(format!("group {} is empty", j + 1)));
            }
            g.sort_unstable();
            p += g.len();
        }
        let mut seen = vec![false; p];
        for g in &groups {
            for &k in g {
                if k >= p {
                    return Err(Error::InvalidPartition(format!(
                        "predictor {} outside 1..{p}",
                        k + 1
                    )));
                }
                if seen[k] {
                    return Err(Error::InvalidPartition(format!(
                        "predictor {} appears in more than one group",
                        k + 1
                    )));
                }
                seen[k] = true;
            }
        }
        Ok(GroupPartition { groups, weights, p })
    }

    /// Partition with `w_j = sqrt(p_j)`.
    pub fn with_default_weights(groups: Vec<Vec<usize>>) -> Result<Self> {
        let weights = groups.iter().map(|g| (g.len() as f64).sqrt()).collect();
        Self::new(groups, weights)
    }

    /// `p` groups of size one, unit weights.
    pub fn singletons(p: usize) -> Result<Self> {
        Self::with_default_weights((0..p).map(|k| vec![k]).collect())
    }

    /// Consecutive blocks of `size` predictors.
    pub fn consecutive(p: usize, size: usize) -> Result<Self> {
        if size == 0 || !p.is_multiple_of(size) {
            return Err(Error::InvalidGrouping(format!(
                "p = {p} is not divisible by group size {size}"
            )));
        }
        Self::with_default_weights((0..p / size).map(|j| (j * size..(j + 1) * size).collect()).collect())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Number of groups `J`.
    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Number of predictors `p`.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn group(&self, j: usize) -> &[usize] {
        &self.groups[j]
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn group_size(&self, j: usize) -> usize {
        self.groups[j].len()
    }

    pub fn p_max(&self) -> usize {
        self.groups.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn p_min(&self) -> usize {
        self.groups.iter().map(Vec::len).min().unwrap_or(0)
    }

    pub(crate) fn check_group(&self, j: usize) -> Result<()> {
        if j < self.groups.len() {
            Ok(())
        } else {
            Err(Error::GroupIndex { index: j, n_groups: self.groups.len() })
        }
    }
}

/// Coefficient vector bound to a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    values: DVector<f64>,
    partition: Arc<GroupPartition>,
}

impl Coefficients {
    pub fn new(values: DVector<f64>, partition: Arc<GroupPartition>) -> Result<Self> {
        if values.len() != partition.p() {
            return Err(Error::InvalidData(format!(
                "coefficient vector has length {} but partition covers {} predictors",
                values.len(),
                partition.p()
            )));
        }
        Ok(Coefficients { values, partition })
    }

    pub fn zeros(partition: Arc<GroupPartition>) -> Self {
        Coefficients { values: DVector::zeros(partition.p()), partition }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DVector<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn partition(&self) -> &Arc<GroupPartition> {
        &self.partition
    }

    /// `beta_(j)`, the restriction to group `j` in ascending predictor order.
    pub fn group(&self, j: usize) -> Result<DVector<f64>> {
        self.partition.check_group(j)?;
        Ok(self.group_unchecked(j))
    }

    pub(crate) fn group_unchecked(&self, j: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.partition.group_size(j),
            self.partition.group(j).iter().map(|&k| self.values[k]),
        )
    }

    pub(crate) fn set_group(&mut self, j: usize, block: &DVector<f64>) {
        for (&k, &v) in self.partition.group(j).iter().zip(block.iter()) {
            self.values[k] = v;
        }
    }

    pub fn is_group_active(&self, j: usize) -> bool {
        self.partition.group(j).iter().any(|&k| self.values[k] != 0.0)
    }

    /// `G(beta)`: groups with at least one exactly nonzero entry.
    pub fn active_groups(&self) -> Vec<usize> {
        (0..self.partition.n_groups()).filter(|&j| self.is_group_active(j)).collect()
    }

    /// `||beta_(j)||_2` for every group.
    pub fn group_l2_norms(&self) -> Vec<f64> {
        (0..self.partition.n_groups())
            .map(|j| lp_norm(self.group_unchecked(j).as_slice(), 2.0))
            .collect()
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    /// Unweighted `(1, a)`-group norm.
    pub fn group_norm(&self, alpha: Exponent) -> f64 {
        (0..self.partition.n_groups())
            .map(|j| alpha.norm(self.group_unchecked(j).as_slice()))
            .sum()
    }

    /// `sum_j w_j ||beta_(j)||_a`.
    pub fn weighted_group_norm(&self, alpha: Exponent) -> f64 {
        (0..self.partition.n_groups())
            .map(|j| self.partition.weight(j) * alpha.norm(self.group_unchecked(j).as_slice()))
            .sum()
    }
}

/// Restriction of `coeffs` to group `j`.
pub fn group_view(coeffs: &Coefficients, j: usize) -> Result<DVector<f64>> {
    coeffs.group(j)
}

/// `sum_j ||beta_(j)||_a`.
pub fn group_norm(coeffs: &Coefficients, alpha: Exponent) -> f64 {
    coeffs.group_norm(alpha)
}

/// Design matrix bound to a partition, with cached per-group column blocks,
/// Gram blocks and block Lipschitz constants.
#[derive(Debug, Clone)]
pub struct GroupedDesign {
    x: DMatrix<f64>,
    partition: Arc<GroupPartition>,
    blocks: Vec<DMatrix<f64>>,
    grams: Vec<DMatrix<f64>>,
    lipschitz: Vec<f64>,
}

impl GroupedDesign {
    pub fn new(x: DMatrix<f64>, partition: Arc<GroupPartition>) -> Result<Self> {
        if x.ncols() != partition.p() {
            return Err(Error::InvalidData(format!(
                "design has {} columns but partition covers {} predictors",
                x.ncols(),
                partition.p()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::InvalidData("design has no rows".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("design contains non-finite entries".into()));
        }
        let blocks: Vec<DMatrix<f64>> = (0..partition.n_groups())
            .map(|j| x.select_columns(partition.group(j)))
            .collect();
        let grams: Vec<DMatrix<f64>> = blocks.iter().map(|b| b.tr_mul(b)).collect();
        let lipschitz = grams.iter().map(largest_eigenvalue).collect();
        Ok(GroupedDesign { x, partition, blocks, grams, lipschitz })
    }

    /// Same partition, subset of rows (used for CV folds).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        Self::new(self.x.select_rows(rows), Arc::clone(&self.partition))
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn partition(&self) -> &Arc<GroupPartition> {
        &self.partition
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_groups(&self) -> usize {
        self.partition.n_groups()
    }

    /// Column block `X_(j)`.
    pub fn block(&self, j: usize) -> &DMatrix<f64> {
        &self.blocks[j]
    }

    /// `X_(j)^T X_(j)`.
    pub fn gram(&self, j: usize) -> &DMatrix<f64> {
        &self.grams[j]
    }

    /// Largest eigenvalue of `X_(j)^T X_(j)`.
    pub fn lipschitz(&self, j: usize) -> f64 {
        self.lipschitz[j]
    }

    pub fn predict(&self, beta: &Coefficients) -> DVector<f64> {
        &self.x * beta.values()
    }
}

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 1000;

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub(crate) fn largest_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let m = a.nrows();
    if m == 0 {
        return 0.0;
    }
    if m == 1 {
        return a[(0, 0)].max(0.0);
    }
    // Irregular start so it is not orthogonal to the leading eigenvector of
    // structured Gram matrices.
    let mut v = DVector::from_fn(m, |i, _| 1.0 + 0.1 * i as f64 + 0.01 * ((i * i) % 7) as f64);
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let w = a * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - estimate).abs() <= POWER_TOL * next.abs() {
            return next.max(norm);
        }
        estimate = next;
    }
    estimate
}

/// Penalized regression solution.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta: Coefficients,
    pub lambda: f64,
    pub alpha: Exponent,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// JSON form of a [`FitResult`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub beta: Vec<f64>,
    pub active_groups: Vec<usize>,
    pub lambda: f64,
    pub alpha: Exponent,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl From<&FitResult> for FitReport {
    fn from(fit: &FitResult) -> Self {
        FitReport {
            beta: fit.beta.values().iter().copied().collect(),
            active_groups: fit.beta.active_groups().iter().map(|j| j + 1).collect(),
            lambda: fit.lambda,
            alpha: fit.alpha,
            objective: fit.objective,
            kkt_residual: fit.kkt_residual,
            iterations: fit.iterations,
            converged: fit.converged,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn coeffs(groups: Vec<Vec<usize>>, values: Vec<f64>) -> Coefficients {
        let partition = Arc::new(GroupPartition::with_default_weights(groups).unwrap());
        Coefficients::new(DVector::from_vec(values), partition).unwrap()
    }

    #[test]
    fn group_view_contiguous_and_noncontiguous() {
        let c = coeffs(vec![vec![0, 1], vec![2, 3]], vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(group_view(&c, 1).unwrap().as_slice(), &[3.0, 4.0]);

        let c = coeffs(vec![vec![1], vec![0, 2]], vec![5.0, 6.0, 7.0]);
        assert_eq!(group_view(&c, 1).unwrap().as_slice(), &[5.0, 7.0]);

        let c = coeffs(vec![vec![0, 1], vec![2]], vec![0.0; 3]);
        assert_eq!(group_view(&c, 0).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn group_view_out_of_range() {
        let c = coeffs(vec![vec![0, 1], vec![2]], vec![0.0; 3]);
        assert!(matches!(group_view(&c, 2), Err(Error::GroupIndex { index: 2, n_groups: 2 })));
    }

    #[test]
    fn group_norm_examples() {
        let c = coeffs(vec![vec![0, 1], vec![2]], vec![3.0, 4.0, 5.0]);
        assert_relative_eq!(group_norm(&c, Exponent::TWO), 10.0);
        assert_relative_eq!(group_norm(&c, Exponent::INFINITY), 9.0);
        let z = coeffs(vec![vec![0, 1], vec![2]], vec![0.0; 3]);
        assert_eq!(group_norm(&z, Exponent::new(3.0).unwrap()), 0.0);
    }

    #[test]
    fn partition_rejects_bad_covers() {
        assert!(GroupPartition::with_default_weights(vec![vec![0, 1], vec![1]]).is_err());
        assert!(GroupPartition::with_default_weights(vec![vec![0], vec![2]]).is_err());
        assert!(GroupPartition::with_default_weights(vec![vec![0], vec![]]).is_err());
        assert!(GroupPartition::new(vec![vec![0]], vec![0.0]).is_err());
        assert!(GroupPartition::new(vec![], vec![]).is_err());
    }

    #[test]
    fn partition_json_defaults_weights() {
        let p = GroupPartition::from_json(r#"{"groups": [[3, 1], [2, 4, 5, 6]]}"#).unwrap();
        assert_eq!(p.group(0), &[0, 2]);
        assert_relative_eq!(p.weight(0), 2f64.sqrt());
        assert_relative_eq!(p.weight(1), 2.0);
        let back = GroupPartition::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
        assert!(GroupPartition::from_json(r#"{"groups": [[0, 1]]}"#).is_err());
    }

    #[test]
    fn exponent_serde_and_conjugate() {
        let a: Exponent = serde_json::from_str("\"inf\"").unwrap();
        assert!(a.is_infinite());
        assert_eq!(serde_json::to_string(&a).unwrap(), "\"inf\"");
        assert_eq!(a.conjugate(), Exponent::ONE);
        let three: Exponent = serde_json::from_str("3").unwrap();
        assert_relative_eq!(three.conjugate().value(), 1.5);
        assert!(serde_json::from_str::<Exponent>("0.5").is_err());
    }

    #[test]
    fn power_iteration_matches_eigendecomposition() {
        let x = DMatrix::from_fn(8, 4, |i, j| ((i * 3 + j * 5) % 7) as f64 - 3.0 + 0.1 * j as f64);
        let g = x.tr_mul(&x);
        let exact = g.clone().symmetric_eigen().eigenvalues.max();
        assert_relative_eq!(largest_eigenvalue(&g), exact, max_relative = 1e-8);
    }

    #[test]
    fn design_rejects_non_finite() {
        let p = Arc::new(GroupPartition::singletons(2).unwrap());
        let x = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, 0.0, 1.0]);
        assert!(GroupedDesign::new(x, p).is_err());
    }

    fn vec_and_groups() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
        (1usize..12).prop_flat_map(|p| {
            (
                proptest::collection::vec(-10.0f64..10.0, p),
                proptest::collection::vec(1usize..4, p),
            )
        })
    }

    fn chunked(sizes: &[usize], p: usize) -> Vec<Vec<usize>> {
        let mut groups = Vec::new();
        let mut start = 0;
        for &s in sizes {
            if start >= p {
                break;
            }
            let end = (start + s).min(p);
            groups.push((start..end).collect());
            start = end;
        }
        groups
    }

    proptest! {
        #[test]
        fn group_norm_permutation_invariant((v, sizes) in vec_and_groups(), a in 1.0f64..8.0) {
            let p = v.len();
            let groups = chunked(&sizes, p);
            let mut reversed = groups.clone();
            reversed.reverse();
            let alpha = Exponent::new(a).unwrap();
            let n1 = group_norm(&coeffs(groups, v.clone()), alpha);
            let n2 = group_norm(&coeffs(reversed, v), alpha);
            prop_assert!((n1 - n2).abs() <= 1e-12 * (1.0 + n1));
        }

        #[test]
        fn group_norm_nonincreasing_in_alpha((v, sizes) in vec_and_groups(), a in 1.0f64..6.0, da in 0.0f64..6.0) {
            let groups = chunked(&sizes, v.len());
            let c = coeffs(groups, v);
            let lo = group_norm(&c, Exponent::new(a).unwrap());
            let hi = group_norm(&c, Exponent::new(a + da).unwrap());
            let inf = group_norm(&c, Exponent::INFINITY);
            prop_assert!(hi <= lo * (1.0 + 1e-12));
            prop_assert!(inf <= hi * (1.0 + 1e-12));
        }

        #[test]
        fn group_norm_triangle((v, sizes) in vec_and_groups(), seed in 0u64..1000, a in 1.0f64..6.0) {
            let p = v.len();
            let groups = chunked(&sizes, p);
            let w: Vec<f64> = (0..p).map(|i| ((seed as usize * 31 + i * 17) % 23) as f64 - 11.0).collect();
            let s: Vec<f64> = v.iter().zip(&w).map(|(x, y)| x + y).collect();
            let alpha = Exponent::new(a).unwrap();
            let lhs = group_norm(&coeffs(groups.clone(), s), alpha);
            let rhs = group_norm(&coeffs(groups.clone(), v), alpha) + group_norm(&coeffs(groups, w), alpha);
            prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12);
        }
    }
}
