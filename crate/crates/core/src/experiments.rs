//! Simulation studies: multi-dataset runs, metric aggregation, the
//! threshold-sensitivity sweep, the `rho` diagnostic and table rendering.

use std::fmt::Write as _;
use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{cv_fit, infer_from_fit, InferenceConfig, InferenceSummary, StatisticMatrices, ThresholdRule};
use crate::designs::{
    draw_amplitudes, grouping_scheme, make_sigma, sample_design, support_indices, Amplitude, CovarianceKind,
    CovarianceModel, GroupingScheme, Placement,
};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, map_indexed, stream_rng, Execution};
use crate::model::{lp_norm, Coefficients, GroupPartition, GroupedDesign};

pub const SCHEMA_VERSION: u32 = 1;
/// Re-seeded attempts allowed for a dataset whose pipeline fails.
pub const MAX_DATASET_RETRIES: usize = 2;

/// Extra active group of `+-epsilon` coefficients placed in the first group
/// that carries no other signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakGroup {
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub n: usize,
    pub p: usize,
    pub covariance: CovarianceKind,
    pub placement: Placement,
    pub grouping: GroupingScheme,
    pub s0: usize,
    pub amplitude: Amplitude,
    pub weak_group: Option<WeakGroup>,
    /// Noise standard deviation.
    pub sigma: f64,
    /// Number of simulated datasets `K`.
    pub datasets: usize,
    /// Pipeline settings; `seed` is replaced by a per-dataset seed.
    pub inference: InferenceConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: String::new(),
            n: 100,
            p: 200,
            covariance: CovarianceKind::Toeplitz { r: 0.5 },
            placement: Placement::Head,
            grouping: GroupingScheme::P1,
            s0: 10,
            amplitude: Amplitude::Uniform { b: 1.0 },
            weak_group: None,
            sigma: 1.0,
            datasets: 20,
            inference: InferenceConfig::default(),
            seed: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.datasets == 0 {
            return Err(Error::InvalidConfig("n, p and datasets must be positive".into()));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!("sigma = {} must be nonnegative", self.sigma)));
        }
        self.inference.validate()?;
        self.template_partition().map(|_| ())
    }

    pub fn label(&self) -> SettingLabel {
        SettingLabel {
            n: self.n,
            p: self.p,
            a: self.placement.label().into(),
            d: self.covariance.label().into(),
            grouping: self.grouping.label(),
            extra: self.weak_group.map(|w| format!("eps={}", w.epsilon)),
        }
    }

    /// Partition and true groups; identical for every dataset of a setting.
    fn template_partition(&self) -> Result<Layout> {
        let support = support_indices(self.s0, self.p, self.placement)?;
        let partition = Arc::new(grouping_scheme(self.grouping, self.p, &support)?);
        let strong: Vec<usize> = (0..partition.n_groups())
            .filter(|&j| partition.group(j).iter().any(|k| support.binary_search(k).is_ok()))
            .collect();
        let weak = match self.weak_group {
            Some(_) => {
                let j = (0..partition.n_groups())
                    .find(|j| strong.binary_search(j).is_err())
                    .ok_or_else(|| Error::InvalidConfig("no free group for the weak signal".into()))?;
                vec![j]
            }
            None => Vec::new(),
        };
        Ok(Layout { support, partition, strong, weak })
    }
}

#[derive(Debug, Clone)]
struct Layout {
    support: Vec<usize>,
    partition: Arc<GroupPartition>,
    strong: Vec<usize>,
    weak: Vec<usize>,
}

/// A set of settings run together, as read from a config file or preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSuite {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub settings: Vec<ExperimentConfig>,
    /// Largest number of kept groups in a sensitivity sweep.
    #[serde(default)]
    pub sweep_k_max: Option<usize>,
}

impl ExperimentSuite {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.settings.is_empty() {
            return Err(Error::InvalidConfig("suite has no settings".into()));
        }
        self.settings.iter().try_for_each(ExperimentConfig::validate)
    }

    /// Override every setting's master seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        for s in &mut self.settings {
            s.seed = seed;
        }
        self
    }
}

/// One simulated dataset `(X, beta_0, y)`.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub design: GroupedDesign,
    pub y: DVector<f64>,
    pub beta0: Coefficients,
    pub strong: Vec<usize>,
    pub weak: Vec<usize>,
}

fn simulate_with(config: &ExperimentConfig, layout: &Layout, sigma: &DMatrix<f64>, seed: u64) -> Result<SimulatedData> {
    let x = sample_design(config.n, sigma, derive_seed(seed, 0))?;
    let mut beta = DVector::zeros(config.p);
    let values = draw_amplitudes(config.amplitude, layout.support.len(), &mut stream_rng(seed, 1))?;
    for (&k, v) in layout.support.iter().zip(values) {
        beta[k] = v;
    }
    if let Some(w) = config.weak_group {
        for &j in &layout.weak {
            let group = layout.partition.group(j);
            let values = draw_amplitudes(Amplitude::Fixed { epsilon: w.epsilon }, group.len(), &mut stream_rng(seed, 2))?;
            for (&k, v) in group.iter().zip(values) {
                beta[k] = v;
            }
        }
    }
    let mut rng = stream_rng(seed, 3);
    let noise = DVector::from_fn(config.n, |_, _| config.sigma * rng.sample::<f64, _>(StandardNormal));
    let y = &x * &beta + noise;
    Ok(SimulatedData {
        design: GroupedDesign::new(x, layout.partition.clone())?,
        y,
        beta0: Coefficients::new(beta, layout.partition.clone())?,
        strong: layout.strong.clone(),
        weak: layout.weak.clone(),
    })
}

/// Dataset generated from `config` under `seed`.
pub fn simulate_dataset(config: &ExperimentConfig, seed: u64) -> Result<SimulatedData> {
    let layout = config.template_partition()?;
    let sigma = make_sigma(&CovarianceModel { kind: config.covariance, p: config.p })?;
    simulate_with(config, &layout, &sigma, seed)
}

/// Seed of dataset `index`, re-seed attempt `attempt`.
pub fn dataset_seed(master: u64, index: usize, attempt: usize) -> u64 {
    derive_seed(master, index as u64 | ((attempt as u64) << 32))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub groups: usize,
    pub rejected: usize,
    pub covered: usize,
}

impl Counts {
    fn rejection_rate(&self) -> Option<f64> {
        (self.groups > 0).then(|| self.rejected as f64 / self.groups as f64)
    }

    fn coverage_rate(&self) -> Option<f64> {
        (self.groups > 0).then(|| self.covered as f64 / self.groups as f64)
    }

    fn merge(&self, other: &Counts) -> Counts {
        Counts {
            groups: self.groups + other.groups,
            rejected: self.rejected + other.rejected,
            covered: self.covered + other.covered,
        }
    }
}

/// Per-dataset scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetOutcome {
    pub index: usize,
    pub seed: u64,
    pub retries: usize,
    pub lambda: f64,
    /// Active groups of the cross-validated fit.
    pub selected: usize,
    /// Active groups of the thresholded estimate.
    pub kept: usize,
    pub sigma_hat: f64,
    pub strong: Counts,
    pub weak: Counts,
    pub zero: Counts,
    /// Mean interval lengths over active, zero and all coefficients
    /// (singleton groups only).
    pub lengths: Option<[f64; 3]>,
}

fn score(index: usize, seed: u64, retries: usize, data: &SimulatedData, summary: &InferenceSummary, selected: usize) -> DatasetOutcome {
    let mut strong = Counts::default();
    let mut weak = Counts::default();
    let mut zero = Counts::default();
    let mut len = [(0.0, 0usize); 2];
    let mut singleton = true;
    for g in &summary.groups {
        let is_zero = !data.strong.contains(&g.group) && !data.weak.contains(&g.group);
        let bucket = if data.weak.contains(&g.group) {
            &mut weak
        } else if is_zero {
            &mut zero
        } else {
            &mut strong
        };
        bucket.groups += 1;
        bucket.rejected += g.reject as usize;
        bucket.covered += g.covered.unwrap_or(false) as usize;
        match g.interval {
            Some((lo, hi)) => {
                let slot = &mut len[is_zero as usize];
                slot.0 += hi - lo;
                slot.1 += 1;
            }
            None => singleton = false,
        }
    }
    let lengths = singleton.then(|| {
        let mean = |(s, c): (f64, usize)| if c > 0 { s / c as f64 } else { f64::NAN };
        [mean(len[0]), mean(len[1]), mean((len[0].0 + len[1].0, len[0].1 + len[1].1))]
    });
    DatasetOutcome {
        index,
        seed,
        retries,
        lambda: summary.lambda,
        selected,
        kept: summary.point.active_groups.len(),
        sigma_hat: summary.point.sigma_hat,
        strong,
        weak,
        zero,
        lengths,
    }
}

/// Averages over datasets of the per-dataset rates (fractions in `[0, 1]`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentMetrics {
    pub datasets: usize,
    pub retries: usize,
    pub r_a: Option<f64>,
    pub pwr: Option<f64>,
    pub fpr: Option<f64>,
    /// Always `1 - fpr`.
    pub r_i: Option<f64>,
    pub r: Option<f64>,
    pub r_s: Option<f64>,
    pub r_w: Option<f64>,
    pub pwr_s: Option<f64>,
    pub pwr_w: Option<f64>,
    pub len_active: Option<f64>,
    pub len_zero: Option<f64>,
    pub len_all: Option<f64>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, count) = values.flatten().filter(|v| v.is_finite()).fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

impl ExperimentMetrics {
    pub fn from_outcomes(outcomes: &[DatasetOutcome], weak_split: bool) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::EmptyMetrics);
        }
        let active = |o: &DatasetOutcome| o.strong.merge(&o.weak);
        let fpr = mean_of(outcomes.iter().map(|o| o.zero.rejection_rate()));
        let split = |f: &dyn Fn(&DatasetOutcome) -> Option<f64>| {
            if weak_split {
                mean_of(outcomes.iter().map(f))
            } else {
                None
            }
        };
        let length = |i: usize| mean_of(outcomes.iter().map(|o| o.lengths.map(|l| l[i])));
        Ok(ExperimentMetrics {
            datasets: outcomes.len(),
            retries: outcomes.iter().map(|o| o.retries).sum(),
            r_a: mean_of(outcomes.iter().map(|o| active(o).coverage_rate())),
            pwr: mean_of(outcomes.iter().map(|o| active(o).rejection_rate())),
            fpr,
            r_i: fpr.map(|f| 1.0 - f),
            r: mean_of(outcomes.iter().map(|o| active(o).merge(&o.zero).coverage_rate())),
            r_s: split(&|o| o.strong.coverage_rate()),
            r_w: split(&|o| o.weak.coverage_rate()),
            pwr_s: split(&|o| o.strong.rejection_rate()),
            pwr_w: split(&|o| o.weak.rejection_rate()),
            len_active: length(0),
            len_zero: length(1),
            len_all: length(2),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingLabel {
    pub n: usize,
    pub p: usize,
    pub a: String,
    pub d: String,
    pub grouping: String,
    pub extra: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingResult {
    pub label: SettingLabel,
    pub metrics: ExperimentMetrics,
    pub outcomes: Vec<DatasetOutcome>,
}

fn inference_for(config: &ExperimentConfig, seed: u64) -> InferenceConfig {
    InferenceConfig { seed: derive_seed(seed, 4), ..config.inference }
}

/// Run `f` on dataset `index`, re-seeding up to [`MAX_DATASET_RETRIES`]
/// times on failure.
fn with_retries<T>(
    config: &ExperimentConfig,
    index: usize,
    mut f: impl FnMut(u64, usize) -> Result<T>,
) -> Result<T> {
    let mut last = None;
    for attempt in 0..=MAX_DATASET_RETRIES {
        let seed = dataset_seed(config.seed, index, attempt);
        match f(seed, attempt) {
            Ok(v) => return Ok(v),
            Err(e) => {
                warn!("dataset {index} attempt {attempt} (seed {seed}) failed: {e}");
                last = Some(e);
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Simulate `K` datasets, run the inference pipeline on each and aggregate.
pub fn run_setting(config: &ExperimentConfig, exec: Execution) -> Result<SettingResult> {
    config.validate()?;
    let layout = config.template_partition()?;
    let sigma = make_sigma(&CovarianceModel { kind: config.covariance, p: config.p })?;
    let outcomes = map_indexed(config.datasets, exec, |k| {
        with_retries(config, k, |seed, attempt| {
            let data = simulate_with(config, &layout, &sigma, seed)?;
            let inference = inference_for(config, seed);
            let (fit, _) = cv_fit(&data.design, &data.y, &inference, exec)?;
            let (summary, _, _) = infer_from_fit(
                &data.design,
                &data.y,
                &fit,
                &inference,
                inference.threshold,
                &StatisticMatrices::Design,
                Some(&data.beta0),
                exec,
            )?;
            Ok(score(k, seed, attempt, &data, &summary, fit.beta.active_groups().len()))
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let metrics = ExperimentMetrics::from_outcomes(&outcomes, config.weak_group.is_some())?;
    Ok(SettingResult { label: config.label(), metrics, outcomes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub metrics: ExperimentMetrics,
    pub outcomes: Vec<DatasetOutcome>,
}

/// For `k = 0..=k_max`, threshold the cross-validated fit to its `k` largest
/// groups and rerun inference. Every `k` sees the same datasets and the same
/// bootstrap streams.
pub fn sensitivity_sweep(config: &ExperimentConfig, k_max: usize, exec: Execution) -> Result<Vec<SweepPoint>> {
    config.validate()?;
    let layout = config.template_partition()?;
    let n_groups = layout.partition.n_groups();
    if k_max >= n_groups {
        return Err(Error::InvalidSweep { k_max, n_groups });
    }
    let sigma = make_sigma(&CovarianceModel { kind: config.covariance, p: config.p })?;
    let per_dataset = map_indexed(config.datasets, exec, |i| {
        with_retries(config, i, |seed, attempt| {
            let data = simulate_with(config, &layout, &sigma, seed)?;
            let inference = inference_for(config, seed);
            let (fit, _) = cv_fit(&data.design, &data.y, &inference, exec)?;
            let selected = fit.beta.active_groups().len();
            (0..=k_max)
                .map(|k| {
                    let (summary, _, _) = infer_from_fit(
                        &data.design,
                        &data.y,
                        &fit,
                        &inference,
                        ThresholdRule::KeepTop { k },
                        &StatisticMatrices::Design,
                        Some(&data.beta0),
                        exec,
                    )?;
                    Ok(score(i, seed, attempt, &data, &summary, selected))
                })
                .collect::<Result<Vec<_>>>()
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    (0..=k_max)
        .map(|k| {
            let outcomes: Vec<DatasetOutcome> = per_dataset.iter().map(|d| d[k].clone()).collect();
            let metrics = ExperimentMetrics::from_outcomes(&outcomes, config.weak_group.is_some())?;
            Ok(SweepPoint { k, metrics, outcomes })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoDiagnostic {
    pub n: usize,
    pub n_groups: usize,
    pub p_max: usize,
    pub alpha_star: f64,
    pub reps: usize,
    /// Monte Carlo mean of `max_j ||Z_(j)||_{a*} / sqrt(n)`.
    pub estimate: f64,
    pub std_error: f64,
    /// `p_max^(1/a* - 1/2) (sqrt(5 p_max / n) + sqrt(4 log J / n))`.
    pub bound: f64,
}

/// Analytic upper bound on `rho(a*)`.
pub fn rho_bound(n: usize, n_groups: usize, p_max: usize, alpha_star: f64) -> f64 {
    let n = n as f64;
    let pm = p_max as f64;
    pm.powf(1.0 / alpha_star - 0.5) * ((5.0 * pm / n).sqrt() + (4.0 * (n_groups as f64).ln() / n).sqrt())
}

pub fn rho_diagnostic(
    n: usize,
    partition: &GroupPartition,
    alpha_star: f64,
    reps: usize,
    seed: u64,
    exec: Execution,
) -> Result<RhoDiagnostic> {
    if !(1.0..=2.0).contains(&alpha_star) {
        return Err(Error::InvalidConfig(format!("alpha* = {alpha_star} must lie in [1, 2]")));
    }
    if reps == 0 || n == 0 {
        return Err(Error::InvalidConfig("rho diagnostic needs n >= 1 and reps >= 1".into()));
    }
    let scale = (n as f64).sqrt();
    let draws = map_indexed(reps, exec, |i| {
        let mut rng = stream_rng(seed, i as u64);
        let z: Vec<f64> = (0..partition.p()).map(|_| rng.sample(StandardNormal)).collect();
        partition
            .groups()
            .iter()
            .map(|g| {
                let block: Vec<f64> = g.iter().map(|&k| z[k]).collect();
                lp_norm(&block, alpha_star)
            })
            .fold(0.0, f64::max)
            / scale
    });
    let mean = draws.iter().sum::<f64>() / reps as f64;
    let var = if reps > 1 {
        draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (reps - 1) as f64
    } else {
        0.0
    };
    Ok(RhoDiagnostic {
        n,
        n_groups: partition.n_groups(),
        p_max: partition.p_max(),
        alpha_star,
        reps,
        estimate: mean,
        std_error: (var / reps as f64).sqrt(),
        bound: rho_bound(n, partition.n_groups(), partition.p_max(), alpha_star),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub label: SettingLabel,
    pub metrics: ExperimentMetrics,
}

type Column = (&'static str, fn(&ExperimentMetrics) -> Option<f64>, bool);

const COLUMNS: [Column; 12] = [
    ("r_A", |m| m.r_a, true),
    ("PWR", |m| m.pwr, true),
    ("FPR", |m| m.fpr, true),
    ("r_I", |m| m.r_i, true),
    ("r", |m| m.r, true),
    ("r_S", |m| m.r_s, true),
    ("r_W", |m| m.r_w, true),
    ("PWR_S", |m| m.pwr_s, true),
    ("PWR_W", |m| m.pwr_w, true),
    ("L_A", |m| m.len_active, false),
    ("L_I", |m| m.len_zero, false),
    ("L", |m| m.len_all, false),
];

fn layout_table(rows: &[TableRow], precise: bool) -> Result<Vec<Vec<String>>> {
    if rows.is_empty() {
        return Err(Error::EmptyMetrics);
    }
    let columns: Vec<&Column> = COLUMNS.iter().filter(|c| rows.iter().any(|r| (c.1)(&r.metrics).is_some())).collect();
    let has_extra = rows.iter().any(|r| r.label.extra.is_some());
    let mut header: Vec<String> = ["n", "p", "a", "d", "grouping"].map(String::from).to_vec();
    if has_extra {
        header.push("setting".into());
    }
    header.push("K".into());
    header.extend(columns.iter().map(|c| c.0.to_string()));
    let mut out = vec![header];
    for row in rows {
        let l = &row.label;
        let mut cells = vec![l.n.to_string(), l.p.to_string(), l.a.clone(), l.d.clone(), l.grouping.clone()];
        if has_extra {
            cells.push(l.extra.clone().unwrap_or_default());
        }
        cells.push(row.metrics.datasets.to_string());
        for (_, get, percent) in &columns {
            cells.push(match get(&row.metrics) {
                None => "NA".into(),
                Some(v) if precise => format!("{v:.16e}"),
                Some(v) if *percent => format!("{:.1}", 100.0 * v),
                Some(v) => format!("{v:.3}"),
            });
        }
        out.push(cells);
    }
    Ok(out)
}

fn render(cells: &[Vec<String>], format: TableFormat) -> String {
    match format {
        TableFormat::Csv => cells.iter().map(|r| r.join(",") + "\n").collect(),
        TableFormat::Text => {
            let widths: Vec<usize> = (0..cells[0].len()).map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
            let mut out = String::new();
            for row in cells {
                let line: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
                out.push_str(line.join("  ").trim_end());
                out.push('\n');
            }
            out
        }
    }
}

/// Table with rates as percentages to one decimal.
pub fn emit_table(rows: &[TableRow], format: TableFormat) -> Result<String> {
    Ok(render(&layout_table(rows, false)?, format))
}

/// CSV with every metric as a fraction, 17 significant digits.
pub fn metrics_csv(rows: &[TableRow]) -> Result<String> {
    Ok(render(&layout_table(rows, true)?, TableFormat::Csv))
}

/// One CSV row per dataset.
pub fn datasets_csv(label: &str, outcomes: &[DatasetOutcome]) -> String {
    let mut out = String::new();
    for o in outcomes {
        let _ = writeln!(
            out,
            "{label},{},{},{},{:.16e},{},{},{:.16e},{},{},{},{},{},{},{},{},{}",
            o.index + 1,
            o.seed,
            o.retries,
            o.lambda,
            o.selected,
            o.kept,
            o.sigma_hat,
            o.strong.groups,
            o.strong.rejected,
            o.strong.covered,
            o.weak.groups,
            o.weak.rejected,
            o.weak.covered,
            o.zero.groups,
            o.zero.rejected,
            o.zero.covered,
        );
    }
    out
}

pub const DATASETS_CSV_HEADER: &str =
    "setting,dataset,seed,retries,lambda,selected,kept,sigma_hat,strong,strong_rejected,strong_covered,weak,weak_rejected,weak_covered,zero,zero_rejected,zero_covered\n";

const REFERENCE_JSON: &str = include_str!("../data/reference.json");

/// Reference values bundled with the crate.
pub fn reference_values() -> serde_json::Value {
    serde_json::from_str(REFERENCE_JSON).expect("bundled reference JSON is valid")
}

/// Text rendering of the reference values for `table`
/// (`table1` or `table2`), or `None` if unknown.
pub fn render_reference(table: &str) -> Option<String> {
    let refs = reference_values();
    let entries = refs.get(table)?.as_array()?;
    let mut out = format!("# reference values (percent; not recomputed): {table}\n");
    for e in entries {
        let mut line = format!(
            "({},{}) ({},{}) {}",
            e["n"],
            e["p"],
            e["a"].as_str().unwrap_or(""),
            e["d"].as_str().unwrap_or(""),
            e["grouping"].as_str().unwrap_or("")
        );
        if let Some(eps) = e.get("epsilon") {
            let _ = write!(line, " eps={eps}");
        }
        for (method, values) in e.as_object()?.iter().filter(|(_, v)| v.is_object()) {
            let parts: Vec<String> = values.as_object()?.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = write!(line, " | {method}: {}", parts.join(" "));
        }
        out.push_str(&line);
        out.push('\n');
    }
    Some(out)
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 7] =
    ["table1", "table1-row1", "table2-eps0.02", "table2-eps0.2", "fig1-sweep", "singleton", "smoke"];

fn design_grid() -> Vec<(Placement, CovarianceKind)> {
    let mut grid = Vec::new();
    for placement in [Placement::Head, Placement::EvenlySpaced] {
        for cov in [CovarianceKind::Toeplitz { r: 0.5 }, CovarianceKind::ExpdecayInverse { r: 0.4 }] {
            grid.push((placement, cov));
        }
    }
    grid
}

fn named(mut c: ExperimentConfig) -> ExperimentConfig {
    let l = c.label();
    c.name = format!("({},{}) ({},{}) {}", l.n, l.p, l.a, l.d, l.grouping);
    if let Some(extra) = l.extra {
        c.name = format!("{} {extra}", c.name);
    }
    c
}

/// Built-in experiment suites.
pub fn preset(name: &str) -> Result<ExperimentSuite> {
    let base = ExperimentConfig::default();
    let mut sweep_k_max = None;
    let settings: Vec<ExperimentConfig> = match name {
        "table1" => {
            let mut v = Vec::new();
            for p in [200, 400] {
                for (placement, covariance) in design_grid() {
                    for grouping in [GroupingScheme::P1, GroupingScheme::P2] {
                        v.push(ExperimentConfig { p, placement, covariance, grouping, ..base.clone() });
                    }
                }
            }
            v
        }
        "table1-row1" => vec![base.clone()],
        "table2-eps0.02" | "table2-eps0.2" => {
            let epsilon = if name.ends_with("0.02") { 0.02 } else { 0.2 };
            design_grid()
                .into_iter()
                .map(|(placement, covariance)| ExperimentConfig {
                    p: 400,
                    placement,
                    covariance,
                    grouping: GroupingScheme::P2,
                    weak_group: Some(WeakGroup { epsilon }),
                    datasets: 50,
                    ..base.clone()
                })
                .collect()
        }
        "fig1-sweep" => {
            sweep_k_max = Some(6);
            design_grid()
                .into_iter()
                .map(|(placement, covariance)| ExperimentConfig {
                    p: 400,
                    placement,
                    covariance,
                    grouping: GroupingScheme::P2,
                    ..base.clone()
                })
                .collect()
        }
        "singleton" => {
            let mut v = Vec::new();
            for p in [200, 400] {
                for (placement, covariance) in design_grid() {
                    v.push(ExperimentConfig { p, placement, covariance, grouping: GroupingScheme::Singleton, ..base.clone() });
                }
            }
            v
        }
        "smoke" => vec![ExperimentConfig {
            n: 40,
            p: 40,
            datasets: 4,
            inference: InferenceConfig { replicates: 50, folds: 5, ..InferenceConfig::default() },
            ..base.clone()
        }],
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(ExperimentSuite {
        schema_version: SCHEMA_VERSION,
        name: name.into(),
        settings: settings.into_iter().map(named).collect(),
        sweep_k_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small(grouping: GroupingScheme) -> ExperimentConfig {
        ExperimentConfig {
            n: 50,
            p: 40,
            grouping,
            datasets: 3,
            inference: InferenceConfig {
                replicates: 40,
                folds: 5,
                path: crate::solver::PathSpec { n_lambda: 30, ratio_min: 0.05 },
                ..InferenceConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    fn outcome(strong: Counts, zero: Counts) -> DatasetOutcome {
        DatasetOutcome {
            index: 0,
            seed: 0,
            retries: 0,
            lambda: 0.1,
            selected: 1,
            kept: 1,
            sigma_hat: 1.0,
            strong,
            weak: Counts::default(),
            zero,
            lengths: None,
        }
    }

    #[test]
    fn metrics_of_single_dataset_are_its_rates() {
        let o = outcome(Counts { groups: 2, rejected: 1, covered: 2 }, Counts { groups: 18, rejected: 1, covered: 17 });
        let m = ExperimentMetrics::from_outcomes(&[o], false).unwrap();
        assert_eq!(m.pwr, Some(0.5));
        assert_eq!(m.r_a, Some(1.0));
        assert_relative_eq!(m.fpr.unwrap(), 1.0 / 18.0);
        assert_eq!(m.r_i, Some(1.0 - m.fpr.unwrap()));
        assert_relative_eq!(m.r.unwrap(), 19.0 / 20.0);
        assert_eq!(m.pwr_s, None);
        assert!(matches!(ExperimentMetrics::from_outcomes(&[], false), Err(Error::EmptyMetrics)));
    }

    #[test]
    fn metrics_average_per_dataset_rates() {
        let a = outcome(Counts { groups: 1, rejected: 1, covered: 1 }, Counts { groups: 10, rejected: 0, covered: 10 });
        let b = outcome(Counts { groups: 1, rejected: 0, covered: 0 }, Counts { groups: 10, rejected: 2, covered: 8 });
        let m = ExperimentMetrics::from_outcomes(&[a, b], false).unwrap();
        assert_eq!(m.pwr, Some(0.5));
        assert_relative_eq!(m.fpr.unwrap(), 0.1);
        assert_eq!(m.datasets, 2);
    }

    #[test]
    fn layouts_and_weak_group() {
        let mut c = small(GroupingScheme::P2);
        c.weak_group = Some(WeakGroup { epsilon: 0.2 });
        let d = simulate_dataset(&c, 7).unwrap();
        assert_eq!(d.strong, vec![0, 1]);
        assert_eq!(d.weak, vec![2]);
        let weak = d.beta0.group(2).unwrap();
        assert!(weak.iter().all(|v| v.abs() == 0.2));
        assert!(d.beta0.group(3).unwrap().iter().all(|v| *v == 0.0));
        assert_eq!(d.beta0.nonzero_count(), 20);
    }

    #[test]
    fn datasets_are_seed_deterministic() {
        let c = small(GroupingScheme::P1);
        let a = simulate_dataset(&c, 3).unwrap();
        let b = simulate_dataset(&c, 3).unwrap();
        assert_eq!(a.design.x(), b.design.x());
        assert_eq!(a.y, b.y);
        assert_ne!(dataset_seed(1, 0, 0), dataset_seed(1, 0, 1));
        assert_ne!(dataset_seed(1, 0, 0), dataset_seed(1, 1, 0));
    }

    #[test]
    fn noiseless_strong_signal_is_detected() {
        let mut c = small(GroupingScheme::P1);
        c.sigma = 0.0;
        c.amplitude = Amplitude::Fixed { epsilon: 1.0 };
        let r = run_setting(&c, Execution::Parallel).unwrap();
        assert_eq!(r.metrics.pwr, Some(1.0));
        assert!(r.metrics.fpr.unwrap() <= 0.05);
        assert_eq!(r.metrics.r_i.unwrap(), 1.0 - r.metrics.fpr.unwrap());
    }

    #[test]
    fn setting_is_schedule_independent() {
        let c = small(GroupingScheme::P2);
        let a = run_setting(&c, Execution::Sequential).unwrap();
        let b = run_setting(&c, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_rejects_large_k_and_runs() {
        let mut c = small(GroupingScheme::P1);
        c.datasets = 2;
        assert!(matches!(sensitivity_sweep(&c, 4, Execution::Parallel), Err(Error::InvalidSweep { k_max: 4, n_groups: 4 })));
        let points = sensitivity_sweep(&c, 2, Execution::Parallel).unwrap();
        assert_eq!(points.len(), 3);
        assert!(points[0].outcomes.iter().all(|o| o.kept == 0));
    }

    #[test]
    fn rho_examples() {
        let single = GroupPartition::singletons(1).unwrap();
        let d = rho_diagnostic(100, &single, 2.0, 20_000, 5, Execution::Parallel).unwrap();
        assert_relative_eq!(d.bound, 5f64.sqrt() / 10.0, epsilon = 1e-12);
        let exact = (2.0 / std::f64::consts::PI).sqrt() / 10.0;
        assert!((d.estimate - exact).abs() < 4.0 * d.std_error + 1e-12);
        let once = rho_diagnostic(100, &single, 2.0, 1, 9, Execution::Sequential).unwrap();
        assert_eq!(once, rho_diagnostic(100, &single, 2.0, 1, 9, Execution::Parallel).unwrap());
        assert!(rho_diagnostic(10, &single, 2.5, 1, 9, Execution::Sequential).is_err());
    }

    #[test]
    fn tables_render() {
        let row = TableRow {
            label: ExperimentConfig::default().label(),
            metrics: ExperimentMetrics { datasets: 20, r_a: Some(0.95), pwr: Some(0.95), fpr: Some(0.055), r_i: Some(0.945), ..Default::default() },
        };
        let csv = emit_table(std::slice::from_ref(&row), TableFormat::Csv).unwrap();
        assert_eq!(csv, "n,p,a,d,grouping,K,r_A,PWR,FPR,r_I\n100,200,1,i,P1,20,95.0,95.0,5.5,94.5\n");
        let text = emit_table(std::slice::from_ref(&row), TableFormat::Text).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(emit_table(&[], TableFormat::Csv).is_err());
        assert!(metrics_csv(&[row]).unwrap().contains("9.4999999999999996e-1"));
    }

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            let suite = preset(name).unwrap();
            suite.validate().unwrap();
        }
        assert_eq!(preset("table1").unwrap().settings.len(), 16);
        assert!(preset("nope").is_err());
        let reference = render_reference("table1").unwrap();
        assert!(reference.contains("r_A=95.0"));
        assert_eq!(reference.lines().count(), 17);
    }

    #[test]
    fn suite_json_round_trip() {
        let suite = preset("table2-eps0.2").unwrap();
        let text = serde_json::to_string_pretty(&suite).unwrap();
        let back: ExperimentSuite = serde_json::from_str(&text).unwrap();
        assert_eq!(back, suite);
    }
}
