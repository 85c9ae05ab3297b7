use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use groupuq::bootstrap::{cv_fit, run_inference};
use groupuq::designs::{group_by_correlation, load_design_csv, standardize_columns, CsvOptions};
use groupuq::experiments::{
    datasets_csv, emit_table, metrics_csv, render_reference, rho_diagnostic, run_setting, sensitivity_sweep,
    RhoDiagnostic, SettingLabel, SettingResult, SweepPoint, TableFormat, TableRow, DATASETS_CSV_HEADER,
};
use groupuq::model::{FitReport, PartitionFile};
use groupuq::solver::{fit, LambdaPath};
use groupuq::{Execution, GroupPartition, GroupedDesign};
use log::info;
use nalgebra::DVector;
use serde::Serialize;

use crate::config::{self, DataConfig, GroupCorrConfig, RhoConfig};
use crate::error::{CliError, Result};

/// Files produced by a command, written only after it succeeds.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, String)>,
}

impl Outputs {
    pub fn add(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }

    pub fn add_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(groupuq::Error::from)?;
        self.add(name, text + "\n");
        Ok(())
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|source| CliError::Write { file: dir.to_path_buf(), source })?;
        for (name, contents) in &self.files {
            let file = dir.join(name);
            fs::write(&file, contents).map_err(|source| CliError::Write { file, source })?;
        }
        Ok(())
    }
}

/// Options shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub exec: Execution,
}

#[derive(Serialize)]
struct RunRecord<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    source: String,
    #[serde(flatten)]
    details: T,
}

fn run_record<T: Serialize>(out: &mut Outputs, command: &str, source: String, details: T) -> Result<()> {
    out.add_json("run.json", &RunRecord { command, version: env!("CARGO_PKG_VERSION"), source, details })
}

fn no_preset(ctx: &Context, command: &str) -> Result<()> {
    match ctx.preset {
        Some(_) => Err(CliError::Usage { message: format!("{command} does not accept --preset") }),
        None => Ok(()),
    }
}

struct Data {
    design: GroupedDesign,
    y: DVector<f64>,
    config: DataConfig,
    file: PathBuf,
}

fn load_data(ctx: &Context, command: &str) -> Result<Data> {
    no_preset(ctx, command)?;
    let file = config::required(ctx.config.as_deref(), command)?.to_path_buf();
    let mut config: DataConfig = config::load(&file)?;
    config::check_version(&file, config.schema_version)?;
    if let Some(seed) = ctx.seed {
        config.inference.seed = seed;
    }
    config.inference.validate()?;
    let options = CsvOptions { header: config.header, quantile_transform: false };
    let mut x = load_design_csv(config::resolve(&file, &config.x), &options)?;
    let y = load_design_csv(config::resolve(&file, &config.y), &options)?;
    if y.ncols() != 1 {
        return Err(groupuq::Error::InvalidData(format!("response CSV has {} columns; expected 1", y.ncols())).into());
    }
    let partition_file = config::resolve(&file, &config.partition);
    let text = fs::read_to_string(&partition_file).map_err(|source| CliError::Read { file: partition_file, source })?;
    let partition = GroupPartition::from_json(&text)?;
    if config.standardize {
        standardize_columns(&mut x);
    }
    let design = GroupedDesign::new(x, partition.into())?;
    Ok(Data { design, y: y.column(0).into_owned(), config, file })
}

#[derive(Serialize)]
struct FitOutput {
    fit: FitReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_path: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cv_errors: Option<Vec<f64>>,
}

pub fn fit_command(ctx: &Context) -> Result<Outputs> {
    let data = load_data(ctx, "fit")?;
    let inference = &data.config.inference;
    let output = match data.config.lambda {
        Some(lambda) => {
            let f = fit(&data.design, &data.y, lambda, inference.alpha, &inference.solver, None)?;
            FitOutput { fit: FitReport::from(&f), lambda_path: None, cv_errors: None }
        }
        None => {
            let (f, errors) = cv_fit(&data.design, &data.y, inference, ctx.exec)?;
            let path = LambdaPath::for_data(&data.design, &data.y, inference.alpha, inference.path)?;
            FitOutput { fit: FitReport::from(&f), lambda_path: Some(path.values().to_vec()), cv_errors: Some(errors) }
        }
    };
    let mut out = Outputs::default();
    out.add_json("fit.json", &output)?;
    Ok(out)
}

#[derive(Serialize)]
struct InferRun {
    seed: u64,
    replicates: usize,
    retries: usize,
    lambda: f64,
}

pub fn infer_command(ctx: &Context) -> Result<Outputs> {
    let data = load_data(ctx, "infer")?;
    let result = run_inference(&data.design, &data.y, &data.config.inference, None, ctx.exec)?;
    let mut out = Outputs::default();
    out.add("summary.csv", result.summary.to_csv());
    out.add_json("summary.json", &result.summary)?;
    out.add_json("fit.json", &FitReport::from(&result.fit))?;
    run_record(
        &mut out,
        "infer",
        data.file.display().to_string(),
        InferRun {
            seed: data.config.inference.seed,
            replicates: result.summary.replicates,
            retries: result.run.retries,
            lambda: result.fit.lambda,
        },
    )?;
    Ok(out)
}

#[derive(Serialize)]
struct SettingRun {
    name: String,
    seed: u64,
    datasets: usize,
    retries: usize,
}

#[derive(Serialize)]
struct SuiteRun {
    suite: String,
    settings: Vec<SettingRun>,
}

fn setting_run(config: &groupuq::experiments::ExperimentConfig, retries: usize) -> SettingRun {
    SettingRun { name: config.name.clone(), seed: config.seed, datasets: config.datasets, retries }
}

pub fn simulate_command(ctx: &Context) -> Result<Outputs> {
    let (mut suite, source) = config::suite(ctx.config.as_deref(), ctx.preset.as_deref())?;
    if let Some(seed) = ctx.seed {
        suite = suite.with_seed(seed);
    }
    suite.validate()?;
    let mut results: Vec<SettingResult> = Vec::new();
    for setting in &suite.settings {
        let start = Instant::now();
        let result = run_setting(setting, ctx.exec)?;
        info!("{}: {} datasets in {:.1}s", setting.name, setting.datasets, start.elapsed().as_secs_f64());
        results.push(result);
    }
    let rows: Vec<TableRow> =
        results.iter().map(|r| TableRow { label: r.label.clone(), metrics: r.metrics.clone() }).collect();
    let mut datasets = String::from(DATASETS_CSV_HEADER);
    for (setting, r) in suite.settings.iter().zip(&results) {
        datasets.push_str(&datasets_csv(&setting.name, &r.outcomes));
    }
    let mut reference = String::new();
    for table in ["table1", "table2"] {
        reference.push_str(&render_reference(table).unwrap_or_default());
    }
    let mut out = Outputs::default();
    out.add("table.csv", emit_table(&rows, TableFormat::Csv)?);
    out.add("table.txt", emit_table(&rows, TableFormat::Text)?);
    out.add("metrics.csv", metrics_csv(&rows)?);
    out.add("datasets.csv", datasets);
    out.add_json("metrics.json", &results)?;
    out.add("reference.txt", reference);
    let settings =
        suite.settings.iter().zip(&results).map(|(s, r)| setting_run(s, r.metrics.retries)).collect();
    run_record(&mut out, "simulate", source, SuiteRun { suite: suite.name.clone(), settings })?;
    Ok(out)
}

#[derive(Serialize)]
struct SweepOutput<'a> {
    setting: &'a str,
    label: SettingLabel,
    points: Vec<SweepPoint>,
}

pub fn sweep_command(ctx: &Context) -> Result<Outputs> {
    let (mut suite, source) = config::suite(ctx.config.as_deref(), ctx.preset.as_deref())?;
    if let Some(seed) = ctx.seed {
        suite = suite.with_seed(seed);
    }
    suite.validate()?;
    let k_max = suite.sweep_k_max.unwrap_or(6);
    let mut rows = Vec::new();
    let mut sweeps = Vec::new();
    let mut datasets = String::from("k,");
    datasets.push_str(DATASETS_CSV_HEADER);
    let mut settings = Vec::new();
    for setting in &suite.settings {
        let start = Instant::now();
        let points = sensitivity_sweep(setting, k_max, ctx.exec)?;
        info!("{}: k = 0..={k_max} in {:.1}s", setting.name, start.elapsed().as_secs_f64());
        let base = setting.label();
        for point in &points {
            let mut label = base.clone();
            let tag = format!("k={}", point.k);
            label.extra = Some(match &base.extra {
                Some(extra) => format!("{extra} {tag}"),
                None => tag,
            });
            rows.push(TableRow { label, metrics: point.metrics.clone() });
            for line in datasets_csv(&setting.name, &point.outcomes).lines() {
                datasets.push_str(&format!("{},{line}\n", point.k));
            }
        }
        let retries = points.first().map_or(0, |p| p.metrics.retries);
        settings.push(setting_run(setting, retries));
        sweeps.push(SweepOutput { setting: &setting.name, label: base, points });
    }
    let mut out = Outputs::default();
    out.add("sweep.csv", emit_table(&rows, TableFormat::Csv)?);
    out.add("sweep.txt", emit_table(&rows, TableFormat::Text)?);
    out.add("metrics.csv", metrics_csv(&rows)?);
    out.add("datasets.csv", datasets);
    out.add_json("metrics.json", &sweeps)?;
    run_record(&mut out, "sweep", source, SuiteRun { suite: suite.name.clone(), settings })?;
    Ok(out)
}

pub const RHO_CSV_HEADER: &str = "n,n_groups,p_max,alpha_star,reps,estimate,std_error,bound,holds\n";

fn rho_csv(rows: &[RhoDiagnostic]) -> String {
    let mut out = String::from(RHO_CSV_HEADER);
    for d in rows {
        out.push_str(&format!(
            "{},{},{},{:.16e},{},{:.16e},{:.16e},{:.16e},{}\n",
            d.n,
            d.n_groups,
            d.p_max,
            d.alpha_star,
            d.reps,
            d.estimate,
            d.std_error,
            d.bound,
            d.estimate <= d.bound
        ));
    }
    out
}

pub fn rho_command(ctx: &Context) -> Result<Outputs> {
    let (mut config, source) = match (ctx.config.as_deref(), ctx.preset.as_deref()) {
        (Some(file), None) => {
            let config: RhoConfig = config::load(file)?;
            config::check_version(file, config.schema_version)?;
            (config, file.display().to_string())
        }
        (None, Some(name)) => (RhoConfig::preset(name)?, format!("preset:{name}")),
        (None, None) => (RhoConfig::preset("default")?, "preset:default".into()),
        (Some(_), Some(_)) => {
            return Err(CliError::Usage { message: "--config and --preset are mutually exclusive".into() })
        }
    };
    if let Some(seed) = ctx.seed {
        config.seed = seed;
    }
    let mut rows = Vec::new();
    for (c, case) in config.cases.iter().enumerate() {
        let partition = GroupPartition::consecutive(case.n_groups * case.p_max, case.p_max)?;
        for &a in &config.alpha_star {
            let seed = groupuq::exec::derive_seed(config.seed, c as u64);
            rows.push(rho_diagnostic(case.n, &partition, a, config.reps, seed, ctx.exec)?);
        }
    }
    let mut out = Outputs::default();
    out.add("rho.csv", rho_csv(&rows));
    out.add_json("rho.json", &rows)?;
    run_record(&mut out, "rho-check", source, serde_json::json!({ "seed": config.seed, "reps": config.reps }))?;
    Ok(out)
}

pub fn group_corr_command(ctx: &Context) -> Result<Outputs> {
    no_preset(ctx, "group-corr")?;
    let file = config::required(ctx.config.as_deref(), "group-corr")?;
    let config: GroupCorrConfig = config::load(file)?;
    config::check_version(file, config.schema_version)?;
    let options = CsvOptions { header: config.header, quantile_transform: config.quantile_transform };
    let mut x = load_design_csv(config::resolve(file, &config.x), &options)?;
    if config.standardize {
        standardize_columns(&mut x);
    }
    let partition = group_by_correlation(&x, config.group_size)?;
    let mut out = Outputs::default();
    out.add_json("partition.json", &PartitionFile::from(partition))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outputs_are_written_only_on_request() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("nested/out");
        let mut out = Outputs::default();
        out.add("a.txt", "alpha\n".into());
        out.add_json("b.json", &[1.5, 2.0]).unwrap();
        assert!(!target.exists());
        out.write(&target).unwrap();
        assert_eq!(fs::read_to_string(target.join("a.txt")).unwrap(), "alpha\n");
        assert_eq!(out.names(), ["a.txt", "b.json"]);
    }

    #[test]
    fn rho_csv_has_one_row_per_configuration() {
        let d = RhoDiagnostic {
            n: 50,
            n_groups: 5,
            p_max: 4,
            alpha_star: 2.0,
            reps: 10,
            estimate: 0.4,
            std_error: 0.01,
            bound: 1.0,
        };
        let csv = rho_csv(&[d, d]);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().ends_with(",true"));
    }

    #[test]
    fn rho_preset_lists_nine_configurations() {
        let c = RhoConfig::preset("default").unwrap();
        assert_eq!(c.cases.len() * c.alpha_star.len(), 9);
        assert!(RhoConfig::preset("nope").is_err());
    }
}
