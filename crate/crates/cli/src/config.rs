use std::fs;
use std::path::{Path, PathBuf};

use groupuq::bootstrap::InferenceConfig;
use groupuq::experiments::{preset, ExperimentSuite, SCHEMA_VERSION};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_path_to_error::Segment;

use crate::error::{CliError, Result};

/// Data-driven runs (`fit`, `infer`). Paths are relative to the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub schema_version: u32,
    pub x: PathBuf,
    pub y: PathBuf,
    pub partition: PathBuf,
    /// `None` detects a header row.
    #[serde(default)]
    pub header: Option<bool>,
    /// Center and scale columns to unit variance before fitting.
    #[serde(default)]
    pub standardize: bool,
    /// Fixed penalty level for `fit`; cross-validated when absent.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub inference: InferenceConfig,
}

/// `group-corr` input.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupCorrConfig {
    pub schema_version: u32,
    pub x: PathBuf,
    pub group_size: usize,
    #[serde(default)]
    pub header: Option<bool>,
    #[serde(default)]
    pub quantile_transform: bool,
    #[serde(default)]
    pub standardize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhoCase {
    pub n: usize,
    pub n_groups: usize,
    pub p_max: usize,
}

/// `rho-check` input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhoConfig {
    pub schema_version: u32,
    pub cases: Vec<RhoCase>,
    pub alpha_star: Vec<f64>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_reps() -> usize {
    2000
}

fn default_seed() -> u64 {
    1
}

impl RhoConfig {
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(RhoConfig {
                schema_version: SCHEMA_VERSION,
                cases: vec![
                    RhoCase { n: 100, n_groups: 20, p_max: 10 },
                    RhoCase { n: 100, n_groups: 400, p_max: 1 },
                    RhoCase { n: 50, n_groups: 5, p_max: 4 },
                ],
                alpha_star: vec![1.0, 1.5, 2.0],
                reps: default_reps(),
                seed: default_seed(),
            }),
            _ => Err(CliError::Usage { message: format!("unknown rho-check preset '{name}' (available: default)") }),
        }
    }
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    let mut out = String::new();
    for segment in path.iter() {
        out.push('/');
        match segment {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

/// Read and deserialize a JSON config, reporting schema violations with a
/// JSON pointer to the offending value.
pub fn load<T: DeserializeOwned>(file: &Path) -> Result<T> {
    let text = fs::read_to_string(file).map_err(|source| CliError::Read { file: file.to_path_buf(), source })?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let value: T = serde_path_to_error::deserialize(&mut de).map_err(|e| CliError::Schema {
        file: file.to_path_buf(),
        pointer: pointer(e.path()),
        message: e.inner().to_string(),
    })?;
    de.end().map_err(|e| CliError::Schema { file: file.to_path_buf(), pointer: String::new(), message: e.to_string() })?;
    Ok(value)
}

pub fn check_version(file: &Path, version: u32) -> Result<()> {
    if version == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(CliError::Schema {
            file: file.to_path_buf(),
            pointer: "/schema_version".into(),
            message: format!("schema_version {version} is not supported (expected {SCHEMA_VERSION})"),
        })
    }
}

/// Resolve `path` against the directory holding the config file.
pub fn resolve(config_file: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        config_file.parent().unwrap_or(Path::new(".")).join(path)
    }
}

/// Experiment suite from `--preset` or `--config`.
pub fn suite(config: Option<&Path>, preset_name: Option<&str>) -> Result<(ExperimentSuite, String)> {
    match (config, preset_name) {
        (Some(file), None) => {
            let suite: ExperimentSuite = load(file)?;
            check_version(file, suite.schema_version)?;
            Ok((suite, file.display().to_string()))
        }
        (None, Some(name)) => Ok((preset(name)?, format!("preset:{name}"))),
        _ => Err(CliError::Usage { message: "exactly one of --config or --preset is required".into() }),
    }
}

pub fn required<'a>(config: Option<&'a Path>, command: &str) -> Result<&'a Path> {
    config.ok_or_else(|| CliError::Usage { message: format!("{command} requires --config") })
}
