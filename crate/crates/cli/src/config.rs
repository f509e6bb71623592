use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use qtmlab::equilibrium::{FixedPointConfig, SolveRoute};
use qtmlab::instance::{GeneratorSpec, Instance, InstanceFile};
use qtmlab::squap::SquapConfig;

use crate::error::CliError;

/// An instance given inline or as a path relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstanceSource {
    Path(PathBuf),
    Inline(InstanceFile),
}

impl InstanceSource {
    pub fn load(&self, base: &Path) -> Result<Instance, CliError> {
        let file = match self {
            InstanceSource::Inline(f) => f.clone(),
            InstanceSource::Path(p) => {
                let path = base.join(p);
                let text = read(&path)?;
                parse_json::<InstanceFile>(&text, &path)?
            }
        };
        file.into_instance()
            .map_err(|e| CliError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct GenerateConfig {
    pub generator: GeneratorSpec,
    /// External welfare to attach to the generated instance.
    #[serde(default, rename = "B")]
    pub b: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SolveConfig {
    pub instance: InstanceSource,
    /// Defaults to half the largest value.
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub route: SolveRoute,
    #[serde(default)]
    pub fixed_point: FixedPointConfig,
    /// Extra random starts for finding further equilibria.
    #[serde(default)]
    pub starts: usize,
    #[serde(default = "default_br_tol")]
    pub br_tol: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_br_tol() -> f64 {
    1e-6
}

fn default_per_bucket() -> usize {
    10
}

fn default_m() -> usize {
    2
}

fn default_sweep_starts() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SweepConfig {
    /// Target spreads `T`, one bucket each.
    pub spreads: Vec<f64>,
    #[serde(default = "default_per_bucket")]
    pub per_bucket: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    /// Random starts per instance when `m > 2`.
    #[serde(default = "default_sweep_starts")]
    pub starts: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SquapGenerator {
    pub n: usize,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SquapCliConfig {
    /// Instance with external welfare `B`.
    #[serde(default)]
    pub instance: Option<InstanceSource>,
    /// Used when no instance is given.
    #[serde(default)]
    pub generate: Option<SquapGenerator>,
    pub squap: SquapConfig,
}

pub fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Byte offset of a 1-based (line, column) position.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    start + column.saturating_sub(1)
}

pub fn parse_json<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read(path)?;
    parse_json(&text, path)
}
