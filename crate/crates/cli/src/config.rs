//! TOML configuration file. Every key is optional; a value given on the
//! command line wins over the file, and the file wins over built-in defaults.

use std::path::{Path, PathBuf};

use coverage_pilot::grid::DensityTier;
use coverage_pilot::mission::{MissionConfig, PlannerKind};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Plain,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Heuristic,
    Remote,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub format: Option<Format>,
    pub jobs: Option<usize>,
    pub backend: BackendSection,
    pub mission: Option<MissionConfig>,
    pub map: MapSection,
    pub simulate: SimulateSection,
    pub search: SearchSection,
    pub collect: CollectSection,
    pub bench: BenchSection,
    pub serve: ServeSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: Option<BackendKind>,
    /// Overrides the base address from the environment.
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub timeout_secs: Option<f64>,
    pub max_retries: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSection {
    pub file: Option<PathBuf>,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub density: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub instruction: Option<String>,
    pub max_steps: Option<u64>,
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub instruction: Option<String>,
    pub rollout_log: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectSection {
    pub episodes: Option<usize>,
    pub out: Option<PathBuf>,
    pub stem: Option<String>,
    pub split_ratio: Option<f64>,
    pub shard_size: Option<usize>,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub densities: Option<Vec<Density>>,
    pub instructions: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub densities: Option<Vec<Density>>,
    pub planners: Option<Vec<PlannerKind>>,
    pub trials: Option<usize>,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub instruction: Option<String>,
    pub out: Option<PathBuf>,
    pub latency: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub addr: Option<String>,
    pub step_interval_ms: Option<u64>,
    pub stream_buffer: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

/// Obstacle density given as a tier name (`sparse`, `medium`, `dense`) or a
/// fraction in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(try_from = "DensityRepr")]
pub struct Density(pub f64);

#[derive(Deserialize)]
#[serde(untagged)]
enum DensityRepr {
    Number(f64),
    Name(String),
}

impl TryFrom<DensityRepr> for Density {
    type Error = String;

    fn try_from(r: DensityRepr) -> Result<Self, String> {
        match r {
            DensityRepr::Number(v) => Density::checked(v),
            DensityRepr::Name(s) => s.parse(),
        }
    }
}

impl Density {
    fn checked(v: f64) -> Result<Self, String> {
        if (0.0..1.0).contains(&v) {
            Ok(Density(v))
        } else {
            Err(format!("density {v} outside [0, 1)"))
        }
    }
}

impl std::str::FromStr for Density {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Ok(tier) = s.parse::<DensityTier>() {
            return Ok(Density(tier.fraction()));
        }
        match s.parse::<f64>() {
            Ok(v) => Density::checked(v),
            Err(_) => Err(format!("`{s}` is neither a density tier (sparse, medium, dense) nor a number")),
        }
    }
}

pub fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
}

/// First value present among flag, file and default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
