//! Run configuration: one JSON document with a section per command.
//!
//! Relative paths resolve against the output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sevenleague::dataset::ParamDomain;
use sevenleague::harness::{Coupling, SchemeId};
use sevenleague::interpolation::{Extrapolation, InterpolantKind};
use sevenleague::models::SdeParams;
use sevenleague::neural::TrainConfig;
use sevenleague::pricing::{Continuation, OptionSpec};
use sevenleague::schemes::ClassicalScheme;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub data: Option<DataSection>,
    #[serde(default)]
    pub training: Option<TrainSection>,
    #[serde(default)]
    pub scheme: Option<SchemeSection>,
    #[serde(default)]
    pub pricing: Option<PricingSection>,
    #[serde(default)]
    pub study: Option<StudySection>,
    #[serde(default)]
    pub ks: Option<KsSection>,
}

fn default_points() -> usize {
    5
}

fn default_label_scheme() -> ClassicalScheme {
    ClassicalScheme::Euler
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Merged in order into one dataset.
    pub domains: Vec<ParamDomain>,
    #[serde(default = "default_points")]
    pub quadrature_points: usize,
    #[serde(default = "default_label_scheme")]
    pub label_scheme: ClassicalScheme,
    pub output: PathBuf,
}

fn default_hidden() -> Vec<usize> {
    sevenleague::neural::DEFAULT_HIDDEN.to_vec()
}

fn default_fraction() -> f64 {
    0.9
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub dataset: PathBuf,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub optimizer: TrainConfig,
    /// GBM only: fit on rows divided by their starting value.
    #[serde(default)]
    pub normalize_gbm: bool,
    pub output: PathBuf,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateSection {
    pub model: PathBuf,
    /// Network for the CDC marginal points; defaults to `model`.
    #[serde(default)]
    pub marginal_model: Option<PathBuf>,
    #[serde(default)]
    pub interpolant: Option<InterpolantKind>,
    #[serde(default = "yes")]
    pub clamp_domain: bool,
    /// CDC realizations outside the marginal points: clamp or linear.
    #[serde(default)]
    pub extrapolation: Extrapolation,
    /// Prebuilt CDC matrix; used instead of building one.
    #[serde(default)]
    pub matrix: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub kind: SchemeId,
    pub params: SdeParams,
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    #[serde(default)]
    pub surrogate: Option<SurrogateSection>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingSection {
    pub option: OptionSpec,
    #[serde(default)]
    pub continuation: Continuation,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StudySection {
    Convergence {
        schemes: Vec<SchemeId>,
        params: SdeParams,
        horizon: f64,
        dt_values: Vec<f64>,
        n_paths: usize,
        #[serde(default)]
        surrogate: Option<SurrogateSection>,
        output: PathBuf,
    },
    Timing {
        params: SdeParams,
        horizon: f64,
        dt_values: Vec<f64>,
        n_paths: usize,
        #[serde(default)]
        interpolants: Option<Vec<InterpolantKind>>,
        surrogate: SurrogateSection,
        output: PathBuf,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KsSection {
    pub schemes: Vec<SchemeId>,
    pub params: SdeParams,
    pub dt: f64,
    pub horizon: f64,
    pub n_samples: usize,
    #[serde(default)]
    pub coupling: Coupling,
    #[serde(default)]
    pub surrogate: Option<SurrogateSection>,
    pub output: PathBuf,
}

/// A config that failed to parse or validate, with the offending field.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
}

pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            ConfigError(inner.to_string())
        } else {
            ConfigError(format!("at `{path}`: {inner}"))
        }
    })
}

pub fn require<'a, T>(section: &'a Option<T>, name: &str, command: &str) -> Result<&'a T, ConfigError> {
    section
        .as_ref()
        .ok_or_else(|| ConfigError(format!("`{command}` needs a `{name}` section")))
}
