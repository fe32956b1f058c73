//! Experiment configuration files: process fields at the top level plus
//! `grid`, `experiment`, `output`, `seed` and an experiment-specific
//! `params` object.

use std::path::{Path, PathBuf};

use difflab_core::process::{GridConfig, ProcessConfig, ProcessSpec, TimeGrid};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult, Stage};

pub const DEFAULT_STEPS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ForwardMoments,
    CovarianceMethods,
    BackwardExact,
    EiChain,
    DdimChain,
    PaddimChain,
    LambdaMarginals,
    Equilibrium,
    RotatingBasis,
    ScoreCheck,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::ForwardMoments => "forward-moments",
            ExperimentKind::CovarianceMethods => "covariance-methods",
            ExperimentKind::BackwardExact => "backward-exact",
            ExperimentKind::EiChain => "ei-chain",
            ExperimentKind::DdimChain => "ddim-chain",
            ExperimentKind::PaddimChain => "paddim-chain",
            ExperimentKind::LambdaMarginals => "lambda-marginals",
            ExperimentKind::Equilibrium => "equilibrium",
            ExperimentKind::RotatingBasis => "rotating-basis",
            ExperimentKind::ScoreCheck => "score-check",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub process: ProcessConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub params: Map<String, Value>,
}

const TOP_LEVEL_KEYS: &[&str] = &[
    "dimension",
    "horizon",
    "kind",
    "schedule",
    "axes",
    "axis_schedules",
    "drift",
    "noise",
    "diffusion",
    "alpha_min",
    "grid",
    "experiment",
    "output",
    "seed",
    "params",
];

fn json_error(e: serde_json::Error) -> CliError {
    CliError::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
}

impl ExperimentConfig {
    /// Parses a config file's text. Unknown top-level keys are rejected by
    /// name since the flattened process block cannot deny them itself.
    pub fn from_json(text: &str) -> CliResult<Self> {
        let value: Value = serde_json::from_str(text).map_err(json_error)?;
        let Value::Object(map) = &value else {
            return Err(CliError::Config("config must be a JSON object".into()));
        };
        if let Some(key) = map.keys().find(|k| !TOP_LEVEL_KEYS.contains(&k.as_str())) {
            return Err(CliError::Config(format!(
                "unknown field `{key}`, expected one of {}",
                TOP_LEVEL_KEYS.join(", ")
            )));
        }
        serde_json::from_str(text).map_err(json_error)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn spec(&self) -> CliResult<ProcessSpec> {
        ProcessSpec::from_config(self.process.clone()).stage("process")
    }

    pub fn grid(&self) -> CliResult<TimeGrid> {
        self.grid.clone().unwrap_or(GridConfig::uniform(DEFAULT_STEPS)).build(self.process.horizon).stage("grid")
    }

    /// Typed view of `params`; unknown or mistyped fields are config errors.
    pub fn params<P: DeserializeOwned>(&self) -> CliResult<P> {
        serde_json::from_value(Value::Object(self.params.clone()))
            .map_err(|e| CliError::Config(format!("params: {e}")))
    }
}
