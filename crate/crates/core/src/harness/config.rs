use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_file, HarnessError};
use crate::analog::Ridge;
use crate::classify::ValidWindow;
use crate::domain::{ProbTriple, Zone};
use crate::induct::CriticalFactor;
use crate::inference::LearningParams;
use crate::parcel::{DEFAULT_DRAG_K, DEFAULT_DZ};
use crate::scoring::ScoreOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecasterKind {
    Linear,
    RuleBackward,
    StagedPipeline,
    Analog,
    Induction,
    Parcel,
    Climatology,
}

impl ForecasterKind {
    pub fn needs_config(self) -> bool {
        self != ForecasterKind::Climatology
    }

    pub fn can_learn(self) -> bool {
        matches!(self, ForecasterKind::RuleBackward | ForecasterKind::Analog)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub id: String,
    pub kind: ForecasterKind,
    #[serde(default)]
    pub config: Option<PathBuf>,
    /// Zones forecast; defaults to the built-in coverage for known ids.
    #[serde(default)]
    pub coverage: Option<BTreeSet<Zone>>,
    #[serde(default)]
    pub learning: bool,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_bins() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenarios: PathBuf,
    /// Event-report ledger.
    pub observations: PathBuf,
    /// Observation table (`date,zone,category`) from earlier seasons. Without
    /// it the reference climatology is taken in-sample.
    #[serde(default)]
    pub climatology_history: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub valid_window: ValidWindow,
    pub forecasters: Vec<Registration>,
    #[serde(default)]
    pub scoring: ScoreOptions,
    #[serde(default = "default_bins")]
    pub reliability_bins: usize,
    /// Run every operator's answers, not only the primary operator's.
    #[serde(default)]
    pub all_operators: bool,
    #[serde(default)]
    pub seed: u64,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = read_file(path)?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
            file: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut seen = BTreeSet::new();
        for r in &self.forecasters {
            if !seen.insert(r.id.as_str()) {
                return Err(HarnessError::Config(format!("duplicate forecaster id `{}`", r.id)));
            }
            if r.kind.needs_config() && r.config.is_none() {
                return Err(HarnessError::Config(format!("forecaster `{}` needs a config file", r.id)));
            }
            if r.learning && !r.kind.can_learn() {
                return Err(HarnessError::Config(format!(
                    "forecaster `{}`: {:?} forecasters cannot learn",
                    r.id, r.kind
                )));
            }
            if r.coverage.as_ref().is_some_and(BTreeSet::is_empty) {
                return Err(HarnessError::Config(format!("forecaster `{}` has empty coverage", r.id)));
            }
        }
        if self.reliability_bins < 2 {
            return Err(HarnessError::Config("reliability_bins must be at least 2".into()));
        }
        Ok(())
    }

    pub fn registration(&self, id: &str) -> Option<&Registration> {
        self.forecasters.iter().find(|r| r.id == id)
    }
}

/// Reads a kind-specific JSON config; returns it with its directory.
pub(crate) fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(T, PathBuf), HarnessError> {
    let text = read_file(path)?;
    let value = serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
        file: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    Ok((value, path.parent().map(Path::to_path_buf).unwrap_or_default()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleBackwardConfig {
    pub rules: PathBuf,
    #[serde(default)]
    pub learning: LearningParams,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagedConfig {
    pub rules: PathBuf,
    #[serde(default = "one")]
    pub required_fraction: f64,
    #[serde(default)]
    pub base_severe: Option<ProbTriple>,
    #[serde(default)]
    pub base_nonsevere: Option<ProbTriple>,
}

fn default_model_weight() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogConfig {
    pub features: Vec<String>,
    pub library: PathBuf,
    #[serde(default)]
    pub ridge: Ridge,
    /// Weight of the discriminant posterior against climatology.
    #[serde(default = "default_model_weight")]
    pub model_weight: f64,
}

fn default_class_column() -> String {
    "class".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleConfig {
    pub name: String,
    /// Example table the module's tree is induced from.
    pub examples: PathBuf,
    #[serde(default = "default_class_column")]
    pub class_column: String,
    #[serde(default)]
    pub critical: Option<CriticalFactor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InductionConfig {
    pub root: String,
    pub modules: Vec<ModuleConfig>,
    /// Probability triple issued for each root label.
    pub labels: BTreeMap<String, ProbTriple>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingConfig {
    pub start: f64,
    pub end: f64,
    /// Afternoon minus morning surface temperature, °C.
    pub warming_c: f64,
    /// Afternoon minus morning surface dewpoint, °C.
    pub moistening_c: f64,
    /// Minutes after the morning observation the forecast parcel is taken at.
    pub at: f64,
}

fn default_drag() -> f64 {
    DEFAULT_DRAG_K
}

fn default_dz() -> f64 {
    DEFAULT_DZ
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParcelConfig {
    pub rules: PathBuf,
    #[serde(default = "default_drag")]
    pub drag_k: f64,
    #[serde(default = "default_dz")]
    pub dz: f64,
    pub mixing: MixingConfig,
}
