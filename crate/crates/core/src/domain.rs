//! Shared vocabulary: zones, weather categories, probability triples,
//! scenarios, forecasts and forecaster coverage.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parcel::SoundingLevel;

/// Tolerance on `p0 + p1 + p2 = 1`.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("probabilities sum to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("probability component {index} = {value} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("unknown forecaster `{0}`")]
    UnknownForecaster(String),
    #[error("unknown zone `{0}`")]
    UnknownZone(String),
    #[error("invalid weather category `{0}`")]
    InvalidCategory(String),
    #[error("invalid scenario for {date}: {reason}")]
    InvalidScenario { date: NaiveDate, reason: String },
    #[error("coverage for `{0}` is empty")]
    EmptyCoverage(String),
    #[error("feature registry: {0}")]
    Registry(String),
}

/// Verified severity of convective weather in a zone on a day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum WeatherCategory {
    Nonsignificant = 0,
    Significant = 1,
    Severe = 2,
}

impl WeatherCategory {
    pub const ALL: [WeatherCategory; 3] =
        [WeatherCategory::Nonsignificant, WeatherCategory::Significant, WeatherCategory::Severe];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(WeatherCategory::Nonsignificant),
            1 => Some(WeatherCategory::Significant),
            2 => Some(WeatherCategory::Severe),
            _ => None,
        }
    }

    /// True for the "significant or severe" event.
    pub fn is_event(self) -> bool {
        self >= WeatherCategory::Significant
    }
}

impl TryFrom<u8> for WeatherCategory {
    type Error = DomainError;

    fn try_from(code: u8) -> Result<Self, Self::Error> {
        WeatherCategory::from_code(code).ok_or_else(|| DomainError::InvalidCategory(code.to_string()))
    }
}

impl From<WeatherCategory> for u8 {
    fn from(c: WeatherCategory) -> u8 {
        c.code()
    }
}

impl fmt::Display for WeatherCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl FromStr for WeatherCategory {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim()
            .parse::<u8>()
            .ok()
            .and_then(WeatherCategory::from_code)
            .ok_or_else(|| DomainError::InvalidCategory(s.to_string()))
    }
}

/// A forecast target region. `Overall` is forecast on its own, not derived
/// from the four sub-zones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Zone {
    Z1,
    Z2,
    Z3,
    Z4,
    Overall,
}

impl Zone {
    pub const ALL: [Zone; 5] = [Zone::Z1, Zone::Z2, Zone::Z3, Zone::Z4, Zone::Overall];
    pub const SUB_ZONES: [Zone; 4] = [Zone::Z1, Zone::Z2, Zone::Z3, Zone::Z4];

    pub fn as_str(self) -> &'static str {
        match self {
            Zone::Z1 => "Z1",
            Zone::Z2 => "Z2",
            Zone::Z3 => "Z3",
            Zone::Z4 => "Z4",
            Zone::Overall => "Overall",
        }
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Zone {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "Z1" | "z1" | "1" => Ok(Zone::Z1),
            "Z2" | "z2" | "2" => Ok(Zone::Z2),
            "Z3" | "z3" | "3" => Ok(Zone::Z3),
            "Z4" | "z4" | "4" => Ok(Zone::Z4),
            "Overall" | "overall" | "OVERALL" => Ok(Zone::Overall),
            other => Err(DomainError::UnknownZone(other.to_string())),
        }
    }
}

/// Mutually exclusive, exhaustive probabilities of categories 0, 1 and 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbTriple {
    p: [f64; 3],
}

impl ProbTriple {
    pub fn new(p0: f64, p1: f64, p2: f64) -> Result<Self, DomainError> {
        let p = [p0, p1, p2];
        for (index, &value) in p.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(DomainError::OutOfRange { index, value });
            }
        }
        let sum = p0 + p1 + p2;
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(DomainError::NotNormalized { sum });
        }
        Ok(ProbTriple { p })
    }

    /// Renormalizes non-negative scores into a triple.
    pub fn from_scores(scores: [f64; 3]) -> Result<Self, DomainError> {
        for (index, &value) in scores.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(DomainError::OutOfRange { index, value });
            }
        }
        let total: f64 = scores.iter().sum();
        if total <= 0.0 {
            return Err(DomainError::NotNormalized { sum: total });
        }
        ProbTriple::new(scores[0] / total, scores[1] / total, scores[2] / total)
    }

    pub fn certain(category: WeatherCategory) -> Self {
        let mut p = [0.0; 3];
        p[category.index()] = 1.0;
        ProbTriple { p }
    }

    pub fn uniform() -> Self {
        ProbTriple { p: [1.0 / 3.0; 3] }
    }

    pub fn p0(&self) -> f64 {
        self.p[0]
    }

    pub fn p1(&self) -> f64 {
        self.p[1]
    }

    pub fn p2(&self) -> f64 {
        self.p[2]
    }

    pub fn get(&self, category: WeatherCategory) -> f64 {
        self.p[category.index()]
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.p
    }

    /// Probability of the "significant or severe" event.
    pub fn event_probability(&self) -> f64 {
        self.p[1] + self.p[2]
    }

    /// Convex combination `w * self + (1 - w) * other`.
    pub fn blend(&self, other: &ProbTriple, w: f64) -> Result<Self, DomainError> {
        let mix = |a: f64, b: f64| (w * a + (1.0 - w) * b).clamp(0.0, 1.0);
        ProbTriple::from_scores([mix(self.p[0], other.p[0]), mix(self.p[1], other.p[1]), mix(self.p[2], other.p[2])])
    }
}

impl<'de> Deserialize<'de> for ProbTriple {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            p: [f64; 3],
        }
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Array([f64; 3]),
            Object(Raw),
        }
        let p = match Repr::deserialize(deserializer)? {
            Repr::Array(p) => p,
            Repr::Object(raw) => raw.p,
        };
        ProbTriple::new(p[0], p[1], p[2]).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for ProbTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.3}, {:.3}, {:.3})", self.p[0], self.p[1], self.p[2])
    }
}

/// Checked constructor for a probability triple.
pub fn make_prob_triple(p0: f64, p1: f64, p2: f64) -> Result<ProbTriple, DomainError> {
    ProbTriple::new(p0, p1, p2)
}

/// Named numeric features; units are documented in the feature registry.
pub type FeatureMap = BTreeMap<String, f64>;

/// An operator's answer to one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Numeric(f64),
    Categorical(String),
}

impl Answer {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Answer::Numeric(x) => Some(*x),
            Answer::Categorical(s) => s.trim().parse().ok(),
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::Numeric(x) => write!(f, "{x}"),
            Answer::Categorical(s) => f.write_str(s),
        }
    }
}

pub type AnswerSet = BTreeMap<String, Answer>;

/// One forecast day's input snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub date: NaiveDate,
    pub features: BTreeMap<Zone, FeatureMap>,
    #[serde(default)]
    pub sounding: Vec<SoundingLevel>,
    pub answers: BTreeMap<String, AnswerSet>,
    #[serde(default)]
    pub climatology_tag: String,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), DomainError> {
        for (zone, fm) in &self.features {
            if fm.is_empty() {
                return Err(DomainError::InvalidScenario {
                    date: self.date,
                    reason: format!("zone {zone} has an empty feature map"),
                });
            }
        }
        if self.answers.is_empty() {
            return Err(DomainError::InvalidScenario { date: self.date, reason: "no operator answer set".into() });
        }
        Ok(())
    }

    pub fn operators(&self) -> impl Iterator<Item = &str> {
        self.answers.keys().map(String::as_str)
    }

    /// The operator whose answers drive the main run: the lexicographically first.
    pub fn primary_operator(&self) -> Option<&str> {
        self.answers.keys().next().map(String::as_str)
    }
}

/// One forecaster's forecasts for one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSet {
    pub forecaster_id: String,
    pub date: NaiveDate,
    pub entries: BTreeMap<Zone, ProbTriple>,
    pub runtime_ms: f64,
    pub questions_asked: u32,
    pub operator_id: String,
}

/// The zones a forecaster issues forecasts for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageSpec {
    pub forecaster_id: String,
    pub zones: BTreeSet<Zone>,
}

impl CoverageSpec {
    pub fn new(forecaster_id: impl Into<String>, zones: impl IntoIterator<Item = Zone>) -> Result<Self, DomainError> {
        let forecaster_id = forecaster_id.into();
        let zones: BTreeSet<Zone> = zones.into_iter().collect();
        if zones.is_empty() {
            return Err(DomainError::EmptyCoverage(forecaster_id));
        }
        Ok(CoverageSpec { forecaster_id, zones })
    }

    pub fn covers(&self, zone: Zone) -> bool {
        self.zones.contains(&zone)
    }
}

/// Declared coverage of the built-in forecaster identities.
pub fn default_coverage(forecaster_id: &str) -> Result<CoverageSpec, DomainError> {
    use Zone::*;
    let zones: &[Zone] = match forecaster_id {
        "willard" => &[Overall],
        "oci" => &[Z2, Z3, Z4],
        "alps" | "swap" | "kasspr" | "gopad" | "gopad-static" | "gopad-learning" | "convex" | "noise" => {
            &[Z1, Z2, Z3, Z4]
        }
        "climatology" => &[Z1, Z2, Z3, Z4, Overall],
        other => return Err(DomainError::UnknownForecaster(other.to_string())),
    };
    CoverageSpec::new(forecaster_id, zones.iter().copied())
}

/// One entry of the feature registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub unit: String,
    pub description: String,
}

/// The set of feature names rules and models may reference.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureRegistry {
    features: BTreeMap<String, FeatureDef>,
}

const DEFAULT_REGISTRY: &str = include_str!("../data/features.csv");

impl FeatureRegistry {
    /// The registry shipped with the crate.
    pub fn builtin() -> Self {
        FeatureRegistry::from_csv(DEFAULT_REGISTRY.as_bytes()).expect("builtin feature registry is valid")
    }

    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Self, DomainError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut features = BTreeMap::new();
        for (i, row) in rdr.deserialize::<FeatureDef>().enumerate() {
            let def = row.map_err(|e| DomainError::Registry(format!("row {}: {e}", i + 2)))?;
            if features.insert(def.name.clone(), def).is_some() {
                return Err(DomainError::Registry(format!("duplicate feature on row {}", i + 2)));
            }
        }
        Ok(FeatureRegistry { features })
    }

    pub fn load(path: &Path) -> Result<Self, DomainError> {
        let file = std::fs::File::open(path).map_err(|e| DomainError::Registry(format!("{}: {e}", path.display())))?;
        FeatureRegistry::from_csv(file)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.features.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&FeatureDef> {
        self.features.get(name)
    }

    pub fn insert(&mut self, def: FeatureDef) {
        self.features.insert(def.name.clone(), def);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}
