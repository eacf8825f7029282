//! Weighted-sum judgment models with calibrated output and optional
//! inhibition heuristics.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DomainError, FeatureMap, FeatureRegistry, ProbTriple};
use crate::ruledsl::{eval_predicate, parse_predicate, Predicate, RuleError};

#[derive(Debug, Error)]
pub enum LinearError {
    #[error("missing model variable(s): {}", .0.join(", "))]
    MissingVariable(Vec<String>),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("inhibition {index}: {source}")]
    Inhibition { index: usize, source: RuleError },
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Monotone piecewise-linear map from score to a value in [0, 1].
/// Scores outside the knot range take the end values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct CalibrationCurve {
    knots: Vec<(f64, f64)>,
}

impl CalibrationCurve {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self, LinearError> {
        if knots.is_empty() {
            return Err(LinearError::InvalidSpec("calibration curve needs at least one knot".into()));
        }
        for &(s, v) in &knots {
            if !s.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(LinearError::InvalidSpec(format!("bad knot ({s}, {v})")));
            }
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(LinearError::InvalidSpec("knot scores must be strictly increasing".into()));
            }
            if w[1].1 < w[0].1 {
                return Err(LinearError::InvalidSpec("knot values must be non-decreasing".into()));
            }
        }
        Ok(CalibrationCurve { knots })
    }

    pub fn constant(value: f64) -> Result<Self, LinearError> {
        CalibrationCurve::new(vec![(0.0, value)])
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn eval(&self, score: f64) -> f64 {
        let first = self.knots[0];
        let last = self.knots[self.knots.len() - 1];
        if score <= first.0 {
            return first.1;
        }
        if score >= last.0 {
            return last.1;
        }
        let i = self.knots.partition_point(|k| k.0 <= score);
        let (s0, v0) = self.knots[i - 1];
        let (s1, v1) = self.knots[i];
        v0 + (v1 - v0) * (score - s0) / (s1 - s0)
    }
}

impl TryFrom<Vec<(f64, f64)>> for CalibrationCurve {
    type Error = LinearError;

    fn try_from(knots: Vec<(f64, f64)>) -> Result<Self, Self::Error> {
        CalibrationCurve::new(knots)
    }
}

impl From<CalibrationCurve> for Vec<(f64, f64)> {
    fn from(c: CalibrationCurve) -> Self {
        c.knots
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inhibition {
    pub when: Predicate,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModelSpec {
    pub variables: Vec<String>,
    pub weights: Vec<f64>,
    /// Per-variable (min, max) mapped onto [0, 1].
    pub scaling: Vec<(f64, f64)>,
    pub calibration: CalibrationCurve,
    pub severe_share: CalibrationCurve,
    pub inhibitions: Vec<Inhibition>,
}

/// On-disk form: inhibition conditions are rule-language predicates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearModelFile {
    pub variables: Vec<String>,
    pub weights: Vec<f64>,
    pub scaling: Vec<(f64, f64)>,
    pub calibration: CalibrationCurve,
    pub severe_share: CalibrationCurve,
    #[serde(default)]
    pub inhibitions: Vec<InhibitionFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InhibitionFile {
    pub when: String,
    pub factor: f64,
}

impl LinearModelSpec {
    pub fn new(
        variables: Vec<String>,
        weights: Vec<f64>,
        scaling: Vec<(f64, f64)>,
        calibration: CalibrationCurve,
        severe_share: CalibrationCurve,
        inhibitions: Vec<Inhibition>,
    ) -> Result<Self, LinearError> {
        if variables.len() != weights.len() || variables.len() != scaling.len() {
            return Err(LinearError::InvalidSpec(format!(
                "{} variables, {} weights, {} scalings",
                variables.len(),
                weights.len(),
                scaling.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
            return Err(LinearError::InvalidSpec(format!("non-finite weight {w}")));
        }
        for (name, (lo, hi)) in variables.iter().zip(&scaling) {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(LinearError::InvalidSpec(format!("scaling for `{name}` must have min < max")));
            }
        }
        if let Some(i) = inhibitions.iter().find(|i| !(0.0..=1.0).contains(&i.factor)) {
            return Err(LinearError::InvalidSpec(format!("inhibition factor {} outside [0, 1]", i.factor)));
        }
        Ok(LinearModelSpec { variables, weights, scaling, calibration, severe_share, inhibitions })
    }

    pub fn from_file(file: LinearModelFile, registry: Option<&FeatureRegistry>) -> Result<Self, LinearError> {
        if let Some(reg) = registry {
            if let Some(v) = file.variables.iter().find(|v| !reg.contains(v)) {
                return Err(LinearError::InvalidSpec(format!("unregistered variable `{v}`")));
            }
        }
        let inhibitions = file
            .inhibitions
            .iter()
            .enumerate()
            .map(|(index, inh)| {
                parse_predicate(&inh.when, registry)
                    .map(|when| Inhibition { when, factor: inh.factor })
                    .map_err(|source| LinearError::Inhibition { index, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        LinearModelSpec::new(
            file.variables,
            file.weights,
            file.scaling,
            file.calibration,
            file.severe_share,
            inhibitions,
        )
    }

    pub fn load(path: &Path, registry: Option<&FeatureRegistry>) -> Result<Self, LinearError> {
        let io = |message: String| LinearError::Io { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        let file: LinearModelFile = serde_json::from_str(&text).map_err(|e| io(e.to_string()))?;
        LinearModelSpec::from_file(file, registry)
    }

    pub fn to_file(&self) -> LinearModelFile {
        LinearModelFile {
            variables: self.variables.clone(),
            weights: self.weights.clone(),
            scaling: self.scaling.clone(),
            calibration: self.calibration.clone(),
            severe_share: self.severe_share.clone(),
            inhibitions: self
                .inhibitions
                .iter()
                .map(|i| InhibitionFile { when: i.when.to_string(), factor: i.factor })
                .collect(),
        }
    }
}

fn rescale(x: f64, (lo, hi): (f64, f64)) -> f64 {
    ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// `sum_i w_i * rescale_i(x_i)`.
pub fn linear_score(spec: &LinearModelSpec, features: &FeatureMap) -> Result<f64, LinearError> {
    let missing: Vec<String> =
        spec.variables.iter().filter(|v| features.get(*v).is_none_or(|x| x.is_nan())).cloned().collect();
    if !missing.is_empty() {
        return Err(LinearError::MissingVariable(missing));
    }
    Ok(spec
        .variables
        .iter()
        .zip(&spec.weights)
        .zip(&spec.scaling)
        .map(|((v, w), s)| w * rescale(features[v], *s))
        .sum())
}

/// Multiplies the score by the factor of every inhibition that holds. Factors
/// are applied in ascending order, so the result does not depend on the order
/// of the inhibition list.
pub fn apply_inhibitions(spec: &LinearModelSpec, features: &FeatureMap, score: f64) -> f64 {
    let mut factors: Vec<f64> =
        spec.inhibitions.iter().filter(|i| eval_predicate(&i.when, features).is_true()).map(|i| i.factor).collect();
    factors.sort_by(f64::total_cmp);
    factors.into_iter().fold(score, |s, f| s * f)
}

/// Probability of an event from the calibrated score, split into categories
/// 1 and 2 by the severe-share curve: `(1 - P, P - P*s, P*s)`.
pub fn calibrated_forecast(spec: &LinearModelSpec, features: &FeatureMap) -> Result<ProbTriple, LinearError> {
    let score = apply_inhibitions(spec, features, linear_score(spec, features)?);
    let p_event = spec.calibration.eval(score);
    let share = spec.severe_share.eval(score);
    let p2 = p_event * share;
    Ok(ProbTriple::new(1.0 - p_event, p_event - p2, p2)?)
}

/// 1 when a wind direction (degrees) lies in the upslope sector
/// [20, 160] for the plains east of the Front Range, else 0.
pub fn upslope_indicator(wind_dir_deg: f64) -> f64 {
    let d = wind_dir_deg.rem_euclid(360.0);
    if (20.0..=160.0).contains(&d) {
        1.0
    } else {
        0.0
    }
}
