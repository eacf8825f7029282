//! Rule-based inference over [`RuleSet`]s.
//!
//! Two engines share the rule language:
//!
//! * [`backward_chain`] tests each of the three category hypotheses
//!   independently. A hypothesis' score is the sum of the learned weights of
//!   its fired rules; scores are normalized into a triple. Weights live in a
//!   [`ConfidenceState`] and are adjusted after verification by
//!   [`update_confidence`].
//! * [`staged_pipeline`] screens necessary conditions, then requires a
//!   fraction of sufficient conditions before assigning a base triple, and
//!   finally applies multiplicative modifiers.
//!
//! Both produce a [`Trace`] that [`explain`] renders as text.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DomainError, FeatureMap, ProbTriple, WeatherCategory};
use crate::ruledsl::{eval_predicate, Rule, RuleKind, RuleSet, Stage, Tri};

#[derive(Debug, Error, PartialEq)]
pub enum InferenceError {
    #[error("rule `{0}` has no confidence weight and no initial weight is configured")]
    MissingWeight(String),
    #[error("rule `{id}` is a {found} rule; this engine accepts only {expected}")]
    WrongStage { id: String, found: Stage, expected: String },
    #[error("invalid learning parameters: {0}")]
    InvalidParams(String),
    #[error("required sufficient fraction {0} is outside (0, 1]")]
    InvalidFraction(f64),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Learning constants for confidence weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningParams {
    pub eta: f64,
    /// Penalty step for wrong forecasts; `None` means the same as `eta`.
    #[serde(default)]
    pub penalty: Option<f64>,
    pub w_min: f64,
    pub w_max: f64,
    /// Weight given to rules without an entry; `None` makes that an error.
    pub w_init: Option<f64>,
}

impl Default for LearningParams {
    fn default() -> Self {
        LearningParams { eta: 0.05, penalty: None, w_min: 0.01, w_max: 1.0, w_init: Some(0.5) }
    }
}

impl LearningParams {
    pub fn validate(&self) -> Result<(), InferenceError> {
        let bad = |m: &str| Err(InferenceError::InvalidParams(m.to_string()));
        if !(self.w_min > 0.0) {
            return bad("w_min must be positive");
        }
        if !(self.w_max >= self.w_min) {
            return bad("w_max must be at least w_min");
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) || !self.penalty.is_none_or(|p| p >= 0.0 && p.is_finite()) {
            return bad("step sizes must be finite and non-negative");
        }
        if let Some(w) = self.w_init {
            if !(self.w_min..=self.w_max).contains(&w) {
                return bad("w_init must lie within [w_min, w_max]");
            }
        }
        Ok(())
    }

    /// Moves `w` by `delta` and clamps it into bounds. Results within 1e-12 of
    /// a bound snap to the bound so that whole-step walks land on it exactly.
    fn step(&self, w: f64, delta: f64) -> f64 {
        let next = w + delta;
        if next >= self.w_max - 1e-12 {
            self.w_max
        } else if next <= self.w_min + 1e-12 {
            self.w_min
        } else {
            next
        }
    }
}

/// Per-rule confidence weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceState {
    pub weights: BTreeMap<String, f64>,
    pub params: LearningParams,
    pub history_len: u64,
}

impl ConfidenceState {
    pub fn new(params: LearningParams) -> Result<Self, InferenceError> {
        params.validate()?;
        Ok(ConfidenceState { weights: BTreeMap::new(), params, history_len: 0 })
    }

    /// Every HYPOTHESIS rule starts at `w_init`.
    pub fn seeded(rules: &RuleSet, params: LearningParams) -> Result<Self, InferenceError> {
        let mut state = ConfidenceState::new(params)?;
        if let Some(w) = params.w_init {
            for r in rules.by_stage(Stage::Hypothesis) {
                state.weights.insert(r.id.clone(), w);
            }
        }
        Ok(state)
    }

    /// Weights taken from the rules' CONFIDENCE values; used by non-learning
    /// forecasters.
    pub fn from_rule_confidences(rules: &RuleSet) -> Self {
        let weights = rules
            .rules()
            .iter()
            .filter_map(|r| match r.kind {
                RuleKind::Hypothesis { confidence, .. } => Some((r.id.clone(), confidence)),
                _ => None,
            })
            .collect();
        let params =
            LearningParams { eta: 0.0, penalty: Some(0.0), w_min: f64::MIN_POSITIVE, w_max: 1.0, w_init: None };
        ConfidenceState { weights, params, history_len: 0 }
    }

    pub fn weight(&self, rule_id: &str) -> Result<f64, InferenceError> {
        self.weights
            .get(rule_id)
            .copied()
            .or(self.params.w_init)
            .ok_or_else(|| InferenceError::MissingWeight(rule_id.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub rule_id: String,
    pub stage: Stage,
    pub hypothesis: Option<WeatherCategory>,
    pub outcome: Tri,
    pub fired: bool,
    pub contribution: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeverityLabel {
    Severe,
    NotSevere,
}

impl fmt::Display for SeverityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeverityLabel::Severe => "Severe",
            SeverityLabel::NotSevere => "NotSevere",
        })
    }
}

/// Record of one engine evaluation: one entry per rule evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
    pub result: Option<ProbTriple>,
    pub label: Option<SeverityLabel>,
}

impl Trace {
    pub fn empty() -> Self {
        Trace { entries: Vec::new(), result: None, label: None }
    }

    pub fn fired(&self) -> impl Iterator<Item = &TraceEntry> {
        self.entries.iter().filter(|e| e.fired)
    }
}

/// Scores each hypothesis by the summed weight of its fired rules and
/// normalizes. With no fired rule the prior is returned unchanged.
pub fn backward_chain(
    rules: &RuleSet,
    features: &FeatureMap,
    state: &ConfidenceState,
    prior: ProbTriple,
) -> Result<(ProbTriple, Trace), InferenceError> {
    let mut scores = [0.0f64; 3];
    let mut entries = Vec::with_capacity(rules.len());
    for rule in rules.rules() {
        let RuleKind::Hypothesis { category, .. } = rule.kind else {
            return Err(InferenceError::WrongStage {
                id: rule.id.clone(),
                found: rule.stage(),
                expected: "HYPOTHESIS rules".into(),
            });
        };
        let outcome = eval_predicate(&rule.when, features);
        let fired = outcome.is_true();
        let contribution = if fired { state.weight(&rule.id)? } else { 0.0 };
        scores[category.index()] += contribution;
        entries.push(TraceEntry {
            rule_id: rule.id.clone(),
            stage: Stage::Hypothesis,
            hypothesis: Some(category),
            outcome,
            fired,
            contribution,
        });
    }
    let triple = if scores.iter().all(|&s| s == 0.0) { prior } else { ProbTriple::from_scores(scores)? };
    Ok((triple, Trace { entries, result: Some(triple), label: None }))
}

/// Rewards fired rules whose hypothesis verified and penalizes the others.
/// Rules that did not fire keep their weight.
pub fn update_confidence(state: &ConfidenceState, trace: &Trace, observed: WeatherCategory) -> ConfidenceState {
    let mut next = state.clone();
    let p = state.params;
    for e in trace.fired() {
        let Some(hypothesis) = e.hypothesis else {
            continue;
        };
        let Ok(current) = state.weight(&e.rule_id) else {
            continue;
        };
        let delta = if hypothesis == observed { p.eta } else { -p.penalty.unwrap_or(p.eta) };
        next.weights.insert(e.rule_id.clone(), p.step(current, delta));
    }
    next.history_len += 1;
    next
}

/// Staged necessary / sufficient / modifier evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub necessary: Vec<Rule>,
    pub sufficient: Vec<Rule>,
    pub required_fraction: f64,
    pub modifiers: Vec<Rule>,
    pub base_triple_severe: ProbTriple,
    pub base_triple_nonsevere: ProbTriple,
}

impl PipelineSpec {
    pub fn default_severe() -> ProbTriple {
        ProbTriple::new(0.2, 0.3, 0.5).expect("valid")
    }

    pub fn default_nonsevere() -> ProbTriple {
        ProbTriple::new(0.85, 0.12, 0.03).expect("valid")
    }

    /// Splits a rule set by stage. HYPOTHESIS rules are rejected.
    pub fn from_rules(
        rules: &RuleSet,
        required_fraction: f64,
        base_triple_severe: ProbTriple,
        base_triple_nonsevere: ProbTriple,
    ) -> Result<Self, InferenceError> {
        if !(required_fraction > 0.0 && required_fraction <= 1.0) {
            return Err(InferenceError::InvalidFraction(required_fraction));
        }
        let mut spec = PipelineSpec {
            necessary: Vec::new(),
            sufficient: Vec::new(),
            required_fraction,
            modifiers: Vec::new(),
            base_triple_severe,
            base_triple_nonsevere,
        };
        for r in rules.rules() {
            match r.stage() {
                Stage::Necessary => spec.necessary.push(r.clone()),
                Stage::Sufficient => spec.sufficient.push(r.clone()),
                Stage::Modifier => spec.modifiers.push(r.clone()),
                Stage::Hypothesis => {
                    return Err(InferenceError::WrongStage {
                        id: r.id.clone(),
                        found: Stage::Hypothesis,
                        expected: "NECESSARY, SUFFICIENT or MODIFIER rules".into(),
                    })
                }
            }
        }
        Ok(spec)
    }
}

fn entry(rule: &Rule, outcome: Tri, contribution: f64) -> TraceEntry {
    TraceEntry {
        rule_id: rule.id.clone(),
        stage: rule.stage(),
        hypothesis: None,
        outcome,
        fired: outcome.is_true(),
        contribution,
    }
}

/// Runs the staged pipeline. `Unknown` predicates never satisfy a stage.
///
/// Modifier factors are multiplied per category in ascending order of value,
/// so the result is bit-identical for any ordering of the modifier list.
pub fn staged_pipeline(
    spec: &PipelineSpec,
    features: &FeatureMap,
) -> Result<(ProbTriple, SeverityLabel, Trace), InferenceError> {
    let mut entries = Vec::new();
    let finish = |entries: Vec<TraceEntry>, triple: ProbTriple, label: SeverityLabel| {
        Ok((triple, label, Trace { entries, result: Some(triple), label: Some(label) }))
    };

    let mut blocked = false;
    for rule in &spec.necessary {
        let outcome = eval_predicate(&rule.when, features);
        blocked |= !outcome.is_true();
        entries.push(entry(rule, outcome, 0.0));
    }
    if blocked {
        return finish(entries, spec.base_triple_nonsevere, SeverityLabel::NotSevere);
    }

    let mut met = 0usize;
    for rule in &spec.sufficient {
        let outcome = eval_predicate(&rule.when, features);
        if outcome.is_true() {
            met += 1;
        }
        entries.push(entry(rule, outcome, if outcome.is_true() { 1.0 } else { 0.0 }));
    }
    // an empty sufficient stage is vacuously satisfied
    let fraction = if spec.sufficient.is_empty() { 1.0 } else { met as f64 / spec.sufficient.len() as f64 };
    if fraction < spec.required_fraction {
        return finish(entries, spec.base_triple_nonsevere, SeverityLabel::NotSevere);
    }

    let mut factors: [Vec<f64>; 3] = Default::default();
    for rule in &spec.modifiers {
        let outcome = eval_predicate(&rule.when, features);
        let mut product = 1.0;
        if let (true, RuleKind::Modifier { scale }) = (outcome.is_true(), &rule.kind) {
            for (cat, f) in scale {
                factors[cat.index()].push(*f);
                product *= f;
            }
        }
        entries.push(entry(rule, outcome, if outcome.is_true() { product } else { 0.0 }));
    }
    let base = spec.base_triple_severe.as_array();
    let mut scaled = [0.0; 3];
    for c in 0..3 {
        factors[c].sort_by(f64::total_cmp);
        scaled[c] = factors[c].iter().fold(base[c], |acc, f| acc * f);
    }
    let triple = ProbTriple::from_scores(scaled)?;
    finish(entries, triple, SeverityLabel::Severe)
}

/// Human-readable account of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub lines: Vec<String>,
    /// Summed fired weight per hypothesis; empty for traces without hypotheses.
    pub histogram: Vec<(WeatherCategory, f64)>,
    /// NECESSARY rules that were not satisfied.
    pub blocking: Vec<String>,
}

impl fmt::Display for Explanation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }
}

pub fn explain(trace: &Trace) -> Explanation {
    if trace.entries.is_empty() {
        return Explanation { lines: Vec::new(), histogram: Vec::new(), blocking: Vec::new() };
    }
    let mut lines = Vec::new();
    let mut by_stage: BTreeMap<Stage, Vec<&TraceEntry>> = BTreeMap::new();
    for e in &trace.entries {
        by_stage.entry(e.stage).or_default().push(e);
    }
    for (stage, entries) in &by_stage {
        lines.push(format!("{stage}:"));
        for e in entries {
            let mut line = format!("  [{}] {}", if e.fired { "fired" } else { "  -  " }, e.rule_id);
            if let Some(h) = e.hypothesis {
                let _ = write!(line, " -> category {h}");
            }
            match e.outcome {
                Tri::Unknown => line.push_str(" (unknown: missing input)"),
                _ if e.fired && e.contribution != 0.0 => {
                    let _ = write!(line, " weight {:.4}", e.contribution);
                }
                _ => {}
            }
            lines.push(line);
        }
    }
    let blocking: Vec<String> =
        trace.entries.iter().filter(|e| e.stage == Stage::Necessary && !e.fired).map(|e| e.rule_id.clone()).collect();
    if !blocking.is_empty() {
        lines.push(format!("blocked by necessary condition(s): {}", blocking.join(", ")));
    }
    let mut histogram = Vec::new();
    if trace.entries.iter().any(|e| e.hypothesis.is_some()) {
        lines.push("hypothesis histogram:".into());
        for cat in WeatherCategory::ALL {
            let total: f64 = trace.fired().filter(|e| e.hypothesis == Some(cat)).map(|e| e.contribution).sum();
            lines.push(format!(
                "  {cat} {total:>8.4} {}",
                "#".repeat((total * 20.0).round().clamp(0.0, 200.0) as usize)
            ));
            histogram.push((cat, total));
        }
    }
    if let Some(label) = trace.label {
        lines.push(format!("label: {label}"));
    }
    if let Some(t) = trace.result {
        lines.push(format!("result: {t}"));
    }
    Explanation { lines, histogram, blocking }
}
