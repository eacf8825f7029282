use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{
    load_json, AnalogConfig, ExperimentConfig, ForecasterKind, InductionConfig, ParcelConfig, Registration,
    RuleBackwardConfig, StagedConfig,
};
use super::{read_file, HarnessError};
use crate::analog::{absorb_verification, fit_discriminant, predict, AnalogError, AnalogLibrary, Ridge};
use crate::domain::{
    default_coverage, Answer, AnswerSet, CoverageSpec, DomainError, FeatureMap, FeatureRegistry, ProbTriple, Scenario,
    WeatherCategory, Zone,
};
use crate::induct::{interview, ExampleSet, InductError, Module, ModuleHierarchy, OracleAnswer, TrailStep, Value};
use crate::inference::{
    backward_chain, explain, staged_pipeline, update_confidence, ConfidenceState, InferenceError, PipelineSpec,
    SeverityLabel, Trace,
};
use crate::linear::{
    apply_inhibitions, calibrated_forecast, linear_score, upslope_indicator, LinearError, LinearModelSpec,
};
use crate::parcel::{
    mix_boundary_layer, sounding_indices, ConvectiveIndices, MixingSpec, ParcelError, DEFAULT_DRAG_K, DEFAULT_DZ,
};
use crate::ruledsl::{parse_rules, RuleSet};

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error(transparent)]
    Linear(#[from] LinearError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Analog(#[from] AnalogError),
    #[error(transparent)]
    Induct(#[from] InductError),
    #[error(transparent)]
    Parcel(#[from] ParcelError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("missing feature `{0}`")]
    MissingFeature(String),
    #[error("no climatology for zone {0}")]
    MissingClimatology(Zone),
    #[error("no probability triple configured for label `{0}`")]
    UnmappedLabel(String),
    #[error("state does not belong to this forecaster")]
    WrongState,
}

/// Everything a forecaster carries from one day to the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForecasterState {
    Stateless,
    Confidence(ConfidenceState),
    Analog(AnalogLibrary),
}

/// Per-zone by-products used for feedback and explanations.
#[derive(Debug, Clone, PartialEq)]
pub enum Detail {
    Climatology,
    Linear { score: f64, inhibited: f64 },
    Rules(Trace),
    Pipeline { label: SeverityLabel, trace: Trace },
    Analog { features: Vec<f64>, posterior: ProbTriple },
    Interview { label: String, trail: Vec<TrailStep> },
    Parcel { surface_t: f64, surface_td: f64, indices: ConvectiveIndices, trace: Trace },
}

impl Detail {
    pub fn explain(&self) -> String {
        let mut out = String::new();
        match self {
            Detail::Climatology => out.push_str("climatological base rates\n"),
            Detail::Linear { score, inhibited } => {
                let _ = writeln!(out, "linear score {score:.4}");
                if inhibited != score {
                    let _ = writeln!(out, "after inhibitions {inhibited:.4}");
                }
            }
            Detail::Rules(trace) => out.push_str(&explain(trace).to_string()),
            Detail::Pipeline { label, trace } => {
                let _ = writeln!(out, "label {label}");
                out.push_str(&explain(trace).to_string());
            }
            Detail::Analog { features, posterior } => {
                let _ = writeln!(out, "features {features:?}");
                let _ = writeln!(out, "discriminant posterior {posterior}");
            }
            Detail::Interview { label, trail } => {
                for step in trail {
                    let _ = match step {
                        TrailStep::Asked { question, answer } => {
                            writeln!(out, "asked {question}: {answer}")
                        }
                        TrailStep::Entered { module } => writeln!(out, "module {module}"),
                        TrailStep::ShortCircuit { module, attribute, class } => {
                            writeln!(out, "module {module} stopped on {attribute}: {class}")
                        }
                        TrailStep::Concluded { module, class } => {
                            writeln!(out, "module {module} -> {class}")
                        }
                    };
                }
                let _ = writeln!(out, "label {label}");
            }
            Detail::Parcel { surface_t, surface_td, indices, trace } => {
                let _ = writeln!(out, "mixed surface parcel {surface_t:.1} / {surface_td:.1} C");
                for (k, v) in indices.to_features() {
                    let _ = writeln!(out, "  {k} = {v:.3}");
                }
                out.push_str(&explain(trace).to_string());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneForecast {
    pub triple: ProbTriple,
    pub questions_asked: u32,
    pub detail: Detail,
}

/// Fallback source for interview answers missing from the scenario.
pub type AnswerPrompt<'a> = &'a dyn Fn(&str) -> Option<Answer>;

/// The input snapshot every forecaster sees for one day and operator.
pub struct DayContext<'a> {
    pub scenario: &'a Scenario,
    pub operator: &'a str,
    pub answers: &'a AnswerSet,
    /// Scenario features plus sounding indices and numeric answers.
    pub features: &'a BTreeMap<Zone, FeatureMap>,
    pub climatology: &'a BTreeMap<Zone, ProbTriple>,
    pub prompt: Option<AnswerPrompt<'a>>,
}

impl DayContext<'_> {
    fn zone_features(&self, zone: Zone) -> Result<&FeatureMap, ForecastError> {
        self.features.get(&zone).ok_or_else(|| ForecastError::MissingFeature(format!("(zone {zone} has no features)")))
    }

    fn climatology(&self, zone: Zone) -> Result<ProbTriple, ForecastError> {
        self.climatology.get(&zone).copied().ok_or(ForecastError::MissingClimatology(zone))
    }

    fn answer(&self, question: &str) -> Option<Answer> {
        self.answers.get(question).cloned().or_else(|| self.prompt.and_then(|p| p(question)))
    }
}

/// Adds derived inputs to each zone's features without overwriting any
/// value the scenario supplies: the upslope indicator, sounding indices for
/// the zone's surface parcel, and the operator's numeric answers.
pub fn enrich_features(scenario: &Scenario, answers: &AnswerSet) -> BTreeMap<Zone, FeatureMap> {
    let mut out = BTreeMap::new();
    for zone in Zone::ALL {
        let mut fm = scenario.features.get(&zone).cloned().unwrap_or_default();
        if let Some(&dir) = fm.get("wind_dir") {
            fm.entry("upslope".into()).or_insert(upslope_indicator(dir));
        }
        if let (Some(&t), Some(&td)) = (fm.get("surface_temp"), fm.get("dewpoint")) {
            if let Ok(idx) = sounding_indices(&scenario.sounding, t, td, DEFAULT_DRAG_K, DEFAULT_DZ) {
                for (k, v) in idx.to_features() {
                    fm.entry(k).or_insert(v);
                }
            }
        }
        for (q, a) in answers {
            if let Some(x) = a.as_number() {
                fm.entry(q.clone()).or_insert(x);
            }
        }
        if !fm.is_empty() {
            out.insert(zone, fm);
        }
    }
    out
}

pub trait Forecaster: Send + Sync {
    fn id(&self) -> &str;
    fn coverage(&self) -> &CoverageSpec;
    fn learning(&self) -> bool {
        false
    }
    fn initial_state(&self) -> ForecasterState {
        ForecasterState::Stateless
    }
    fn forecast_zone(
        &self,
        ctx: &DayContext<'_>,
        zone: Zone,
        state: &ForecasterState,
    ) -> Result<ZoneForecast, ForecastError>;
    /// Applies one day's verification. Only called for learning forecasters.
    fn feedback(
        &self,
        state: &ForecasterState,
        _details: &BTreeMap<Zone, Detail>,
        _observed: &BTreeMap<Zone, WeatherCategory>,
        _date: NaiveDate,
    ) -> Result<ForecasterState, ForecastError> {
        Ok(state.clone())
    }
}

struct Climatology {
    coverage: CoverageSpec,
}

impl Forecaster for Climatology {
    fn id(&self) -> &str {
        &self.coverage.forecaster_id
    }
    fn coverage(&self) -> &CoverageSpec {
        &self.coverage
    }
    fn forecast_zone(
        &self,
        ctx: &DayContext<'_>,
        zone: Zone,
        _: &ForecasterState,
    ) -> Result<ZoneForecast, ForecastError> {
        Ok(ZoneForecast { triple: ctx.climatology(zone)?, questions_asked: 0, detail: Detail::Climatology })
    }
}

struct Linear {
    coverage: CoverageSpec,
    spec: LinearModelSpec,
}

impl Forecaster for Linear {
    fn id(&self) -> &str {
        &self.coverage.forecaster_id
    }
    fn coverage(&self) -> &CoverageSpec {
        &self.coverage
    }
    fn forecast_zone(
        &self,
        ctx: &DayContext<'_>,
        zone: Zone,
        _: &ForecasterState,
    ) -> Result<ZoneForecast, ForecastError> {
        let f = ctx.zone_features(zone)?;
        let score = linear_score(&self.spec, f)?;
        let inhibited = apply_inhibitions(&self.spec, f, score);
        let triple = calibrated_forecast(&self.spec, f)?;
        Ok(ZoneForecast { triple, questions_asked: 0, detail: Detail::Linear { score, inhibited } })
    }
}

struct RuleBackward {
    coverage: CoverageSpec,
    rules: RuleSet,
    initial: ConfidenceState,
    learning: bool,
}

impl Forecaster for RuleBackward {
    fn id(&self) -> &str {
        &self.coverage.forecaster_id
    }
    fn coverage(&self) -> &CoverageSpec {
        &self.coverage
    }
    fn learning(&self) -> bool {
        self.learning
    }
    fn initial_state(&self) -> ForecasterState {
        ForecasterState::Confidence(self.initial.clone())
    }
    fn forecast_zone(
        &self,
        ctx: &DayContext<'_>,
        zone: Zone,
        state: &ForecasterState,
    ) -> Result<ZoneForecast, ForecastError> {
        let ForecasterState::Confidence(conf) = state else {
            return Err(ForecastError::WrongState);
        };
        let (triple, trace) = backward_chain(&self.rules, ctx.zone_features(zone)?, conf, ctx.climatology(zone)?)?;
        Ok(ZoneForecast { triple, questions_asked: 0, detail: Detail::Rules(trace) })
    }
    fn feedback(
        &self,
        state: &ForecasterState,
        details: &BTreeMap<Zone, Detail>,
        observed: &BTreeMap<Zone, WeatherCategory>,
        _date: NaiveDate,
    ) -> Result<ForecasterState, ForecastError> {
        let ForecasterState::Confidence(conf) = state else {
            return Err(ForecastError::WrongState);
        };
        let mut conf = conf.clone();
        for (zone, detail) in details {
            if let (Detail::Rules(trace), Some(&obs)) = (detail, observed.get(zone)) {
                conf = update_confidence(&conf, trace, obs);
            }
        }
        Ok(ForecasterState::Confidence(conf))
    }
}

struct Staged {
    coverage: CoverageSpec,
    spec: PipelineSpec,
}

impl Forecaster for Staged {
    fn id(&self) -> &str {
        &self.coverage.forecaster_id
    }
    fn coverage(&self) -> &CoverageSpec {
        &self.coverage
    }
    fn forecast_zone(
        &self,
        ctx: &DayContext<'_>,
        zone: Zone,
        _: &ForecasterState,
    ) -> Result<ZoneForecast, ForecastError> {
        let (triple, label, trace) = staged_pipeline(&self.spec, ctx.zone_features(zone)?)?;
        Ok(ZoneForecast { triple, questions_asked: 0, detail: Detail::Pipeline { label, trace } })
    }
}

struct Analog {
    coverage: CoverageSpec,
    features: Vec<String>,
    library: AnalogLibrary,
    ridge: Ridge,
    model_weight: f64,
}

impl Forecaster for Analog {
    fn id(&self) -> &str {
        &self.coverage.forecaster_id
    }
    fn coverage(&self) -> &CoverageSpec {
        &self.coverage
    }
    fn learning(&self) -> bool {
        !self.library.frozen
    }
    fn initial_state(&self) -> ForecasterState {
        ForecasterState::Analog(self.library.clone())
    }
    fn forecast_zone(
        &self,
        ctx: &DayContext<'_>,
        zone: Zone,
        state: &ForecasterState,
    ) -> Result<ZoneForecast, ForecastError> {
        let ForecasterState::Analog(lib) = state else {
            return Err(ForecastError::WrongState);
        };
        let fm = ctx.zone_features(zone)?;
        let x = self
            .features
            .iter()
            .map(|n| fm.get(n).copied().ok_or_else(|| ForecastError::MissingFeature(n.clone())))
            .collect::<Result<Vec<f64>, _>>()?;
        let model = fit_discriminant(lib, self.ridge)?;
        let posterior = predict(&model, &x)?;
        let triple = posterior.blend(&ctx.climatology(zone)?, self.model_weight)?;
        Ok(ZoneForecast { triple, questions_asked: 0, detail: Detail::Analog { features: x, posterior } })
    }
    fn feedback(
        &self,
        state: &ForecasterState,
        details: &BTreeMap<Zone, Detail>,
        observed: &BTreeMap<Zone, WeatherCategory>,
        date: NaiveDate,
    ) -> Result<ForecasterState, ForecastError> {
        let ForecasterState::Analog(lib) = state else {
            return Err(ForecastError::WrongState);
        };
        let mut lib = lib.clone();
        for (zone, detail) in details {
            if let (Detail::Analog { features, .. }, Some(&obs)) = (detail, observed.get(zone)) {
                lib = absorb_verification(&lib, features, obs, date)?;
            }
        }
        Ok(ForecasterState::Analog(lib))
    }
}

struct Induction {
    coverage: CoverageSpec,
    hierarchy: ModuleHierarchy,
    labels: BTreeMap<String, ProbTriple>,
}

fn answer_value(a: Answer) -> Value {
    match a {
        Answer::Numeric(x) => Value::Num(x),
        Answer::Categorical(s) => Value::Cat(s),
    }
}

impl Forecaster for Induction {
    fn id(&self) -> &str {
        &self.coverage.forecaster_id
    }
    fn coverage(&self) -> &CoverageSpec {
        &self.coverage
    }
    fn forecast_zone(
        &self,
        ctx: &DayContext<'_>,
        _zone: Zone,
        _: &ForecasterState,
    ) -> Result<ZoneForecast, ForecastError> {
        let out = interview(&self.hierarchy, |q| match ctx.answer(q) {
            Some(a) => OracleAnswer::Answer(answer_value(a)),
            None => OracleAnswer::Unavailable,
        })?;
        let triple = *self.labels.get(&out.label).ok_or_else(|| ForecastError::UnmappedLabel(out.label.clone()))?;
        Ok(ZoneForecast {
            triple,
            questions_asked: out.questions_asked,
            detail: Detail::Interview { label: out.label, trail: out.trail },
        })
    }
}

struct Parcel {
    coverage: CoverageSpec,
    rules: RuleSet,
    weights: ConfidenceState,
    config: ParcelConfig,
    mixing: MixingSpec,
}

impl Forecaster for Parcel {
    fn id(&self) -> &str {
        &self.coverage.forecaster_id
    }
    fn coverage(&self) -> &CoverageSpec {
        &self.coverage
    }
    fn forecast_zone(
        &self,
        ctx: &DayContext<'_>,
        zone: Zone,
        _: &ForecasterState,
    ) -> Result<ZoneForecast, ForecastError> {
        let fm = ctx.zone_features(zone)?;
        let get = |n: &str| fm.get(n).copied().ok_or_else(|| ForecastError::MissingFeature(n.to_string()));
        let (t0, td0) = (get("surface_temp")?, get("dewpoint")?);
        let mut spec = self.mixing;
        spec.target_t = t0 + self.config.mixing.warming_c;
        spec.target_td = td0 + self.config.mixing.moistening_c;
        // operator override of the mixed surface values
        if let Some(t) = ctx.answer("mixed_temp").and_then(|a| a.as_number()) {
            spec.target_t = t;
        }
        if let Some(td) = ctx.answer("mixed_dewpoint").and_then(|a| a.as_number()) {
            spec.target_td = td;
        }
        let (t, td) = mix_boundary_layer(t0, td0, &spec, self.config.mixing.at);
        let td = td.min(t);
        let indices = sounding_indices(&ctx.scenario.sounding, t, td, self.config.drag_k, self.config.dz)?;
        let mut features = fm.clone();
        features.extend(indices.to_features());
        let (triple, trace) = backward_chain(&self.rules, &features, &self.weights, ctx.climatology(zone)?)?;
        Ok(ZoneForecast {
            triple,
            questions_asked: 0,
            detail: Detail::Parcel { surface_t: t, surface_td: td, indices, trace },
        })
    }
}

fn load_rules(path: &Path, registry: &FeatureRegistry) -> Result<RuleSet, HarnessError> {
    let text = read_file(path)?;
    parse_rules(&text, Some(registry)).map_err(|e| {
        let (line, _) = e.position();
        HarnessError::Parse { file: path.display().to_string(), line, message: e.to_string() }
    })
}

fn config_err(id: &str, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(format!("forecaster `{id}`: {e}"))
}

/// Instantiates a registered forecaster, loading and validating its files.
pub fn build_forecaster(
    cfg: &ExperimentConfig,
    reg: &Registration,
    registry: &FeatureRegistry,
) -> Result<Box<dyn Forecaster>, HarnessError> {
    let coverage = match &reg.coverage {
        Some(zones) => CoverageSpec::new(reg.id.clone(), zones.iter().copied()),
        None => default_coverage(&reg.id),
    }
    .map_err(|e| config_err(&reg.id, e))?;
    let config_path = reg.config.as_ref().map(|p| cfg.resolve(p));
    let path = || config_path.clone().expect("validated: kind needs a config");
    let id = reg.id.as_str();
    Ok(match reg.kind {
        ForecasterKind::Climatology => Box::new(Climatology { coverage }),
        ForecasterKind::Linear => {
            let spec = LinearModelSpec::load(&path(), Some(registry)).map_err(|e| config_err(id, e))?;
            Box::new(Linear { coverage, spec })
        }
        ForecasterKind::RuleBackward => {
            let (c, dir): (RuleBackwardConfig, _) = load_json(&path())?;
            let rules = load_rules(&dir.join(&c.rules), registry)?;
            let initial = if reg.learning {
                ConfidenceState::seeded(&rules, c.learning).map_err(|e| config_err(id, e))?
            } else {
                ConfidenceState::from_rule_confidences(&rules)
            };
            Box::new(RuleBackward { coverage, rules, initial, learning: reg.learning })
        }
        ForecasterKind::StagedPipeline => {
            let (c, dir): (StagedConfig, _) = load_json(&path())?;
            let rules = load_rules(&dir.join(&c.rules), registry)?;
            let spec = PipelineSpec::from_rules(
                &rules,
                c.required_fraction,
                c.base_severe.unwrap_or_else(PipelineSpec::default_severe),
                c.base_nonsevere.unwrap_or_else(PipelineSpec::default_nonsevere),
            )
            .map_err(|e| config_err(id, e))?;
            Box::new(Staged { coverage, spec })
        }
        ForecasterKind::Analog => {
            let (c, dir): (AnalogConfig, _) = load_json(&path())?;
            let lib_path = dir.join(&c.library);
            let file = File::open(&lib_path).map_err(|e| HarnessError::io(&lib_path, e))?;
            let library = AnalogLibrary::read_csv(file, !reg.learning).map_err(|e| config_err(id, e))?;
            if library.feature_names != c.features {
                return Err(config_err(
                    id,
                    format!("library columns {:?} differ from features {:?}", library.feature_names, c.features),
                ));
            }
            if !(0.0..=1.0).contains(&c.model_weight) {
                return Err(config_err(id, "model_weight must lie in [0, 1]"));
            }
            fit_discriminant(&library, c.ridge).map_err(|e| config_err(id, e))?;
            Box::new(Analog { coverage, features: c.features, library, ridge: c.ridge, model_weight: c.model_weight })
        }
        ForecasterKind::Induction => {
            let (c, dir): (InductionConfig, _) = load_json(&path())?;
            let mut modules = Vec::new();
            for m in &c.modules {
                let p = dir.join(&m.examples);
                let file = File::open(&p).map_err(|e| HarnessError::io(&p, e))?;
                let examples = ExampleSet::from_csv(file, &m.class_column).map_err(|e| config_err(id, e))?;
                modules.push(Module {
                    name: m.name.clone(),
                    tree: crate::induct::induce_tree(&examples),
                    critical: m.critical.clone(),
                });
            }
            let hierarchy = ModuleHierarchy::new(modules, &c.root).map_err(|e| config_err(id, e))?;
            Box::new(Induction { coverage, hierarchy, labels: c.labels })
        }
        ForecasterKind::Parcel => {
            let (c, dir): (ParcelConfig, _) = load_json(&path())?;
            let rules = load_rules(&dir.join(&c.rules), registry)?;
            let mixing = MixingSpec::new(c.mixing.start, c.mixing.end, 0.0, 0.0).map_err(|e| config_err(id, e))?;
            if !(c.dz > 0.0) || !(c.drag_k >= 0.0) {
                return Err(config_err(id, "dz must be positive and drag_k non-negative"));
            }
            let weights = ConfidenceState::from_rule_confidences(&rules);
            Box::new(Parcel { coverage, rules, weights, config: c, mixing })
        }
    })
}
