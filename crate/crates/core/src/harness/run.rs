use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use serde::Serialize;

use super::briefing::briefing;
use super::config::ExperimentConfig;
use super::divergence::{operator_divergence, write_divergence, DivergenceRow};
use super::forecasters::{build_forecaster, enrich_features, AnswerPrompt, DayContext, Detail, Forecaster};
use super::ingest::{ingest, load_history};
use super::state::{state_hash, write_snapshot, ExperimentState};
use super::{write_file, HarnessError};
use crate::classify::{write_observations, ObservationTable};
use crate::domain::{AnswerSet, FeatureRegistry, ForecastSet, ProbTriple, Scenario, WeatherCategory, Zone};
use crate::scoring::{
    climatology_triples, reliability_table, scoreboard, write_forecasts, write_reliability, ScoringError, SkillReport,
};

/// A forecast that could not be produced, or another non-fatal problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub date: Option<NaiveDate>,
    pub forecaster: String,
    pub operator: String,
    pub zone: Option<Zone>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecasterDay {
    pub set: ForecastSet,
    pub details: BTreeMap<Zone, Detail>,
    pub hash_before: String,
}

/// Everything one operator's run of one day produced.
#[derive(Debug, Clone, PartialEq)]
pub struct DayRecord {
    pub date: NaiveDate,
    pub operator: String,
    pub forecasters: BTreeMap<String, ForecasterDay>,
    pub diagnostics: Vec<Diagnostic>,
}

impl DayRecord {
    /// Non-empty forecast sets in the given forecaster order.
    pub fn sets_in<'a>(&'a self, order: &'a [Box<dyn Forecaster>]) -> impl Iterator<Item = &'a ForecastSet> + 'a {
        order.iter().filter_map(|f| self.forecasters.get(f.id()).map(|d| &d.set)).filter(|s| !s.entries.is_empty())
    }
}

/// Runs every forecaster over its coverage from the same snapshot. Failures
/// become diagnostics; they never stop other forecasters or zones.
pub fn run_day(
    scenario: &Scenario,
    operator: &str,
    forecasters: &[Box<dyn Forecaster>],
    state: &ExperimentState,
    climatology: &BTreeMap<Zone, ProbTriple>,
    prompt: Option<AnswerPrompt<'_>>,
) -> DayRecord {
    let empty = AnswerSet::new();
    let answers = scenario.answers.get(operator).unwrap_or(&empty);
    let features = enrich_features(scenario, answers);
    let ctx = DayContext { scenario, operator, answers, features: &features, climatology, prompt };
    let mut record = DayRecord {
        date: scenario.date,
        operator: operator.to_string(),
        forecasters: BTreeMap::new(),
        diagnostics: Vec::new(),
    };
    for f in forecasters {
        let own = state.states.get(f.id()).cloned().unwrap_or_else(|| f.initial_state());
        let started = Instant::now();
        let mut entries = BTreeMap::new();
        let mut details = BTreeMap::new();
        let mut questions = 0;
        for &zone in &f.coverage().zones {
            match f.forecast_zone(&ctx, zone, &own) {
                Ok(zf) => {
                    entries.insert(zone, zf.triple);
                    details.insert(zone, zf.detail);
                    questions += zf.questions_asked;
                }
                Err(e) => record.diagnostics.push(Diagnostic {
                    date: Some(scenario.date),
                    forecaster: f.id().to_string(),
                    operator: operator.to_string(),
                    zone: Some(zone),
                    message: e.to_string(),
                }),
            }
        }
        let runtime_ms = started.elapsed().as_secs_f64() * 1e3;
        let set = ForecastSet {
            forecaster_id: f.id().to_string(),
            date: scenario.date,
            entries,
            runtime_ms,
            questions_asked: questions,
            operator_id: operator.to_string(),
        };
        record.forecasters.insert(f.id().to_string(), ForecasterDay { set, details, hash_before: state_hash(&own) });
    }
    record
}

/// Applies one day's verification to every learning forecaster.
pub fn feedback_day(
    date: NaiveDate,
    observed: &BTreeMap<Zone, WeatherCategory>,
    forecasters: &[Box<dyn Forecaster>],
    state: &ExperimentState,
    record: Option<&DayRecord>,
) -> Result<ExperimentState, HarnessError> {
    if let Some(last) = state.last_feedback {
        if date <= last {
            return Err(HarnessError::FeedbackAlreadyApplied { date, last });
        }
    }
    let mut next = state.clone();
    for f in forecasters {
        let own = state.states.get(f.id()).cloned().unwrap_or_else(|| f.initial_state());
        let updated = if f.learning() {
            let day = record
                .filter(|r| r.date == date)
                .and_then(|r| r.forecasters.get(f.id()))
                .ok_or_else(|| HarnessError::MissingTrace { forecaster: f.id().to_string(), date })?;
            f.feedback(&own, &day.details, observed, date)
                .map_err(|e| HarnessError::Feedback { forecaster: f.id().to_string(), message: e.to_string() })?
        } else {
            own
        };
        next.states.insert(f.id().to_string(), updated);
    }
    next.last_feedback = Some(date);
    Ok(next)
}

#[derive(Default)]
pub struct RunOptions<'a> {
    pub prompt: Option<AnswerPrompt<'a>>,
    /// Continue from a restored state; days up to its last verified date are skipped.
    pub resume: Option<ExperimentState>,
    /// Also run non-primary operators (in addition to the config flag).
    pub all_operators: bool,
    /// Stop after producing this day's forecasts, before its feedback.
    pub until: Option<NaiveDate>,
    /// Write artifacts to the configured output directory.
    pub write: bool,
}

#[derive(Debug)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub days: usize,
    /// Primary-operator forecasts in day, then config order.
    pub forecasts: Vec<ForecastSet>,
    /// Every operator's forecasts, when more than the primary ran.
    pub operator_forecasts: Vec<ForecastSet>,
    pub records: Vec<DayRecord>,
    pub diagnostics: Vec<Diagnostic>,
    pub skill: SkillReport,
    pub divergence: Option<Vec<DivergenceRow>>,
    pub climatology: BTreeMap<Zone, ProbTriple>,
    pub observations: ObservationTable,
    pub final_state: ExperimentState,
}

#[derive(Serialize)]
struct LedgerRow<'a> {
    date: NaiveDate,
    forecaster: &'a str,
    operator: &'a str,
    zones: String,
    questions_asked: u32,
    state_before: &'a str,
    state_after: &'a str,
}

#[derive(Serialize)]
struct TimingRow<'a> {
    date: NaiveDate,
    forecaster: &'a str,
    operator: &'a str,
    runtime_ms: f64,
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>, header: &[&str]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}

/// Full loop: ingest, then for each day forecast, verify and learn; finally
/// score. Artifacts are written when `opts.write` is set; on a mid-run error
/// the outputs gathered so far are still written before the error returns.
pub fn run_experiment(cfg: &ExperimentConfig, opts: RunOptions<'_>) -> Result<RunSummary, HarnessError> {
    let registry = FeatureRegistry::builtin();
    let forecasters =
        cfg.forecasters.iter().map(|r| build_forecaster(cfg, r, &registry)).collect::<Result<Vec<_>, _>>()?;
    let data = ingest(&cfg.resolve(&cfg.scenarios), &cfg.resolve(&cfg.observations), cfg.valid_window)?;
    let mut diagnostics = Vec::new();
    let climatology = match &cfg.climatology_history {
        Some(p) => climatology_triples(&load_history(&cfg.resolve(p))?)?,
        None => {
            diagnostics.push(Diagnostic {
                date: None,
                forecaster: String::new(),
                operator: String::new(),
                zone: None,
                message: "no climatology_history configured; reference climatology is in-sample".into(),
            });
            let pairs: Vec<_> = data.observations.iter().map(|((_, z), c)| (*z, *c)).collect();
            climatology_triples(&pairs)?
        }
    };
    let mut state = match opts.resume {
        Some(s) => s,
        None => ExperimentState {
            states: forecasters.iter().map(|f| (f.id().to_string(), f.initial_state())).collect(),
            last_feedback: None,
        },
    };
    let out = cfg.output_dir();
    let all_ops = cfg.all_operators || opts.all_operators;

    let mut records = Vec::new();
    let mut operator_forecasts = Vec::new();
    let mut ledger: Vec<(NaiveDate, String, String, String, u32, String, String)> = Vec::new();
    let mut timings: Vec<(NaiveDate, String, String, f64)> = Vec::new();
    let mut run_dates = Vec::new();
    let mut previous: Option<NaiveDate> = None;

    let mut step = || -> Result<(), HarnessError> {
        for scenario in &data.scenarios {
            if state.last_feedback.is_some_and(|d| scenario.date <= d) {
                continue;
            }
            let Some(primary) = scenario.primary_operator() else {
                continue;
            };
            let record = run_day(scenario, primary, &forecasters, &state, &climatology, opts.prompt);
            diagnostics.extend(record.diagnostics.iter().cloned());
            let mut day_sets: Vec<&DayRecord> = vec![&record];
            let others: Vec<DayRecord> = if all_ops {
                scenario
                    .operators()
                    .filter(|op| *op != primary)
                    .map(|op| run_day(scenario, op, &forecasters, &state, &climatology, opts.prompt))
                    .collect()
            } else {
                Vec::new()
            };
            day_sets.extend(others.iter());
            for r in &day_sets {
                for fs in r.sets_in(&forecasters) {
                    timings.push((fs.date, fs.forecaster_id.clone(), fs.operator_id.clone(), fs.runtime_ms));
                    if all_ops {
                        operator_forecasts.push(fs.clone());
                    }
                }
            }
            for r in &others {
                diagnostics.extend(r.diagnostics.iter().cloned());
            }
            run_dates.push(scenario.date);
            if opts.until == Some(scenario.date) {
                records.push(record);
                return Ok(());
            }
            let observed: BTreeMap<Zone, WeatherCategory> = Zone::ALL
                .iter()
                .filter_map(|z| data.observations.get(&(scenario.date, *z)).map(|c| (*z, *c)))
                .collect();
            state = feedback_day(scenario.date, &observed, &forecasters, &state, Some(&record))?;
            for f in &forecasters {
                let Some(day) = record.forecasters.get(f.id()) else {
                    continue;
                };
                let zones: Vec<&str> = day.set.entries.keys().map(|z| z.as_str()).collect();
                ledger.push((
                    scenario.date,
                    f.id().to_string(),
                    record.operator.clone(),
                    zones.join(" "),
                    day.set.questions_asked,
                    day.hash_before.clone(),
                    state_hash(&state.states[f.id()]),
                ));
            }
            if opts.write {
                write_snapshot(&out.join("snapshots").join(format!("state_{}.json", scenario.date)), &state)?;
                let prev_obs: Option<BTreeMap<Zone, WeatherCategory>> = previous.map(|p| {
                    Zone::ALL.iter().filter_map(|z| data.observations.get(&(p, *z)).map(|c| (*z, *c))).collect()
                });
                let sets: Vec<&ForecastSet> = record.sets_in(&forecasters).collect();
                let text = briefing(
                    scenario.date,
                    &record.operator,
                    &sets,
                    &record.diagnostics,
                    previous.zip(prev_obs.as_ref()),
                );
                write_file(&out.join("briefings").join(format!("{}.txt", scenario.date)), text.as_bytes())?;
            }
            previous = Some(scenario.date);
            records.push(record);
        }
        Ok(())
    };
    let outcome = step();

    let forecasts: Vec<ForecastSet> = records.iter().flat_map(|r| r.sets_in(&forecasters).cloned()).collect();
    let observations: ObservationTable =
        data.observations.iter().filter(|((d, _), _)| run_dates.contains(d)).map(|(k, v)| (*k, *v)).collect();
    let mut skill = SkillReport::default();
    for f in &forecasters {
        let own: Vec<ForecastSet> = forecasts.iter().filter(|fs| fs.forecaster_id == f.id()).cloned().collect();
        if own.is_empty() {
            continue;
        }
        match scoreboard(&own, &observations, &climatology, &cfg.scoring) {
            Ok(rep) => skill.rows.extend(rep.rows),
            Err(e @ (ScoringError::NoOverlap(_) | ScoringError::MissingReference(_))) => diagnostics.push(Diagnostic {
                date: None,
                forecaster: f.id().to_string(),
                operator: String::new(),
                zone: None,
                message: format!("not scored: {e}"),
            }),
            Err(e) => return Err(e.into()),
        }
    }
    let divergence = if all_ops {
        match operator_divergence(&operator_forecasts) {
            Ok(rows) => Some(rows),
            Err(HarnessError::SingleOperator) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    let summary = RunSummary {
        output_dir: out,
        days: run_dates.len(),
        forecasts,
        operator_forecasts,
        records,
        diagnostics,
        skill,
        divergence,
        climatology,
        observations,
        final_state: state,
    };
    if opts.write {
        write_outputs(cfg, &summary, &ledger, &timings)?;
    }
    outcome.map(|_| summary)
}

type LedgerTuple = (NaiveDate, String, String, String, u32, String, String);

fn write_outputs(
    cfg: &ExperimentConfig,
    s: &RunSummary,
    ledger: &[LedgerTuple],
    timings: &[(NaiveDate, String, String, f64)],
) -> Result<(), HarnessError> {
    let out = &s.output_dir;
    let io = |p: &Path, e: std::io::Error| HarnessError::io(p, e);
    let mut buf = Vec::new();
    write_forecasts(&mut buf, &s.forecasts).map_err(|e| io(&out.join("forecasts.csv"), e))?;
    if s.forecasts.is_empty() {
        buf = b"date,forecaster,operator,zone,p0,p1,p2\n".to_vec();
    }
    write_file(&out.join("forecasts.csv"), &buf)?;

    if !s.operator_forecasts.is_empty() {
        let mut buf = Vec::new();
        write_forecasts(&mut buf, &s.operator_forecasts).map_err(|e| io(&out.join("operator_forecasts.csv"), e))?;
        write_file(&out.join("operator_forecasts.csv"), &buf)?;
    }
    if let Some(rows) = &s.divergence {
        let mut buf = Vec::new();
        write_divergence(&mut buf, rows).map_err(|e| io(&out.join("divergence.csv"), e))?;
        write_file(&out.join("divergence.csv"), &buf)?;
    }

    let diag = csv_bytes(
        s.diagnostics.iter().map(|d| {
            (
                d.date.map(|x| x.to_string()).unwrap_or_default(),
                &d.forecaster,
                &d.operator,
                d.zone.map(|z| z.to_string()).unwrap_or_default(),
                &d.message,
            )
        }),
        &["date", "forecaster", "operator", "zone", "message"],
    );
    write_file(&out.join("diagnostics.csv"), &diag)?;

    let ledger_rows = ledger.iter().map(|(date, f, op, zones, q, before, after)| LedgerRow {
        date: *date,
        forecaster: f,
        operator: op,
        zones: zones.clone(),
        questions_asked: *q,
        state_before: before,
        state_after: after,
    });
    let header = ["date", "forecaster", "operator", "zones", "questions_asked", "state_before", "state_after"];
    write_file(&out.join("ledger.csv"), &csv_bytes(ledger_rows, &header))?;

    let timing_rows =
        timings.iter().map(|(date, f, op, ms)| TimingRow { date: *date, forecaster: f, operator: op, runtime_ms: *ms });
    write_file(&out.join("timings.csv"), &csv_bytes(timing_rows, &["date", "forecaster", "operator", "runtime_ms"]))?;

    let mut buf = Vec::new();
    write_observations(&mut buf, &s.observations)?;
    write_file(&out.join("observations.csv"), &buf)?;

    let clim = s.climatology.iter().map(|(z, t)| (z.to_string(), t.p0(), t.p1(), t.p2()));
    write_file(&out.join("climatology.csv"), &csv_bytes(clim, &["zone", "p0", "p1", "p2"]))?;

    let mut buf = Vec::new();
    s.skill.write_csv(&mut buf).map_err(|e| io(&out.join("skill.csv"), e))?;
    write_file(&out.join("skill.csv"), &buf)?;
    write_file(&out.join("skill.txt"), s.skill.to_text().as_bytes())?;

    for row in &s.skill.rows {
        let series: Vec<(f64, bool)> = s
            .forecasts
            .iter()
            .filter(|fs| fs.forecaster_id == row.forecaster)
            .filter_map(|fs| {
                let t = fs.entries.get(&row.zone)?;
                let o = s.observations.get(&(fs.date, row.zone))?;
                Some((t.event_probability(), o.is_event()))
            })
            .collect();
        let table = reliability_table(&series, cfg.reliability_bins)?;
        let path = out.join("reliability").join(format!("{}_{}.csv", row.forecaster, row.zone));
        let mut buf = Vec::new();
        write_reliability(&mut buf, &table).map_err(|e| io(&path, e))?;
        write_file(&path, &buf)?;
    }
    Ok(())
}
