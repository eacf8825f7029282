//! Brier-score verification against a climatological reference.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::ObservationTable;
use crate::domain::{DomainError, ForecastSet, ProbTriple, WeatherCategory, Zone};

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("no history for zone {0}")]
    EmptyHistory(Zone),
    #[error("empty series")]
    EmptySeries,
    #[error("reference Brier score is 0 but forecast Brier score is {0}")]
    ZeroReference(f64),
    #[error("forecaster `{0}` shares no cells with the observations")]
    NoOverlap(String),
    #[error("no climatological reference for zone {0}")]
    MissingReference(Zone),
    #[error("need at least 2 reliability bins, got {0}")]
    TooFewBins(usize),
    #[error("forecast file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Sum of values in ascending order, so the result does not depend on input order.
fn stable_sum(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.into_iter().sum()
}

/// Per-zone event base rate (fraction of days with category ≥ 1).
pub fn climatology_reference(history: &[(Zone, WeatherCategory)]) -> Result<BTreeMap<Zone, f64>, ScoringError> {
    Ok(climatology_triples(history)?.into_iter().map(|(z, t)| (z, t.event_probability())).collect())
}

/// Per-zone category frequencies.
pub fn climatology_triples(history: &[(Zone, WeatherCategory)]) -> Result<BTreeMap<Zone, ProbTriple>, ScoringError> {
    let mut counts: BTreeMap<Zone, [usize; 3]> = BTreeMap::new();
    for &(zone, cat) in history {
        counts.entry(zone).or_default()[cat.index()] += 1;
    }
    counts
        .into_iter()
        .map(|(zone, c)| {
            let n = (c[0] + c[1] + c[2]) as f64;
            let f = |k: usize| c[k] as f64 / n;
            Ok((zone, ProbTriple::new(f(0), f(1), f(2))?))
        })
        .collect()
}

/// Climatology for each zone in `zones`, failing if any zone lacks history.
pub fn climatology_for(
    history: &[(Zone, WeatherCategory)],
    zones: impl IntoIterator<Item = Zone>,
) -> Result<BTreeMap<Zone, ProbTriple>, ScoringError> {
    let all = climatology_triples(history)?;
    zones.into_iter().map(|z| all.get(&z).map(|t| (z, *t)).ok_or(ScoringError::EmptyHistory(z))).collect()
}

pub fn brier_binary(series: &[(f64, bool)]) -> Result<f64, ScoringError> {
    if series.is_empty() {
        return Err(ScoringError::EmptySeries);
    }
    let sq = series.iter().map(|&(p, o)| (p - if o { 1.0 } else { 0.0 }).powi(2)).collect();
    Ok(stable_sum(sq) / series.len() as f64)
}

pub fn brier_multi(series: &[(ProbTriple, WeatherCategory)]) -> Result<f64, ScoringError> {
    if series.is_empty() {
        return Err(ScoringError::EmptySeries);
    }
    let per_day = series
        .iter()
        .map(|(t, o)| {
            WeatherCategory::ALL.iter().map(|&c| (t.get(c) - if c == *o { 1.0 } else { 0.0 }).powi(2)).sum::<f64>()
        })
        .collect();
    Ok(stable_sum(per_day) / series.len() as f64)
}

/// Two-category Brier score with categories 1 and 2 merged.
pub fn brier_merged(series: &[(ProbTriple, WeatherCategory)]) -> Result<f64, ScoringError> {
    let binary: Vec<(f64, bool)> = series.iter().map(|(t, o)| (t.event_probability(), o.is_event())).collect();
    Ok(2.0 * brier_binary(&binary)?)
}

pub fn skill_score(bs: f64, bs_ref: f64) -> Result<f64, ScoringError> {
    if bs_ref == 0.0 {
        return if bs == 0.0 { Ok(0.0) } else { Err(ScoringError::ZeroReference(bs)) };
    }
    Ok(1.0 - bs / bs_ref)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub bin_center: f64,
    pub mean_forecast: f64,
    pub observed_frequency: f64,
    pub n: usize,
}

pub fn reliability_table(series: &[(f64, bool)], bins: usize) -> Result<Vec<ReliabilityRow>, ScoringError> {
    if bins < 2 {
        return Err(ScoringError::TooFewBins(bins));
    }
    let mut acc = vec![(Vec::new(), 0usize); bins];
    for &(p, o) in series {
        let b = ((p * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        acc[b].0.push(p);
        acc[b].1 += o as usize;
    }
    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(i, (ps, events))| {
            let n = ps.len();
            let (mean_forecast, observed_frequency) =
                if n == 0 { (0.0, 0.0) } else { (stable_sum(ps) / n as f64, events as f64 / n as f64) };
            ReliabilityRow { bin_center: (i as f64 + 0.5) / bins as f64, mean_forecast, observed_frequency, n }
        })
        .collect())
}

pub fn write_reliability<W: Write>(writer: W, rows: &[ReliabilityRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    #[default]
    Binary,
    Multi,
}

impl std::str::FromStr for ScoreMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "binary" => Ok(ScoreMode::Binary),
            "multi" => Ok(ScoreMode::Multi),
            other => Err(format!("unknown score mode `{other}` (binary|multi)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreOptions {
    pub mode: ScoreMode,
    pub merge_12: bool,
    pub exclude_zones: BTreeSet<Zone>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillRow {
    pub forecaster: String,
    pub zone: Zone,
    pub n: usize,
    pub brier: f64,
    pub reference_brier: f64,
    /// `None` when the reference is perfect and the forecaster is not.
    pub bss: Option<f64>,
    /// Fraction of the zone's observed days the forecaster covered.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SkillReport {
    pub rows: Vec<SkillRow>,
}

fn series_score(series: &[(ProbTriple, WeatherCategory)], opts: &ScoreOptions) -> Result<f64, ScoringError> {
    match (opts.mode, opts.merge_12) {
        (ScoreMode::Binary, _) => {
            let b: Vec<(f64, bool)> = series.iter().map(|(t, o)| (t.event_probability(), o.is_event())).collect();
            brier_binary(&b)
        }
        (ScoreMode::Multi, false) => brier_multi(series),
        (ScoreMode::Multi, true) => brier_merged(series),
    }
}

/// Scores every forecaster on each zone it forecast, using only cells that
/// also have an observation. Rows are ordered by forecaster id then zone.
pub fn scoreboard(
    forecasts: &[ForecastSet],
    observations: &ObservationTable,
    reference: &BTreeMap<Zone, ProbTriple>,
    opts: &ScoreOptions,
) -> Result<SkillReport, ScoringError> {
    let mut cells: BTreeMap<&str, BTreeMap<Zone, BTreeMap<NaiveDate, ProbTriple>>> = BTreeMap::new();
    for fs in forecasts {
        let per_zone = cells.entry(fs.forecaster_id.as_str()).or_default();
        for (&zone, &t) in &fs.entries {
            per_zone.entry(zone).or_default().insert(fs.date, t);
        }
    }
    let mut observed_days: BTreeMap<Zone, usize> = BTreeMap::new();
    for (_, zone) in observations.keys() {
        *observed_days.entry(*zone).or_default() += 1;
    }
    let mut rows = Vec::new();
    for (forecaster, per_zone) in cells {
        let mut any = false;
        for (zone, by_date) in per_zone {
            let series: Vec<(ProbTriple, WeatherCategory)> =
                by_date.iter().filter_map(|(d, t)| observations.get(&(*d, zone)).map(|o| (*t, *o))).collect();
            if series.is_empty() {
                continue;
            }
            any = true;
            if opts.exclude_zones.contains(&zone) {
                continue;
            }
            let clim = reference.get(&zone).ok_or(ScoringError::MissingReference(zone))?;
            let ref_series: Vec<(ProbTriple, WeatherCategory)> = series.iter().map(|(_, o)| (*clim, *o)).collect();
            let brier = series_score(&series, opts)?;
            let reference_brier = series_score(&ref_series, opts)?;
            rows.push(SkillRow {
                forecaster: forecaster.to_string(),
                zone,
                n: series.len(),
                brier,
                reference_brier,
                bss: skill_score(brier, reference_brier).ok(),
                coverage: series.len() as f64 / observed_days[&zone] as f64,
            });
        }
        if !any {
            return Err(ScoringError::NoOverlap(forecaster.to_string()));
        }
    }
    Ok(SkillReport { rows })
}

impl SkillReport {
    pub fn get(&self, forecaster: &str, zone: Zone) -> Option<&SkillRow> {
        self.rows.iter().find(|r| r.forecaster == forecaster && r.zone == zone)
    }

    pub fn for_forecaster<'a>(&'a self, forecaster: &'a str) -> impl Iterator<Item = &'a SkillRow> + 'a {
        self.rows.iter().filter(move |r| r.forecaster == forecaster)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["forecaster", "zone", "n", "brier", "reference_brier", "bss", "coverage"])?;
        for r in &self.rows {
            w.write_record([
                r.forecaster.clone(),
                r.zone.to_string(),
                r.n.to_string(),
                format!("{:.6}", r.brier),
                format!("{:.6}", r.reference_brier),
                r.bss.map(|b| format!("{b:.6}")).unwrap_or_default(),
                format!("{:.4}", r.coverage),
            ])?;
        }
        w.flush()
    }

    /// Aligned table with skill shown as percent better (+) or worse (-) than
    /// climatology.
    pub fn to_text(&self) -> String {
        let header = ["forecaster", "zone", "n", "brier", "ref", "skill", "coverage"];
        let body: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.forecaster.clone(),
                    r.zone.to_string(),
                    r.n.to_string(),
                    format!("{:.4}", r.brier),
                    format!("{:.4}", r.reference_brier),
                    r.bss.map(|b| format!("{:+.1}%", 100.0 * b)).unwrap_or_else(|| "n/a".into()),
                    format!("{:.0}%", 100.0 * r.coverage),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let mut line = |cells: &[String]| {
            let mut s = String::new();
            for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
                if i > 0 {
                    s.push_str("  ");
                }
                if i < 2 {
                    let _ = write!(s, "{c:<w$}");
                } else {
                    let _ = write!(s, "{c:>w$}");
                }
            }
            out.push_str(s.trim_end());
            out.push('\n');
        };
        line(&header.map(String::from));
        for row in &body {
            line(row);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Forecast CSV: date,forecaster,operator,zone,p0,p1,p2

#[derive(Debug, Serialize, Deserialize)]
struct ForecastRecord {
    date: NaiveDate,
    forecaster: String,
    operator: String,
    zone: Zone,
    p0: f64,
    p1: f64,
    p2: f64,
}

/// Writes one row per forecast cell. Probabilities are written with full
/// round-trip precision.
pub fn write_forecasts<W: Write>(writer: W, sets: &[ForecastSet]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for fs in sets {
        for (zone, t) in &fs.entries {
            w.serialize(ForecastRecord {
                date: fs.date,
                forecaster: fs.forecaster_id.clone(),
                operator: fs.operator_id.clone(),
                zone: *zone,
                p0: t.p0(),
                p1: t.p1(),
                p2: t.p2(),
            })?;
        }
    }
    w.flush()
}

/// Reads forecasts written by [`write_forecasts`], regrouped per
/// (forecaster, date). Runtime and question counts are not stored and come
/// back as zero.
pub fn read_forecasts<R: Read>(reader: R) -> Result<Vec<ForecastSet>, ScoringError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut sets: BTreeMap<(String, NaiveDate), ForecastSet> = BTreeMap::new();
    for (i, rec) in rdr.deserialize::<ForecastRecord>().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| ScoringError::Parse { line, message: e.to_string() })?;
        let t = ProbTriple::new(rec.p0, rec.p1, rec.p2)
            .map_err(|e| ScoringError::Parse { line, message: e.to_string() })?;
        let fs = sets.entry((rec.forecaster.clone(), rec.date)).or_insert_with(|| ForecastSet {
            forecaster_id: rec.forecaster.clone(),
            date: rec.date,
            entries: BTreeMap::new(),
            runtime_ms: 0.0,
            questions_asked: 0,
            operator_id: rec.operator.clone(),
        });
        fs.entries.insert(rec.zone, t);
    }
    Ok(sets.into_values().collect())
}
