//! Ground truth: raw weather reports to verified per-zone categories.
//!
//! Thresholds:
//!
//! | category | hail (in)        | wind (kt)      | rain (in/h) | other        |
//! |----------|------------------|----------------|-------------|--------------|
//! | 2        | >= 0.75          | >= 50          | -           | tornado      |
//! | 1        | >= 0.25, < 0.75  | >= 35, < 50    | >= 2.0      | funnel cloud |
//!
//! Anything else, including the absence of reports, is category 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{WeatherCategory, Zone};

pub const SEVERE_HAIL_IN: f64 = 0.75;
pub const SIGNIFICANT_HAIL_IN: f64 = 0.25;
pub const SEVERE_WIND_KT: f64 = 50.0;
pub const SIGNIFICANT_WIND_KT: f64 = 35.0;
pub const HEAVY_RAIN_IN_PER_HR: f64 = 2.0;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("report for zone {found} passed to aggregation for zone {expected}")]
    ZoneMismatch { expected: Zone, found: Zone },
    #[error("observation missing for zone {0}")]
    MissingZone(Zone),
    #[error("invalid report: {0}")]
    InvalidReport(String),
    #[error("observation ledger line {line}: {message}")]
    Ledger { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ReportKind {
    Hail,
    Wind,
    RainRate,
    FunnelCloud,
    Tornado,
}

impl ReportKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ReportKind::Hail => "Hail",
            ReportKind::Wind => "Wind",
            ReportKind::RainRate => "RainRate",
            ReportKind::FunnelCloud => "FunnelCloud",
            ReportKind::Tornado => "Tornado",
        }
    }

    fn has_magnitude(self) -> bool {
        matches!(self, ReportKind::Hail | ReportKind::Wind | ReportKind::RainRate)
    }
}

impl fmt::Display for ReportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReportKind {
    type Err = ClassifyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hail" => Ok(ReportKind::Hail),
            "wind" => Ok(ReportKind::Wind),
            "rainrate" | "rain" => Ok(ReportKind::RainRate),
            "funnelcloud" | "funnel" => Ok(ReportKind::FunnelCloud),
            "tornado" => Ok(ReportKind::Tornado),
            _ => Err(ClassifyError::InvalidReport(format!("unknown report kind `{s}`"))),
        }
    }
}

/// A single raw weather report. `time` is minutes after 00 UTC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub date: NaiveDate,
    pub zone: Zone,
    pub time: u16,
    pub kind: ReportKind,
    pub magnitude: f64,
    pub source: String,
}

impl EventReport {
    pub fn new(date: NaiveDate, zone: Zone, time: u16, kind: ReportKind, magnitude: f64) -> Self {
        EventReport { date, zone, time, kind, magnitude, source: String::new() }
    }

    pub fn validate(&self) -> Result<(), ClassifyError> {
        if self.time > 1440 {
            return Err(ClassifyError::InvalidReport(format!("time {} outside 0..1440", self.time)));
        }
        if self.kind.has_magnitude() && !(self.magnitude >= 0.0 && self.magnitude.is_finite()) {
            return Err(ClassifyError::InvalidReport(format!(
                "{} magnitude {} must be a finite non-negative number",
                self.kind, self.magnitude
            )));
        }
        Ok(())
    }

    fn dedup_key(&self) -> (Zone, u16, ReportKind, u64) {
        (self.zone, self.time, self.kind, self.magnitude.to_bits())
    }
}

/// Verified category for one zone and day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub date: NaiveDate,
    pub zone: Zone,
    pub category: WeatherCategory,
    pub supporting_reports: Vec<EventReport>,
}

/// Forecast valid period in minutes UTC, closed at both ends.
/// When `end < start` the window wraps past 00 UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidWindow {
    pub start: u16,
    pub end: u16,
}

impl ValidWindow {
    /// 1900 to 0200 UTC.
    pub const DEFAULT: ValidWindow = ValidWindow { start: 19 * 60, end: 2 * 60 };

    pub fn contains(&self, minute: u16) -> bool {
        if self.start <= self.end {
            (self.start..=self.end).contains(&minute)
        } else {
            minute >= self.start || minute <= self.end
        }
    }
}

impl Default for ValidWindow {
    fn default() -> Self {
        ValidWindow::DEFAULT
    }
}

pub fn classify_report(report: &EventReport) -> WeatherCategory {
    use WeatherCategory::*;
    let m = report.magnitude;
    match report.kind {
        ReportKind::Tornado => Severe,
        ReportKind::FunnelCloud => Significant,
        ReportKind::Hail if m >= SEVERE_HAIL_IN => Severe,
        ReportKind::Hail if m >= SIGNIFICANT_HAIL_IN => Significant,
        ReportKind::Wind if m >= SEVERE_WIND_KT => Severe,
        ReportKind::Wind if m >= SIGNIFICANT_WIND_KT => Significant,
        ReportKind::RainRate if m >= HEAVY_RAIN_IN_PER_HR => Significant,
        _ => Nonsignificant,
    }
}

/// Classifies the in-window reports for one zone and keeps the maximum.
pub fn aggregate_day(
    zone: Zone,
    date: NaiveDate,
    reports: &[EventReport],
    window: ValidWindow,
) -> Result<Observation, ClassifyError> {
    let mut kept: BTreeMap<(Zone, u16, ReportKind, u64), &EventReport> = BTreeMap::new();
    for r in reports {
        if r.zone != zone {
            return Err(ClassifyError::ZoneMismatch { expected: zone, found: r.zone });
        }
        if !window.contains(r.time) {
            continue;
        }
        // exact duplicates collapse to one row carrying the smallest source tag
        kept.entry(r.dedup_key())
            .and_modify(|cur| {
                if r.source < cur.source {
                    *cur = r;
                }
            })
            .or_insert(r);
    }
    let category = kept.values().map(|r| classify_report(r)).max().unwrap_or(WeatherCategory::Nonsignificant);
    let supporting: Vec<EventReport> = kept.into_values().cloned().collect();
    Ok(Observation { date, zone, category, supporting_reports: supporting })
}

/// Verifies the Overall region as the maximum over Z1..Z4.
pub fn overall_observation(per_zone: &BTreeMap<Zone, Observation>) -> Result<Observation, ClassifyError> {
    let mut date = None;
    let mut category = WeatherCategory::Nonsignificant;
    let mut supporting = Vec::new();
    for zone in Zone::SUB_ZONES {
        let obs = per_zone.get(&zone).ok_or(ClassifyError::MissingZone(zone))?;
        date.get_or_insert(obs.date);
        category = category.max(obs.category);
        supporting.extend(obs.supporting_reports.iter().cloned());
    }
    Ok(Observation {
        date: date.expect("four zones present"),
        zone: Zone::Overall,
        category,
        supporting_reports: supporting,
    })
}

/// Verified categories keyed by (date, zone).
pub type ObservationTable = BTreeMap<(NaiveDate, Zone), WeatherCategory>;

/// Aggregates a report ledger into observations for every listed date:
/// Z1..Z4 from reports (0 when none) and Overall as their maximum.
pub fn aggregate_ledger(
    reports: &[EventReport],
    dates: impl IntoIterator<Item = NaiveDate>,
    window: ValidWindow,
) -> Result<BTreeMap<NaiveDate, BTreeMap<Zone, Observation>>, ClassifyError> {
    let mut grouped: BTreeMap<(NaiveDate, Zone), Vec<EventReport>> = BTreeMap::new();
    for r in reports {
        grouped.entry((r.date, r.zone)).or_default().push(r.clone());
    }
    let mut out = BTreeMap::new();
    for date in dates {
        let mut per_zone = BTreeMap::new();
        for zone in Zone::SUB_ZONES {
            let rs = grouped.get(&(date, zone)).map(Vec::as_slice).unwrap_or(&[]);
            per_zone.insert(zone, aggregate_day(zone, date, rs, window)?);
        }
        let overall = overall_observation(&per_zone)?;
        per_zone.insert(Zone::Overall, overall);
        out.insert(date, per_zone);
    }
    Ok(out)
}

pub fn observation_table(days: &BTreeMap<NaiveDate, BTreeMap<Zone, Observation>>) -> ObservationTable {
    days.iter().flat_map(|(date, zones)| zones.iter().map(move |(zone, o)| ((*date, *zone), o.category))).collect()
}

/// Dates that appear in a ledger.
pub fn ledger_dates(reports: &[EventReport]) -> BTreeSet<NaiveDate> {
    reports.iter().map(|r| r.date).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct LedgerRow {
    date: NaiveDate,
    zone: String,
    time_utc: String,
    kind: String,
    magnitude: f64,
    #[serde(default)]
    source: String,
}

/// Parses `HHMM` (e.g. `1930`) into minutes after 00 UTC.
pub fn parse_hhmm(s: &str) -> Option<u16> {
    let s = s.trim();
    if s.len() != 4 || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let hh: u16 = s[..2].parse().ok()?;
    let mm: u16 = s[2..].parse().ok()?;
    let minutes = hh * 60 + mm;
    (mm < 60 && minutes <= 1440).then_some(minutes)
}

pub fn format_hhmm(minutes: u16) -> String {
    format!("{:02}{:02}", minutes / 60, minutes % 60)
}

/// Reads a report ledger (`date,zone,time_utc,kind,magnitude,source`).
pub fn read_ledger<R: Read>(reader: R) -> Result<Vec<EventReport>, ClassifyError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<LedgerRow>() {
        let row = row.map_err(|e| ClassifyError::Ledger {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = out.len() as u64 + 2;
        let bad = |message: String| ClassifyError::Ledger { line, message };
        let zone: Zone = row.zone.parse().map_err(|e| bad(format!("{e}")))?;
        if zone == Zone::Overall {
            return Err(bad("reports must name one of Z1..Z4".into()));
        }
        let time = parse_hhmm(&row.time_utc).ok_or_else(|| bad(format!("bad time_utc `{}`", row.time_utc)))?;
        let kind: ReportKind = row.kind.parse().map_err(|e| bad(format!("{e}")))?;
        let report = EventReport { date: row.date, zone, time, kind, magnitude: row.magnitude, source: row.source };
        report.validate().map_err(|e| bad(e.to_string()))?;
        out.push(report);
    }
    Ok(out)
}

pub fn write_ledger<W: Write>(writer: W, reports: &[EventReport]) -> Result<(), ClassifyError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in reports {
        w.serialize(LedgerRow {
            date: r.date,
            zone: r.zone.to_string(),
            time_utc: format_hhmm(r.time),
            kind: r.kind.to_string(),
            magnitude: r.magnitude,
            source: r.source.clone(),
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes aggregated observations as `date,zone,category`.
pub fn write_observations<W: Write>(writer: W, table: &ObservationTable) -> Result<(), ClassifyError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "zone", "category"])?;
    for ((date, zone), cat) in table {
        w.write_record([date.to_string(), zone.to_string(), cat.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_observations<R: Read>(reader: R) -> Result<ObservationTable, ClassifyError> {
    #[derive(Deserialize)]
    struct Row {
        date: NaiveDate,
        zone: String,
        category: u8,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut table = ObservationTable::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| ClassifyError::Ledger { line, message: e.to_string() })?;
        let zone: Zone = row.zone.parse().map_err(|e| ClassifyError::Ledger { line, message: format!("{e}") })?;
        let cat = WeatherCategory::from_code(row.category)
            .ok_or_else(|| ClassifyError::Ledger { line, message: format!("bad category {}", row.category) })?;
        table.insert((row.date, zone), cat);
    }
    Ok(table)
}
