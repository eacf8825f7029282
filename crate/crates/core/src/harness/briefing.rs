use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::NaiveDate;

use super::run::Diagnostic;
use crate::domain::{ForecastSet, WeatherCategory, Zone};

/// Plain-text daily briefing: the day's forecast table, anything missing, and
/// the previous forecast day's verification.
pub fn briefing(
    date: NaiveDate,
    operator: &str,
    forecasts: &[&ForecastSet],
    diagnostics: &[Diagnostic],
    previous: Option<(NaiveDate, &BTreeMap<Zone, WeatherCategory>)>,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Forecast briefing {date} (operator {operator})");
    out.push('\n');
    let width = forecasts.iter().map(|f| f.forecaster_id.len()).max().unwrap_or(0).max("forecaster".len());
    let _ =
        writeln!(out, "{:<width$}  {:<7}  {:>5}  {:>5}  {:>5}  {:>5}", "forecaster", "zone", "p0", "p1", "p2", "event");
    for fs in forecasts {
        for (zone, t) in &fs.entries {
            let _ = writeln!(
                out,
                "{:<width$}  {:<7}  {:>5.2}  {:>5.2}  {:>5.2}  {:>5.2}",
                fs.forecaster_id,
                zone.as_str(),
                t.p0(),
                t.p1(),
                t.p2(),
                t.event_probability()
            );
        }
    }
    if !diagnostics.is_empty() {
        out.push_str("\nMissing forecasts:\n");
        for d in diagnostics {
            let zone = d.zone.map(|z| z.as_str()).unwrap_or("-");
            let _ = writeln!(out, "  {} {}: {}", d.forecaster, zone, d.message);
        }
    }
    out.push('\n');
    match previous {
        Some((prev, obs)) => {
            let _ = writeln!(out, "Verification for {prev}:");
            for (zone, cat) in obs {
                let _ = writeln!(out, "  {:<7}  category {}", zone.as_str(), cat.code());
            }
        }
        None => out.push_str("No previous forecast day to verify.\n"),
    }
    out
}
