use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::domain::ForecastSet;

/// How much a forecaster's output moves when only the operator changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub forecaster: String,
    /// Number of (day, zone, operator pair) comparisons.
    pub comparisons: usize,
    /// Mean over comparisons of the mean absolute per-category difference.
    pub mean: f64,
    pub max: f64,
}

pub fn operator_divergence(sets: &[ForecastSet]) -> Result<Vec<DivergenceRow>, HarnessError> {
    let mut grouped: BTreeMap<&str, BTreeMap<NaiveDate, BTreeMap<&str, &ForecastSet>>> = BTreeMap::new();
    for fs in sets {
        grouped
            .entry(fs.forecaster_id.as_str())
            .or_default()
            .entry(fs.date)
            .or_default()
            .insert(fs.operator_id.as_str(), fs);
    }
    if !grouped.values().flat_map(|days| days.values()).any(|ops| ops.len() >= 2) {
        return Err(HarnessError::SingleOperator);
    }
    let mut rows = Vec::new();
    for (forecaster, days) in grouped {
        let mut diffs = Vec::new();
        for ops in days.values() {
            let ops: Vec<&&ForecastSet> = ops.values().collect();
            for (i, a) in ops.iter().enumerate() {
                for b in &ops[i + 1..] {
                    for (zone, ta) in &a.entries {
                        if let Some(tb) = b.entries.get(zone) {
                            let (pa, pb) = (ta.as_array(), tb.as_array());
                            diffs.push((0..3).map(|c| (pa[c] - pb[c]).abs()).sum::<f64>() / 3.0);
                        }
                    }
                }
            }
        }
        let max = diffs.iter().copied().fold(0.0, f64::max);
        diffs.sort_by(f64::total_cmp);
        let mean = if diffs.is_empty() { 0.0 } else { diffs.iter().sum::<f64>() / diffs.len() as f64 };
        rows.push(DivergenceRow { forecaster: forecaster.to_string(), comparisons: diffs.len(), mean, max });
    }
    Ok(rows)
}

pub fn write_divergence<W: Write>(writer: W, rows: &[DivergenceRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ProbTriple, Zone};

    fn fs(id: &str, op: &str, t: ProbTriple) -> ForecastSet {
        ForecastSet {
            forecaster_id: id.into(),
            date: NaiveDate::from_ymd_opt(1989, 6, 1).unwrap(),
            entries: [(Zone::Overall, t)].into(),
            runtime_ms: 0.0,
            questions_asked: 0,
            operator_id: op.into(),
        }
    }

    #[test]
    fn identical_and_differing_operators() {
        let a = ProbTriple::new(0.5, 0.3, 0.2).unwrap();
        let b = ProbTriple::new(0.2, 0.3, 0.5).unwrap();
        let rows =
            operator_divergence(&[fs("x", "op1", a), fs("x", "op2", a), fs("y", "op1", a), fs("y", "op2", b)]).unwrap();
        assert_eq!(rows[0].mean, 0.0);
        assert!((rows[1].mean - 0.2).abs() < 1e-15);
        assert_eq!(rows[1].comparisons, 1);
    }

    #[test]
    fn single_operator_is_an_error() {
        let a = ProbTriple::uniform();
        assert!(matches!(operator_divergence(&[fs("x", "op1", a)]), Err(HarnessError::SingleOperator)));
    }
}
