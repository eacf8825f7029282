use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use super::{read_file, HarnessError};
use crate::classify::{
    aggregate_ledger, observation_table, read_ledger, read_observations, EventReport, ObservationTable, ValidWindow,
};
use crate::domain::{Scenario, WeatherCategory, Zone};

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    /// Ascending by date.
    pub scenarios: Vec<Scenario>,
    pub reports: Vec<EventReport>,
    /// Z1..Z4 and Overall for every scenario date.
    pub observations: ObservationTable,
}

pub fn read_scenario(path: &Path) -> Result<Scenario, HarnessError> {
    let text = read_file(path)?;
    let file = path.display().to_string();
    let scenario: Scenario = serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
        file: file.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    scenario.validate().map_err(|e| HarnessError::Parse { file: file.clone(), line: 1, message: e.to_string() })?;
    if !scenario.sounding.is_empty() {
        crate::parcel::validate_sounding(&scenario.sounding).map_err(|e| HarnessError::Parse {
            file,
            line: 1,
            message: e.to_string(),
        })?;
    }
    Ok(scenario)
}

fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))? {
        let path = entry.map_err(|e| HarnessError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn ingest(scenario_dir: &Path, observation_file: &Path, window: ValidWindow) -> Result<Ingested, HarnessError> {
    let mut by_date: BTreeMap<NaiveDate, (Scenario, PathBuf)> = BTreeMap::new();
    for path in scenario_files(scenario_dir)? {
        let s = read_scenario(&path)?;
        if let Some((_, first)) = by_date.get(&s.date) {
            return Err(HarnessError::DuplicateDate {
                date: s.date,
                first: first.display().to_string(),
                second: path.display().to_string(),
            });
        }
        by_date.insert(s.date, (s, path));
    }
    let file = File::open(observation_file).map_err(|e| HarnessError::io(observation_file, e))?;
    let reports = read_ledger(file).map_err(|e| match e {
        crate::classify::ClassifyError::Ledger { line, message } => {
            HarnessError::Parse { file: observation_file.display().to_string(), line: line as usize, message }
        }
        other => other.into(),
    })?;
    let days = aggregate_ledger(&reports, by_date.keys().copied(), window)?;
    Ok(Ingested {
        scenarios: by_date.into_values().map(|(s, _)| s).collect(),
        reports,
        observations: observation_table(&days),
    })
}

/// Historical observations as (zone, category) pairs.
pub fn load_history(path: &Path) -> Result<Vec<(Zone, WeatherCategory)>, HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let table = read_observations(file).map_err(|e| match e {
        crate::classify::ClassifyError::Ledger { line, message } => {
            HarnessError::Parse { file: path.display().to_string(), line: line as usize, message }
        }
        other => other.into(),
    })?;
    Ok(table.into_iter().map(|((_, z), c)| (z, c)).collect())
}
