use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::forecasters::ForecasterState;
use super::{read_file, write_file, HarnessError};

pub const SNAPSHOT_VERSION: u32 = 1;

/// All forecaster states plus the last verified date.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentState {
    pub states: BTreeMap<String, ForecasterState>,
    pub last_feedback: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format_version: u32,
    pub content_hash: String,
    pub state: ExperimentState,
}

fn sha256_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("state serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Content hash of one forecaster's state.
pub fn state_hash(state: &ForecasterState) -> String {
    sha256_json(state)
}

pub fn snapshot_state(state: &ExperimentState) -> Snapshot {
    Snapshot { format_version: SNAPSHOT_VERSION, content_hash: sha256_json(state), state: state.clone() }
}

pub fn restore_state(snapshot: Snapshot) -> Result<ExperimentState, HarnessError> {
    if snapshot.format_version != SNAPSHOT_VERSION {
        return Err(HarnessError::VersionMismatch { found: snapshot.format_version, expected: SNAPSHOT_VERSION });
    }
    let computed = sha256_json(&snapshot.state);
    if computed != snapshot.content_hash {
        return Err(HarnessError::HashMismatch { recorded: snapshot.content_hash, computed });
    }
    Ok(snapshot.state)
}

pub fn write_snapshot(path: &Path, state: &ExperimentState) -> Result<(), HarnessError> {
    let mut json = serde_json::to_string_pretty(&snapshot_state(state)).expect("snapshot serializes");
    json.push('\n');
    write_file(path, json.as_bytes())
}

/// Reads and verifies a snapshot. The version is checked before the body is
/// interpreted, so files from other versions fail with `VersionMismatch`.
pub fn read_snapshot(path: &Path) -> Result<ExperimentState, HarnessError> {
    let text = read_file(path)?;
    let parse_err = |e: serde_json::Error| HarnessError::Parse {
        file: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(parse_err)?;
    let found = value.get("format_version").and_then(serde_json::Value::as_u64).unwrap_or(0) as u32;
    if found != SNAPSHOT_VERSION {
        return Err(HarnessError::VersionMismatch { found, expected: SNAPSHOT_VERSION });
    }
    let snapshot: Snapshot = serde_json::from_value(value).map_err(parse_err)?;
    restore_state(snapshot)
}
