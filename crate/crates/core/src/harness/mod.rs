//! The experiment driver: ingestion, the daily forecast/feedback loop, state
//! snapshots, replay, operator divergence and the synthetic season generator.

mod briefing;
mod config;
mod divergence;
mod forecasters;
mod ingest;
mod run;
mod state;
mod synth;

use std::path::Path;

use chrono::NaiveDate;
use thiserror::Error;

pub use briefing::briefing;
pub use config::{
    AnalogConfig, ExperimentConfig, ForecasterKind, InductionConfig, MixingConfig, ModuleConfig, ParcelConfig,
    Registration, RuleBackwardConfig, StagedConfig,
};
pub use divergence::{operator_divergence, write_divergence, DivergenceRow};
pub use forecasters::{
    build_forecaster, enrich_features, AnswerPrompt, DayContext, Detail, ForecastError, Forecaster, ForecasterState,
    ZoneForecast,
};
pub use ingest::{ingest, load_history, read_scenario, Ingested};
pub use run::{feedback_day, run_day, run_experiment, DayRecord, Diagnostic, ForecasterDay, RunOptions, RunSummary};
pub use state::{
    read_snapshot, restore_state, snapshot_state, state_hash, write_snapshot, ExperimentState, Snapshot,
    SNAPSHOT_VERSION,
};
pub use synth::{generate_season, write_season, GenOptions, SyntheticSeason, ANALOG_FEATURES};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("date {date} appears in both {first} and {second}")]
    DuplicateDate { date: NaiveDate, first: String, second: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("forecaster `{forecaster}` has no recorded forecast for {date}")]
    MissingTrace { forecaster: String, date: NaiveDate },
    #[error("feedback for {date} already applied (last applied: {last})")]
    FeedbackAlreadyApplied { date: NaiveDate, last: NaiveDate },
    #[error("forecaster `{forecaster}` feedback failed: {message}")]
    Feedback { forecaster: String, message: String },
    #[error("snapshot content hash mismatch: recorded {recorded}, computed {computed}")]
    HashMismatch { recorded: String, computed: String },
    #[error("snapshot format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("operator divergence needs at least two operators on some day")]
    SingleOperator,
    #[error("no forecaster `{0}` in the config")]
    UnknownForecaster(String),
    #[error("no scenario dated {0}")]
    UnknownDate(NaiveDate),
    #[error(transparent)]
    Scoring(#[from] crate::scoring::ScoringError),
    #[error(transparent)]
    Classify(#[from] crate::classify::ClassifyError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io { path: path.display().to_string(), message: e.to_string() }
    }

    /// True for errors caused by inputs rather than by the program.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, HarnessError::Feedback { .. })
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}
