//! Intercomparison harness for probabilistic severe-convective-storm
//! forecasters.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analog;
pub mod classify;
pub mod domain;
pub mod harness;
pub mod induct;
pub mod inference;
pub mod linear;
pub mod parcel;
pub mod ruledsl;
pub mod scoring;

pub use domain::{
    Answer, AnswerSet, CoverageSpec, DomainError, FeatureMap, FeatureRegistry, ForecastSet, ProbTriple, Scenario,
    WeatherCategory, Zone,
};
pub use harness::{ExperimentConfig, HarnessError, RunOptions, RunSummary};
pub use parcel::SoundingLevel;
pub use scoring::{ScoreMode, ScoreOptions, SkillReport};
