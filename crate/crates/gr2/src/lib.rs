//! Experiment driver on top of `gr2-core`: TOML configs, CSV and JSON output,
//! and the `dynamics`, `train`, `tournament` and `verify` jobs behind the
//! `gr2` binary.

pub mod config;
mod error;
pub mod jobs;
pub mod output;

pub use config::{ExperimentConfig, Game, JobKind};
pub use error::{Gr2Error, Result};
pub use jobs::{
    run_dynamics, run_tournament, run_train, run_verify, DynamicsReport, RunRecord, TournamentReport, TrainReport,
    VerifyReport,
};
