//! Batch front end for the feedback solver: configuration files, the
//! `solve`, `evaluate` and `compare` commands, and their CSV and plot output.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
pub mod report;

pub use commands::{compare, evaluate, load_feedback, solve, SolveOutcome};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use report::{Aggregate, EvaluationReport, EvaluationRow};
