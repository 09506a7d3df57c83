//! Library side of the `cimsim` binary: configuration files, matrix files,
//! the experiment runner and its output files.

pub mod config;
pub mod matrix;
pub mod report;
pub mod run;

use serde_json::{json, Value};
use thiserror::Error;

use cimsim_core::CimError;

pub use config::{Config, ConfigError};
pub use matrix::MatrixError;
pub use report::Report;
pub use run::{run, RunOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    Simulate,
    Characterize,
    Montecarlo,
    Sweep,
    Map,
    Fom,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Simulate,
        Experiment::Characterize,
        Experiment::Montecarlo,
        Experiment::Sweep,
        Experiment::Map,
        Experiment::Fom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Characterize => "characterize",
            Experiment::Montecarlo => "montecarlo",
            Experiment::Sweep => "sweep",
            Experiment::Map => "map",
            Experiment::Fom => "fom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Matrix(#[from] MatrixError),

    #[error(transparent)]
    Sim(#[from] CimError),

    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Io(String),
}

impl CliError {
    /// Machine-readable form printed to stderr on failure.
    pub fn to_json(&self) -> Value {
        let msg = self.to_string();
        match self {
            CliError::Config(ConfigError::Parse { line, column, .. }) => {
                json!({"error": "parse", "line": line, "column": column, "message": msg})
            }
            CliError::Config(ConfigError::Override(_)) => json!({"error": "override", "message": msg}),
            CliError::Config(ConfigError::Validation { field, invariant }) => {
                json!({"error": "validation", "field": field, "invariant": invariant, "message": msg})
            }
            CliError::Sim(CimError::Validation { field, invariant }) => {
                json!({"error": "validation", "field": field, "invariant": invariant, "message": msg})
            }
            CliError::Matrix(MatrixError::Format { line, column, .. }) => {
                json!({"error": "format", "line": line, "column": column, "message": msg})
            }
            CliError::Matrix(MatrixError::Range { line, column, value, .. }) => {
                json!({"error": "range", "line": line, "column": column, "value": value, "message": msg})
            }
            CliError::Matrix(MatrixError::Ragged { line, .. }) => json!({"error": "ragged", "line": line, "message": msg}),
            CliError::Matrix(MatrixError::NoWork) => json!({"error": "no_work", "message": msg}),
            CliError::Matrix(MatrixError::Io(_)) | CliError::Io(_) => json!({"error": "io", "message": msg}),
            CliError::Sim(_) => json!({"error": "simulation", "message": msg}),
            CliError::Usage(_) => json!({"error": "usage", "message": msg}),
        }
    }
}
