//! Dataset files, run specifications and run reports.

mod dataset;
mod report;
mod runspec;

use std::path::PathBuf;

use thiserror::Error;

pub use dataset::{load_dataset, parse_dataset};
pub use report::{
    read_report, report_from_json, report_to_json, write_csv_trace, write_report, ReportFormat,
    REPORT_SCHEMA, TRACE_COLUMNS,
};
pub use runspec::{
    load_runspec, parse_runspec, ModelSpec, RunSpec, WeightSpec, RUNSPEC_SCHEMA,
};

#[derive(Debug, Error)]
pub enum DataIoError {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: u64,
        message: String,
    },
    #[error("invalid `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DataIoError {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        DataIoError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// The offending key for configuration errors.
    pub fn key(&self) -> Option<&str> {
        match self {
            DataIoError::Config { key, .. } => Some(key),
            _ => None,
        }
    }
}
