//! Residual evaluators: closed-form models bound to data, and external
//! processes reached through a line protocol.

mod analytic;
mod external;
pub mod protocol;

pub use analytic::{residuals_from_dataset, AnalyticModel, Dataset, DatasetError, DatasetModel};
pub use external::{ExternalEvaluator, ExternalEvaluatorSpec, DEFAULT_TIMEOUT};
