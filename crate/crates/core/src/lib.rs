//! Derivative-free nonlinear least squares.
//!
//! Minimizes `½ Σ wᵢ rᵢ(β)²` using only residual evaluations: a
//! Levenberg-Marquardt step is computed on a Jacobian estimate that is kept
//! current by Broyden rank-one secant updates, and each step is safeguarded
//! by Armijo backtracking.
//!
//! ```
//! use broyden_lm::{optimize, EvalError, ParameterVector, SolverConfig};
//!
//! // y = 1 + 2x
//! let xs = [0.0, 1.0, 2.0, 3.0];
//! let mut model = |b: &[f64]| -> Result<Vec<f64>, EvalError> {
//!     Ok(xs.iter().map(|x| 1.0 + 2.0 * x - (b[0] + b[1] * x)).collect())
//! };
//! let mut cfg = SolverConfig::default();
//! cfg.epsilon = 1e-10;
//! let report = optimize(&mut model, &ParameterVector::zeros(2), &cfg, None).unwrap();
//! assert!(report.converged());
//! assert!((report.final_beta.values()[1] - 2.0).abs() < 1e-6);
//! ```
//!
//! The numerical core is generic over [`Scalar`] (`f32` and `f64`); the
//! aliases below fix the type for the common cases. File formats and the
//! external-process protocol use `f64`.

pub mod evaluator;
pub mod fd;
pub mod io;
pub mod linalg;
pub mod model;
pub mod nlls;
pub mod scalar;

pub use evaluator::{EvalError, ResidualEvaluator};
pub use fd::{brute_force_minimum, fd_jacobian, FdConfig, FdError, FdScheme, GridMinimum};
pub use linalg::{condition_estimate, solve, DenseSystem, LinalgError, Matrix};
pub use model::{AnalyticModel, Dataset, DatasetModel, ExternalEvaluator, ExternalEvaluatorSpec};
pub use nlls::{
    optimize, BroydenMatrix, IterationRecord, NllsError, ParameterVector, RunReport, Solver,
    SolverConfig, Status, WeightMatrix,
};
pub use scalar::Scalar;

pub type ParameterVector64 = ParameterVector<f64>;
pub type SolverConfig64 = SolverConfig<f64>;
pub type RunReport64 = RunReport<f64>;
pub type Matrix64 = Matrix<f64>;
pub type Solver64 = Solver<f64>;

pub type ParameterVector32 = ParameterVector<f32>;
pub type SolverConfig32 = SolverConfig<f32>;
pub type RunReport32 = RunReport<f32>;
pub type Matrix32 = Matrix<f32>;
pub type Solver32 = Solver<f32>;
