//! Levenberg-Marquardt iteration on a Broyden secant Jacobian with Armijo
//! backtracking.
//!
//! Only residual evaluations are required: the Jacobian starts as the
//! rectangular unit pattern and is corrected by one rank-one secant update
//! per pass.

mod driver;
mod line_search;
mod step;
mod types;

pub use driver::{optimize, Solver};
pub use line_search::{backtrack, ArmijoReference, LineSearchOutcome};
pub use step::{
    armijo_holds, armijo_test, assemble_lm_system, broyden_update, check_convergence,
    constrain_step, lm_step, max_relative_change, objective_value, perturb_initial,
    update_lambda, LAMBDA_CAP, LAMBDA_FLOOR, STAGNANT_STEP_SQ,
};
pub use types::{
    BroydenMatrix, EvaluatorFailure, IterationRecord, NllsError, ParameterVector, ResidualVector,
    RunReport, SolverConfig, Status, WeightMatrix,
};
