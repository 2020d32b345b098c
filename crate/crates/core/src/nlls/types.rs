use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::EvalError;
use crate::fd::FdConfig;
use crate::linalg::{LinalgError, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NllsError {
    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// `‖s‖²` too small for a meaningful secant update.
    #[error("stagnant step: squared step norm below 1e-30")]
    StagnantStep,
    #[error("singular step system")]
    SingularSystem,
    #[error(transparent)]
    Evaluator(#[from] EvalError),
}

impl NllsError {
    pub(crate) fn config(key: &str, reason: impl Into<String>) -> Self {
        NllsError::Config {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}

impl From<LinalgError> for NllsError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::Singular { .. } => NllsError::SingularSystem,
            LinalgError::Dimension(msg) => NllsError::Dimension(msg),
        }
    }
}

/// Parameters being optimized, with optional per-coordinate box bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector<T> {
    values: Vec<T>,
    lower: Vec<Option<T>>,
    upper: Vec<Option<T>>,
}

impl<T: Scalar> ParameterVector<T> {
    /// Unbounded parameters.
    pub fn new(values: Vec<T>) -> Self {
        let n = values.len();
        Self {
            values,
            lower: vec![None; n],
            upper: vec![None; n],
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![T::zero(); n])
    }

    /// Bounded parameters. Each present bound pair must satisfy `lower < upper`
    /// and the values must be finite and feasible.
    pub fn with_bounds(
        values: Vec<T>,
        lower: Vec<Option<T>>,
        upper: Vec<Option<T>>,
    ) -> Result<Self, NllsError> {
        let n = values.len();
        if lower.len() != n || upper.len() != n {
            return Err(NllsError::Dimension(format!(
                "{n} parameters but {} lower and {} upper bounds",
                lower.len(),
                upper.len()
            )));
        }
        for j in 0..n {
            if lower[j].is_some_and(|l| l.is_nan()) || upper[j].is_some_and(|u| u.is_nan()) {
                return Err(NllsError::config("bounds", format!("NaN bound for parameter {j}")));
            }
            if let (Some(l), Some(u)) = (lower[j], upper[j]) {
                if !(l < u) {
                    return Err(NllsError::config(
                        "bounds",
                        format!("parameter {j}: lower bound {l} is not below upper bound {u}"),
                    ));
                }
            }
        }
        let pv = Self { values, lower, upper };
        pv.validate()?;
        Ok(pv)
    }

    /// Checks the run-lifetime invariants: non-empty, finite and feasible.
    pub fn validate(&self) -> Result<(), NllsError> {
        if self.values.is_empty() {
            return Err(NllsError::config("beta0", "at least one parameter is required"));
        }
        if let Some(j) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(NllsError::config("beta0", format!("parameter {j} is not finite")));
        }
        if !self.is_feasible(&self.values) {
            return Err(NllsError::config("beta0", "initial parameters violate their bounds"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn lower(&self, j: usize) -> Option<T> {
        self.lower[j]
    }

    pub fn upper(&self, j: usize) -> Option<T> {
        self.upper[j]
    }

    pub fn lower_bounds(&self) -> &[Option<T>] {
        &self.lower
    }

    pub fn upper_bounds(&self) -> &[Option<T>] {
        &self.upper
    }

    /// Same bounds, new values. The caller keeps the values feasible.
    pub fn with_values(&self, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), self.len());
        Self {
            values,
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        }
    }

    pub fn is_feasible(&self, x: &[T]) -> bool {
        x.len() == self.len()
            && x.iter().enumerate().all(|(j, &v)| {
                self.lower[j].is_none_or(|l| v >= l) && self.upper[j].is_none_or(|u| v <= u)
            })
    }

    pub fn clamp_coordinate(&self, j: usize, v: T) -> T {
        let v = self.lower[j].map_or(v, |l| v.max(l));
        self.upper[j].map_or(v, |u| v.min(u))
    }

    pub fn clamp(&self, x: &mut [T]) {
        for (j, v) in x.iter_mut().enumerate() {
            *v = self.clamp_coordinate(j, *v);
        }
    }
}

/// Residual values at one parameter vector, `r_i = y_i − f(x_i, β)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualVector<T>(pub Vec<T>);

impl<T: Scalar> ResidualVector<T> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn norm(&self) -> T {
        crate::scalar::norm2(&self.0)
    }
}

/// Diagonal weighting matrix with strictly positive, finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix<T> {
    diagonal: Vec<T>,
}

impl<T: Scalar> WeightMatrix<T> {
    pub fn new(diagonal: Vec<T>) -> Result<Self, NllsError> {
        if let Some(i) = diagonal
            .iter()
            .position(|&w| !(w > T::zero() && w.is_finite()))
        {
            return Err(NllsError::config(
                "weights",
                format!("weight {i} must be positive and finite"),
            ));
        }
        Ok(Self { diagonal })
    }

    pub fn identity(m: usize) -> Self {
        Self {
            diagonal: vec![T::one(); m],
        }
    }

    pub fn uniform(m: usize, value: T) -> Result<Self, NllsError> {
        Self::new(vec![value; m])
    }

    pub fn diagonal(&self) -> &[T] {
        &self.diagonal
    }

    pub fn len(&self) -> usize {
        self.diagonal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diagonal.is_empty()
    }
}

/// Secant approximation of the residual Jacobian, `m × n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BroydenMatrix<T>(Matrix<T>);

impl<T: Scalar> BroydenMatrix<T> {
    /// The rectangular "unit" start: ones on `(i, i)`, zeros elsewhere.
    pub fn unit(m: usize, n: usize) -> Self {
        Self(Matrix::identity_pattern(m, n))
    }

    pub fn from_matrix(m: Matrix<T>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.0
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut Matrix<T> {
        &mut self.0
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn cols(&self) -> usize {
        self.0.cols()
    }
}

/// Solver tunables. Defaults follow the documented λ schedule and tolerances.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig<T> {
    /// Convergence tolerance on the maximum relative parameter change.
    pub epsilon: T,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo_c: T,
    /// Smallest step length tried by the backtracking search.
    pub alpha_min: T,
    pub lambda_init: T,
    pub lambda_decrease: T,
    pub lambda_increase: T,
    /// Relative perturbation producing the second starting point.
    pub perturbation_rel: T,
    /// Additive perturbation for parameters that start at exactly zero.
    pub perturbation_abs: T,
    pub max_iterations: usize,
    /// Also stop when `‖p‖` drops below this value.
    pub max_p_norm: Option<T>,
    /// Replace the Broyden matrix by a finite-difference Jacobian every this
    /// many iterations.
    pub fd_refresh_period: Option<usize>,
    /// Differencing scheme used for the periodic refresh.
    pub fd: FdConfig<T>,
    /// Record a condition estimate of every step system.
    pub diagnostics: bool,
    /// Evaluate the starting point twice and fail on any difference.
    pub verify_determinism: bool,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            epsilon: T::lit(1e-3),
            armijo_c: T::lit(1e-4),
            alpha_min: T::lit(1e-4),
            lambda_init: T::lit(1e-2),
            lambda_decrease: T::lit(0.1),
            lambda_increase: T::lit(10.0),
            perturbation_rel: T::lit(0.01),
            perturbation_abs: T::lit(0.01),
            max_iterations: 200,
            max_p_norm: None,
            fd_refresh_period: None,
            fd: FdConfig::default(),
            diagnostics: false,
            verify_determinism: cfg!(debug_assertions),
        }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn validate(&self) -> Result<(), NllsError> {
        let zero = T::zero();
        let one = T::one();
        let check = |ok: bool, key: &str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(NllsError::config(key, reason))
            }
        };
        check(self.epsilon > zero && self.epsilon.is_finite(), "epsilon", "must be positive")?;
        check(self.armijo_c > zero && self.armijo_c < one, "armijo_c", "must lie in (0, 1)")?;
        check(self.alpha_min > zero && self.alpha_min <= one, "alpha_min", "must lie in (0, 1]")?;
        check(
            self.lambda_init >= zero && self.lambda_init.is_finite(),
            "lambda_init",
            "must be non-negative",
        )?;
        check(
            self.lambda_decrease > zero && self.lambda_decrease < one,
            "lambda_decrease",
            "must lie in (0, 1)",
        )?;
        check(
            self.lambda_increase > one && self.lambda_increase.is_finite(),
            "lambda_increase",
            "must exceed 1",
        )?;
        check(
            self.perturbation_rel > zero && self.perturbation_rel.is_finite(),
            "perturbation_rel",
            "must be positive",
        )?;
        check(
            self.perturbation_abs > zero && self.perturbation_abs.is_finite(),
            "perturbation_abs",
            "must be positive",
        )?;
        check(self.max_iterations >= 1, "max_iterations", "must be at least 1")?;
        if let Some(g) = self.max_p_norm {
            check(g > zero && g.is_finite(), "max_p_norm", "must be positive")?;
        }
        if let Some(p) = self.fd_refresh_period {
            check(p >= 1, "fd_refresh_period", "must be at least 1")?;
        }
        self.fd.validate()
    }
}

/// One pass of the iteration loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord<T> {
    pub k: usize,
    /// Parameters after this pass (unchanged when the step was rejected).
    pub beta: Vec<T>,
    /// Weighted residual norm `sqrt(Σ wᵢ rᵢ²)` at `beta`.
    pub residual_norm: T,
    /// `½ · residual_norm²`
    pub objective: T,
    /// Damping used to compute this pass's step.
    pub lambda: T,
    pub alpha: T,
    pub p_norm: T,
    /// `max_j |p_j| / max(|β_j|, 1)`
    pub max_rel_change: T,
    pub armijo_satisfied: bool,
    /// The secant update was skipped because the step was too small.
    #[serde(default)]
    pub secant_skipped: bool,
    /// The Broyden matrix was replaced by a finite-difference Jacobian.
    #[serde(default)]
    pub fd_refreshed: bool,
    #[serde(default)]
    pub condition: Option<T>,
    /// Cumulative evaluator calls at the end of this pass.
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Converged,
    MaxIterations,
    LineSearchFloor,
    EvaluatorFailure,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Status::Converged => "converged",
            Status::MaxIterations => "max-iterations",
            Status::LineSearchFloor => "line-search-floor",
            Status::EvaluatorFailure => "evaluator-failure",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorFailure {
    /// Loop pass during which the failure happened; 0 during initialization.
    pub iteration: usize,
    pub error: EvalError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport<T> {
    pub status: Status,
    pub final_beta: ParameterVector<T>,
    pub final_objective: T,
    pub iterations: Vec<IterationRecord<T>>,
    pub evaluation_count: usize,
    #[serde(default)]
    pub failure: Option<EvaluatorFailure>,
    /// Jacobian estimate in use when the run stopped.
    #[serde(default)]
    pub broyden: Option<Matrix<T>>,
    /// Step `s` of the most recent secant update applied to `broyden`.
    #[serde(default)]
    pub last_secant_step: Option<Vec<T>>,
}

impl<T: Scalar> RunReport<T> {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }
}
