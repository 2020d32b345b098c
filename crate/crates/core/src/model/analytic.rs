use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::{EvalError, ResidualEvaluator};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("dataset has no rows")]
    Empty,
    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("{0}")]
    Shape(String),
}

/// Observations `(xᵢ, yᵢ)` with optional per-datum weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset<T> {
    x: Vec<Vec<T>>,
    y: Vec<T>,
    weights: Option<Vec<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(x: Vec<Vec<T>>, y: Vec<T>, weights: Option<Vec<T>>) -> Result<Self, DatasetError> {
        if y.is_empty() {
            return Err(DatasetError::Empty);
        }
        if x.len() != y.len() {
            return Err(DatasetError::Shape(format!("{} x rows for {} y values", x.len(), y.len())));
        }
        let d = x[0].len();
        for (i, row) in x.iter().enumerate() {
            if row.len() != d {
                return Err(DatasetError::Row {
                    row: i,
                    reason: format!("{} independent variables, expected {d}", row.len()),
                });
            }
            if row.iter().chain(std::iter::once(&y[i])).any(|v| !v.is_finite()) {
                return Err(DatasetError::Row {
                    row: i,
                    reason: "non-finite value".into(),
                });
            }
        }
        if let Some(w) = &weights {
            if w.len() != y.len() {
                return Err(DatasetError::Shape(format!("{} weights for {} rows", w.len(), y.len())));
            }
            if let Some(i) = w.iter().position(|&w| !(w > T::zero() && w.is_finite())) {
                return Err(DatasetError::Row {
                    row: i,
                    reason: "weight must be positive and finite".into(),
                });
            }
        }
        Ok(Self { x, y, weights })
    }

    /// Single independent variable.
    pub fn from_xy(x: &[T], y: &[T]) -> Result<Self, DatasetError> {
        Self::new(x.iter().map(|&v| vec![v]).collect(), y.to_vec(), None)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Number of independent variables per datum.
    pub fn dim(&self) -> usize {
        self.x[0].len()
    }

    pub fn x(&self) -> &[Vec<T>] {
        &self.x
    }

    pub fn y(&self) -> &[T] {
        &self.y
    }

    pub fn weights(&self) -> Option<&[T]> {
        self.weights.as_deref()
    }
}

/// Built-in closed-form models `f(x, β)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticModel {
    /// `β₀ + Σₖ βₖ₊₁ xₖ`
    Linear,
    /// `Σₖ βₖ x₁ᵏ`, `k = 0..=degree`
    Polynomial { degree: usize },
    /// `β₀ exp(−β₁ x₁)`
    ExponentialDecay,
    /// `β₀ / (1 + exp(−β₁ (x₁ − β₂)))`
    Logistic,
}

impl AnalyticModel {
    pub fn name(&self) -> String {
        match self {
            AnalyticModel::Linear => "linear".into(),
            AnalyticModel::Polynomial { degree } => format!("polynomial({degree})"),
            AnalyticModel::ExponentialDecay => "exponential_decay".into(),
            AnalyticModel::Logistic => "logistic".into(),
        }
    }

    /// Parameter count for data with `dim` independent variables.
    pub fn param_count(&self, dim: usize) -> Result<usize, DatasetError> {
        if dim == 0 {
            return Err(DatasetError::Shape("model needs at least one x column".into()));
        }
        Ok(match self {
            AnalyticModel::Linear => dim + 1,
            AnalyticModel::Polynomial { degree } => degree + 1,
            AnalyticModel::ExponentialDecay => 2,
            AnalyticModel::Logistic => 3,
        })
    }

    pub fn value<T: Scalar>(&self, x: &[T], beta: &[T]) -> T {
        match self {
            AnalyticModel::Linear => {
                beta[0] + x.iter().zip(&beta[1..]).map(|(&xk, &bk)| xk * bk).sum::<T>()
            }
            AnalyticModel::Polynomial { .. } => {
                beta.iter().rev().fold(T::zero(), |acc, &c| acc * x[0] + c)
            }
            AnalyticModel::ExponentialDecay => beta[0] * (-beta[1] * x[0]).exp(),
            AnalyticModel::Logistic => {
                beta[0] / (T::one() + (-beta[1] * (x[0] - beta[2])).exp())
            }
        }
    }

    /// Hand-coded `∂f/∂β` at one datum.
    pub fn gradient<T: Scalar>(&self, x: &[T], beta: &[T]) -> Vec<T> {
        match self {
            AnalyticModel::Linear => std::iter::once(T::one()).chain(x.iter().copied()).collect(),
            AnalyticModel::Polynomial { degree } => {
                let mut g = Vec::with_capacity(degree + 1);
                let mut pow = T::one();
                for _ in 0..=*degree {
                    g.push(pow);
                    pow = pow * x[0];
                }
                g
            }
            AnalyticModel::ExponentialDecay => {
                let e = (-beta[1] * x[0]).exp();
                vec![e, -beta[0] * x[0] * e]
            }
            AnalyticModel::Logistic => {
                let e = (-beta[1] * (x[0] - beta[2])).exp();
                let denom = T::one() + e;
                let sq = denom * denom;
                vec![
                    T::one() / denom,
                    beta[0] * (x[0] - beta[2]) * e / sq,
                    -beta[0] * beta[1] * e / sq,
                ]
            }
        }
    }

    fn check_beta<T: Scalar>(&self, data: &Dataset<T>, beta: &[T]) -> Result<(), EvalError> {
        let n = self
            .param_count(data.dim())
            .map_err(|e| EvalError::Model(e.to_string()))?;
        if beta.len() != n {
            return Err(EvalError::Model(format!(
                "{} model expects {n} parameters, got {}",
                self.name(),
                beta.len()
            )));
        }
        Ok(())
    }

    /// Analytic Jacobian of the residuals, `∂r/∂β = −∂f/∂β`.
    pub fn residual_jacobian<T: Scalar>(&self, data: &Dataset<T>, beta: &[T]) -> Result<Matrix<T>, EvalError> {
        self.check_beta(data, beta)?;
        let mut j = Matrix::zeros(data.len(), beta.len());
        for (i, x) in data.x().iter().enumerate() {
            for (k, g) in self.gradient(x, beta).into_iter().enumerate() {
                j[(i, k)] = -g;
            }
        }
        Ok(j)
    }
}

/// `rᵢ = yᵢ − f(xᵢ, β)` in dataset order.
pub fn residuals_from_dataset<T: Scalar>(
    model: AnalyticModel,
    data: &Dataset<T>,
    beta: &[T],
) -> Result<Vec<T>, EvalError> {
    model.check_beta(data, beta)?;
    data.x()
        .iter()
        .zip(data.y())
        .enumerate()
        .map(|(i, (x, &y))| {
            let f = model.value(x, beta);
            let r = y - f;
            if r.is_finite() {
                Ok(r)
            } else {
                Err(EvalError::NonFinite(i))
            }
        })
        .collect()
}

/// A model bound to its data, usable directly as a residual evaluator.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetModel<T> {
    pub model: AnalyticModel,
    pub data: Dataset<T>,
}

impl<T: Scalar> DatasetModel<T> {
    pub fn new(model: AnalyticModel, data: Dataset<T>) -> Result<Self, DatasetError> {
        let n = model.param_count(data.dim())?;
        if data.len() < n {
            return Err(DatasetError::Shape(format!(
                "{} data rows cannot determine {n} parameters",
                data.len()
            )));
        }
        Ok(Self { model, data })
    }

    pub fn param_count(&self) -> usize {
        self.model
            .param_count(self.data.dim())
            .expect("validated at construction")
    }

    pub fn residuals(&self, beta: &[T]) -> Result<Vec<T>, EvalError> {
        residuals_from_dataset(self.model, &self.data, beta)
    }

    pub fn jacobian(&self, beta: &[T]) -> Result<Matrix<T>, EvalError> {
        self.model.residual_jacobian(&self.data, beta)
    }
}

impl<T: Scalar> ResidualEvaluator<T> for DatasetModel<T> {
    fn evaluate(&mut self, params: &[T]) -> Result<Vec<T>, EvalError> {
        self.residuals(params)
    }
}
