//! Finite-difference Jacobians and exhaustive grid minimization.
//!
//! Both are independent of the secant machinery: the solver can use
//! [`fd_jacobian`] to refresh its Jacobian estimate periodically, and tests
//! use both as oracles.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::{EvalError, ResidualEvaluator};
use crate::linalg::Matrix;
use crate::nlls::{NllsError, ParameterVector, WeightMatrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FdScheme {
    Forward,
    Central,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdConfig<T> {
    pub scheme: FdScheme,
    pub h_rel: T,
    /// Step used for parameters at exactly zero.
    pub h_abs: T,
}

impl<T: Scalar> Default for FdConfig<T> {
    fn default() -> Self {
        Self {
            scheme: FdScheme::Central,
            h_rel: T::lit(1e-6),
            h_abs: T::lit(1e-8),
        }
    }
}

impl<T: Scalar> FdConfig<T> {
    pub fn validate(&self) -> Result<(), NllsError> {
        if !(self.h_rel > T::zero() && self.h_rel.is_finite()) {
            return Err(NllsError::config("h_rel", "must be positive"));
        }
        if !(self.h_abs > T::zero() && self.h_abs.is_finite()) {
            return Err(NllsError::config("h_abs", "must be positive"));
        }
        Ok(())
    }

    /// `h_j = h_rel · max(|β_j|, h_abs / h_rel)`
    pub fn step(&self, beta_j: T) -> T {
        self.h_rel * beta_j.abs().max(self.h_abs / self.h_rel)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FdError {
    /// `column` is `None` for the evaluation at the unperturbed point.
    #[error("evaluation failed while differencing column {column:?}: {source}")]
    Evaluator {
        column: Option<usize>,
        #[source]
        source: EvalError,
    },
    #[error("invalid request: {0}")]
    Config(String),
}

impl FdError {
    pub fn eval_error(&self) -> Option<&EvalError> {
        match self {
            FdError::Evaluator { source, .. } => Some(source),
            FdError::Config(_) => None,
        }
    }
}

struct Probe<'a, T, E: ?Sized> {
    evaluator: &'a mut E,
    m: Option<usize>,
    _t: std::marker::PhantomData<T>,
}

impl<T: Scalar, E: ResidualEvaluator<T> + ?Sized> Probe<'_, T, E> {
    fn eval(&mut self, x: &[T], column: Option<usize>) -> Result<Vec<T>, FdError> {
        let wrap = |source| FdError::Evaluator { column, source };
        let r = self.evaluator.evaluate(x).map_err(wrap)?;
        match self.m {
            Some(m) if m != r.len() => {
                return Err(wrap(EvalError::LengthChanged {
                    expected: m,
                    found: r.len(),
                }))
            }
            _ => self.m = Some(r.len()),
        }
        if let Some(i) = r.iter().position(|v| !v.is_finite()) {
            return Err(wrap(EvalError::NonFinite(i)));
        }
        Ok(r)
    }
}

/// Column-wise finite-difference Jacobian of the residuals, `∂r/∂β`.
///
/// Forward differences cost `n` evaluations beyond `r(β)`, central ones `2n`.
/// A probe that would leave the parameter box is replaced by a one-sided
/// difference on the feasible side.
pub fn fd_jacobian<T: Scalar, E: ResidualEvaluator<T> + ?Sized>(
    evaluator: &mut E,
    beta: &ParameterVector<T>,
    cfg: &FdConfig<T>,
) -> Result<Matrix<T>, FdError> {
    fd_jacobian_with_base(evaluator, beta, None, cfg)
}

/// As [`fd_jacobian`], reusing an already known `r(β)`.
pub fn fd_jacobian_with_base<T: Scalar, E: ResidualEvaluator<T> + ?Sized>(
    evaluator: &mut E,
    beta: &ParameterVector<T>,
    base: Option<&[T]>,
    cfg: &FdConfig<T>,
) -> Result<Matrix<T>, FdError> {
    cfg.validate().map_err(|e| FdError::Config(e.to_string()))?;
    let n = beta.len();
    let mut probe = Probe {
        evaluator,
        m: base.map(<[T]>::len),
        _t: std::marker::PhantomData,
    };
    let mut base: Option<Vec<T>> = base.map(<[T]>::to_vec);
    let mut columns: Vec<Vec<T>> = Vec::with_capacity(n);

    for j in 0..n {
        let bj = beta.values()[j];
        let h = cfg.step(bj);
        let plus = bj + h;
        let minus = bj - h;
        let plus_ok = beta.upper(j).is_none_or(|u| plus <= u);
        let minus_ok = beta.lower(j).is_none_or(|l| minus >= l);
        let at = |v: T| {
            let mut x = beta.values().to_vec();
            x[j] = v;
            x
        };

        let column = if cfg.scheme == FdScheme::Central && plus_ok && minus_ok {
            let rp = probe.eval(&at(plus), Some(j))?;
            let rm = probe.eval(&at(minus), Some(j))?;
            let width = plus - minus;
            rp.iter().zip(&rm).map(|(&a, &b)| (a - b) / width).collect()
        } else {
            if base.is_none() {
                base = Some(probe.eval(beta.values(), None)?);
            }
            let r0 = base.as_deref().unwrap();
            let other = if plus_ok || !minus_ok { plus } else { minus };
            let r1 = probe.eval(&at(other), Some(j))?;
            let width = other - bj;
            r1.iter().zip(r0).map(|(&a, &b)| (a - b) / width).collect()
        };
        columns.push(column);
    }

    let m = probe.m.unwrap_or(0);
    let mut jac = Matrix::zeros(m, n);
    for (j, col) in columns.iter().enumerate() {
        jac.set_column(j, col);
    }
    Ok(jac)
}

/// Result of [`brute_force_minimum`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridMinimum<T> {
    pub beta: Vec<T>,
    pub objective: T,
    pub evaluations: usize,
}

/// Exhaustive search of `½ Σ wᵢ rᵢ²` over a regular grid with `grid_points`
/// nodes per axis spanning `[lower_j, upper_j]`.
///
/// Nodes are visited with the first axis varying slowest; on ties the
/// earliest node wins. Nodes where evaluation fails are skipped.
pub fn brute_force_minimum<T: Scalar, E: ResidualEvaluator<T> + ?Sized>(
    evaluator: &mut E,
    lower: &[T],
    upper: &[T],
    grid_points: usize,
    weights: Option<&WeightMatrix<T>>,
) -> Result<GridMinimum<T>, FdError> {
    let n = lower.len();
    if n == 0 || n > 3 {
        return Err(FdError::Config(format!(
            "grid search supports 1 to 3 parameters, got {n}"
        )));
    }
    if upper.len() != n {
        return Err(FdError::Config("lower and upper bounds differ in length".into()));
    }
    if grid_points < 2 {
        return Err(FdError::Config("at least 2 grid points per axis are required".into()));
    }
    if (0..n).any(|j| !(lower[j].is_finite() && upper[j].is_finite() && lower[j] <= upper[j])) {
        return Err(FdError::Config("grid box must be finite with lower <= upper".into()));
    }

    let denom = T::from_usize(grid_points - 1).unwrap();
    let axis = |j: usize, i: usize| {
        lower[j] + (upper[j] - lower[j]) * T::from_usize(i).unwrap() / denom
    };
    let total = grid_points.pow(n as u32);
    let mut best: Option<(Vec<T>, T)> = None;
    let mut last_error = None;
    let mut node = vec![T::zero(); n];

    for flat in 0..total {
        let mut rem = flat;
        for j in (0..n).rev() {
            node[j] = axis(j, rem % grid_points);
            rem /= grid_points;
        }
        let r = match evaluator.evaluate(&node) {
            Ok(r) => r,
            Err(e) => {
                last_error = Some(e);
                continue;
            }
        };
        if let Some(w) = weights {
            if w.len() != r.len() {
                return Err(FdError::Config(format!(
                    "{} weights for {} residuals",
                    w.len(),
                    r.len()
                )));
            }
        }
        let s = crate::nlls::objective_value(&r, weights)
            .map_err(|e| FdError::Config(e.to_string()))?;
        if !s.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|(_, b)| s < *b) {
            best = Some((node.clone(), s));
        }
    }

    match best {
        Some((beta, objective)) => Ok(GridMinimum {
            beta,
            objective,
            evaluations: total,
        }),
        None => Err(FdError::Evaluator {
            column: None,
            source: last_error.unwrap_or(EvalError::NonFinite(0)),
        }),
    }
}
