use crate::evaluator::{EvalError, ResidualEvaluator};
use crate::scalar::{dot, Scalar};

use super::step::{armijo_test, constrain_step, weighted_norm};
use super::types::{BroydenMatrix, ParameterVector, SolverConfig, WeightMatrix};

/// Residual norm at the current iterate and the directional derivative
/// `(BᵀW r)ᵀ p` the Armijo test compares against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmijoReference<T> {
    pub norm: T,
    pub slope: T,
}

impl<T: Scalar> ArmijoReference<T> {
    pub fn new(
        r_old: &[T],
        b: &BroydenMatrix<T>,
        p: &[T],
        w: Option<&WeightMatrix<T>>,
    ) -> Self {
        let wr: Vec<T> = match w {
            Some(w) => r_old.iter().zip(w.diagonal()).map(|(&r, &w)| w * r).collect(),
            None => r_old.to_vec(),
        };
        Self {
            norm: weighted_norm(r_old, w),
            slope: dot(&b.matrix().tr_mul_vec(&wr), p),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchOutcome<T> {
    pub alpha: T,
    /// Trial point `β + α p`, clamped into bounds.
    pub beta: Vec<T>,
    pub residuals: Vec<T>,
    pub norm: T,
    pub armijo_satisfied: bool,
    pub evaluations: usize,
}

/// Step-halving search from the bound-constrained full step.
///
/// Trial lengths are `α₀, α₀/2, …` down to the last one not below
/// `alpha_min`. The first trial passing the Armijo test is returned. If none
/// does, the trial with the smallest residual norm (earliest on ties) is
/// returned with `armijo_satisfied = false`. Recoverable evaluation failures
/// count as failed trials; the last one is returned if every trial failed.
pub fn backtrack<T: Scalar, E: ResidualEvaluator<T> + ?Sized>(
    beta: &ParameterVector<T>,
    p: &[T],
    reference: ArmijoReference<T>,
    cfg: &SolverConfig<T>,
    weights: Option<&WeightMatrix<T>>,
    evaluator: &mut E,
) -> Result<LineSearchOutcome<T>, EvalError> {
    let mut alpha = constrain_step(beta, p, T::one());
    let mut best: Option<LineSearchOutcome<T>> = None;
    let mut last_error = None;
    let mut evaluations = 0;

    loop {
        let mut x: Vec<T> = beta
            .values()
            .iter()
            .zip(p)
            .map(|(&b, &pj)| b + alpha * pj)
            .collect();
        beta.clamp(&mut x);
        evaluations += 1;
        match evaluator.evaluate(&x) {
            Ok(r) => {
                let norm = weighted_norm(&r, weights);
                let satisfied = armijo_test(reference.norm, norm, reference.slope, alpha, cfg.armijo_c);
                if satisfied || best.as_ref().is_none_or(|b| norm < b.norm) {
                    best = Some(LineSearchOutcome {
                        alpha,
                        beta: x,
                        residuals: r,
                        norm,
                        armijo_satisfied: satisfied,
                        evaluations,
                    });
                }
                if satisfied {
                    break;
                }
            }
            Err(e) if e.is_fatal() => return Err(e),
            Err(e) => last_error = Some(e),
        }
        alpha = alpha * T::lit(0.5);
        if alpha < cfg.alpha_min {
            break;
        }
    }

    match best {
        Some(mut out) => {
            out.evaluations = evaluations;
            Ok(out)
        }
        None => Err(last_error.unwrap_or(EvalError::NonFinite(0))),
    }
}
