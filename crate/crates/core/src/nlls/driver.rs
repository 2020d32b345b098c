use crate::evaluator::{EvalError, ResidualEvaluator};
use crate::fd::fd_jacobian_with_base;
use crate::scalar::{norm2, Scalar};

use super::line_search::{backtrack, ArmijoReference};
use super::step::{
    assemble_lm_system, check_convergence, lm_step, max_relative_change, perturb_initial,
    update_lambda, weighted_norm, LAMBDA_CAP,
};
use super::types::{
    BroydenMatrix, EvaluatorFailure, IterationRecord, NllsError, ParameterVector, RunReport,
    SolverConfig, Status, WeightMatrix,
};

/// Counts calls and enforces a fixed, finite residual vector.
struct Guarded<'a, E: ?Sized> {
    inner: &'a mut E,
    m: Option<usize>,
    count: usize,
}

impl<T: Scalar, E: ResidualEvaluator<T> + ?Sized> ResidualEvaluator<T> for Guarded<'_, E> {
    fn evaluate(&mut self, params: &[T]) -> Result<Vec<T>, EvalError> {
        self.count += 1;
        let r = self.inner.evaluate(params)?;
        match self.m {
            Some(m) if m != r.len() => {
                return Err(EvalError::LengthChanged {
                    expected: m,
                    found: r.len(),
                })
            }
            Some(_) => {}
            None => self.m = Some(r.len()),
        }
        if let Some(i) = r.iter().position(|v| !v.is_finite()) {
            return Err(EvalError::NonFinite(i));
        }
        Ok(r)
    }
}

struct Iterate<T> {
    beta: Vec<T>,
    r: Vec<T>,
}

/// A configured solver. Immutable during a run; one instance may serve
/// many sequential runs.
#[derive(Debug, Clone)]
pub struct Solver<T> {
    config: SolverConfig<T>,
    weights: Option<WeightMatrix<T>>,
}

impl<T: Scalar> Solver<T> {
    pub fn new(config: SolverConfig<T>) -> Result<Self, NllsError> {
        config.validate()?;
        Ok(Self {
            config,
            weights: None,
        })
    }

    pub fn with_weights(mut self, weights: Option<WeightMatrix<T>>) -> Self {
        self.weights = weights;
        self
    }

    pub fn config(&self) -> &SolverConfig<T> {
        &self.config
    }

    pub fn weights(&self) -> Option<&WeightMatrix<T>> {
        self.weights.as_ref()
    }

    pub fn run<E: ResidualEvaluator<T> + ?Sized>(
        &self,
        evaluator: &mut E,
        beta0: &ParameterVector<T>,
    ) -> Result<RunReport<T>, NllsError> {
        self.run_observed(evaluator, beta0, &mut |_| {})
    }

    /// Runs the optimization, calling `observer` once per completed pass.
    ///
    /// Configuration problems (including `m < n` or a weight count that does
    /// not match `m`) are returned as errors; everything that happens once
    /// the run is underway is reported through [`RunReport::status`].
    pub fn run_observed<E: ResidualEvaluator<T> + ?Sized>(
        &self,
        evaluator: &mut E,
        beta0: &ParameterVector<T>,
        observer: &mut dyn FnMut(&IterationRecord<T>),
    ) -> Result<RunReport<T>, NllsError> {
        let cfg = &self.config;
        let w = self.weights.as_ref();
        beta0.validate()?;
        let n = beta0.len();
        let mut ev = Guarded {
            inner: evaluator,
            m: None,
            count: 0,
        };
        let mut records: Vec<IterationRecord<T>> = Vec::new();

        let fail = |iteration: usize,
                    error: EvalError,
                    at: &[T],
                    r: Option<&[T]>,
                    records: Vec<IterationRecord<T>>,
                    count: usize,
                    b: Option<&BroydenMatrix<T>>,
                    s: Option<Vec<T>>| RunReport {
            status: Status::EvaluatorFailure,
            final_beta: beta0.with_values(at.to_vec()),
            final_objective: r.map_or(T::max_value(), |r| half_sq(r, w)),
            iterations: records,
            evaluation_count: count,
            failure: Some(EvaluatorFailure { iteration, error }),
            broyden: b.map(|b| b.matrix().clone()),
            last_secant_step: s,
        };

        // Starting point and its perturbation.
        let r0 = match ev.evaluate(beta0.values()) {
            Ok(r) => r,
            Err(e) => return Ok(fail(0, e, beta0.values(), None, records, ev.count, None, None)),
        };
        let m = r0.len();
        if m < n {
            return Err(NllsError::Dimension(format!(
                "{m} residuals for {n} parameters: the problem must not be under-determined"
            )));
        }
        if let Some(w) = w {
            if w.len() != m {
                return Err(NllsError::Dimension(format!("{} weights for {m} residuals", w.len())));
            }
        }
        if cfg.verify_determinism {
            let again = match ev.evaluate(beta0.values()) {
                Ok(r) => r,
                Err(e) => return Ok(fail(0, e, beta0.values(), Some(&r0), records, ev.count, None, None)),
            };
            if let Some(i) = (0..m).find(|&i| differs(r0[i], again[i])) {
                let e = EvalError::NonDeterministic(i);
                return Ok(fail(0, e, beta0.values(), Some(&r0), records, ev.count, None, None));
            }
        }

        let beta1 = perturb_initial(beta0, cfg);
        let r1 = match ev.evaluate(beta1.values()) {
            Ok(r) => r,
            Err(e) => return Ok(fail(0, e, beta0.values(), Some(&r0), records, ev.count, None, None)),
        };

        let mut b = BroydenMatrix::unit(m, n);
        let mut lambda = cfg.lambda_init;
        let mut cur = Iterate {
            beta: beta1.values().to_vec(),
            r: r1,
        };
        let mut pending = Some(secant_pair(beta0.values(), &r0, &cur.beta, &cur.r));
        let mut last_s: Option<Vec<T>> = None;
        let mut status = Status::MaxIterations;

        for k in 1..=cfg.max_iterations {
            let current = beta0.with_values(cur.beta.clone());

            // Jacobian estimate for this pass.
            let mut fd_refreshed = false;
            let mut secant_skipped = false;
            if cfg.fd_refresh_period.is_some_and(|period| k % period == 0) {
                match fd_jacobian_with_base(&mut ev, &current, Some(&cur.r), &cfg.fd) {
                    Ok(j) => {
                        b = BroydenMatrix::from_matrix(j);
                        fd_refreshed = true;
                        last_s = None;
                    }
                    Err(e) => {
                        let e = e.eval_error().cloned().unwrap_or(EvalError::NonFinite(0));
                        return Ok(fail(k, e, &cur.beta, Some(&cur.r), records, ev.count, Some(&b), last_s));
                    }
                }
            } else if let Some((s, t)) = pending.take() {
                match b.update(&s, &t) {
                    Ok(()) => last_s = Some(s),
                    Err(NllsError::StagnantStep) => secant_skipped = true,
                    Err(e) => return Err(e),
                }
            }

            // Damped step; a singular system is retried with more damping.
            let (p, sys) = loop {
                let sys = assemble_lm_system(&b, &cur.r, lambda, w)?;
                match lm_step(&sys) {
                    Ok(p) => break (Some(p), sys),
                    Err(NllsError::SingularSystem) if lambda < T::lit(LAMBDA_CAP) => {
                        lambda = update_lambda(lambda, false, cfg);
                    }
                    Err(NllsError::SingularSystem) => break (None, sys),
                    Err(e) => return Err(e),
                }
            };
            let condition = cfg.diagnostics.then(|| sys.condition_estimate());
            let norm_cur = weighted_norm(&cur.r, w);
            let base_record = IterationRecord {
                k,
                beta: cur.beta.clone(),
                residual_norm: norm_cur,
                objective: T::lit(0.5) * norm_cur * norm_cur,
                lambda,
                alpha: T::zero(),
                p_norm: T::zero(),
                max_rel_change: T::max_value(),
                armijo_satisfied: false,
                secant_skipped,
                fd_refreshed,
                condition: condition.filter(|c| c.is_finite()),
                evaluations: ev.count,
            };

            let Some(p) = p else {
                // No usable direction even at maximal damping.
                observer(&base_record);
                records.push(base_record);
                status = Status::LineSearchFloor;
                break;
            };
            let p_norm = norm2(&p);
            let reference = ArmijoReference {
                norm: norm_cur,
                slope: -crate::scalar::dot(&sys.b, &p),
            };

            let outcome = match backtrack(&current, &p, reference, cfg, w, &mut ev) {
                Ok(o) => o,
                Err(e) => {
                    return Ok(fail(k, e, &cur.beta, Some(&cur.r), records, ev.count, Some(&b), last_s));
                }
            };

            if outcome.armijo_satisfied {
                let rel = max_relative_change(&p, &outcome.beta);
                let record = IterationRecord {
                    beta: outcome.beta.clone(),
                    residual_norm: outcome.norm,
                    objective: T::lit(0.5) * outcome.norm * outcome.norm,
                    alpha: outcome.alpha,
                    p_norm,
                    max_rel_change: rel,
                    armijo_satisfied: true,
                    evaluations: ev.count,
                    ..base_record
                };
                observer(&record);
                records.push(record);
                lambda = update_lambda(lambda, true, cfg);
                pending = Some(secant_pair(&cur.beta, &cur.r, &outcome.beta, &outcome.residuals));
                cur = Iterate {
                    beta: outcome.beta,
                    r: outcome.residuals,
                };
                if check_convergence(&p, &cur.beta, cfg) {
                    status = Status::Converged;
                    break;
                }
            } else {
                // The iterate stays put. The best rejected trial still carries
                // secant information for the next Broyden update.
                let rel = max_relative_change(&p, &cur.beta);
                let record = IterationRecord {
                    alpha: outcome.alpha,
                    p_norm,
                    max_rel_change: rel,
                    evaluations: ev.count,
                    ..base_record
                };
                observer(&record);
                records.push(record);
                if check_convergence(&p, &cur.beta, cfg) {
                    status = Status::Converged;
                    break;
                }
                if lambda >= T::lit(LAMBDA_CAP) {
                    status = Status::LineSearchFloor;
                    break;
                }
                lambda = update_lambda(lambda, false, cfg);
                pending = Some(secant_pair(&cur.beta, &cur.r, &outcome.beta, &outcome.residuals));
            }
        }

        Ok(RunReport {
            status,
            final_objective: half_sq(&cur.r, w),
            final_beta: beta0.with_values(cur.beta),
            iterations: records,
            evaluation_count: ev.count,
            failure: None,
            broyden: Some(b.into_matrix()),
            last_secant_step: last_s,
        })
    }
}

fn half_sq<T: Scalar>(r: &[T], w: Option<&WeightMatrix<T>>) -> T {
    let n = weighted_norm(r, w);
    T::lit(0.5) * n * n
}

fn secant_pair<T: Scalar>(beta_old: &[T], r_old: &[T], beta_new: &[T], r_new: &[T]) -> (Vec<T>, Vec<T>) {
    let s = beta_new.iter().zip(beta_old).map(|(&a, &b)| a - b).collect();
    let t = r_new.iter().zip(r_old).map(|(&a, &b)| a - b).collect();
    (s, t)
}

/// True when two evaluations of the same point disagree, including the sign of zero.
fn differs<T: Scalar>(a: T, b: T) -> bool {
    !(a == b && a.is_sign_negative() == b.is_sign_negative())
}

/// Runs one optimization with the given configuration and optional weights.
pub fn optimize<T: Scalar, E: ResidualEvaluator<T> + ?Sized>(
    evaluator: &mut E,
    beta0: &ParameterVector<T>,
    cfg: &SolverConfig<T>,
    weights: Option<&WeightMatrix<T>>,
) -> Result<RunReport<T>, NllsError> {
    Solver::new(cfg.clone())?
        .with_weights(weights.cloned())
        .run(evaluator, beta0)
}
