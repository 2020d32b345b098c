//! The individual pieces of one damped quasi-Newton iteration.

use crate::linalg::{DenseSystem, Matrix};
use crate::scalar::{dot, dot_compensated, Scalar};

use super::types::{BroydenMatrix, NllsError, ParameterVector, SolverConfig, WeightMatrix};

pub const LAMBDA_FLOOR: f64 = 1e-12;
pub const LAMBDA_CAP: f64 = 1e12;
/// Squared step norms below this skip the secant update.
pub const STAGNANT_STEP_SQ: f64 = 1e-30;

fn check_weights<T: Scalar>(m: usize, w: Option<&WeightMatrix<T>>) -> Result<(), NllsError> {
    match w {
        Some(w) if w.len() != m => Err(NllsError::Dimension(format!(
            "{} weights for {m} residuals",
            w.len()
        ))),
        _ => Ok(()),
    }
}

/// `Σ wᵢ rᵢ²` with `wᵢ = 1` when unweighted.
pub(crate) fn weighted_sum_sq<T: Scalar>(r: &[T], w: Option<&WeightMatrix<T>>) -> T {
    match w {
        None => r.iter().map(|&ri| ri * ri).sum(),
        Some(w) => r
            .iter()
            .zip(w.diagonal())
            .map(|(&ri, &wi)| wi * ri * ri)
            .sum(),
    }
}

pub(crate) fn weighted_norm<T: Scalar>(r: &[T], w: Option<&WeightMatrix<T>>) -> T {
    weighted_sum_sq(r, w).sqrt()
}

/// Least-squares objective `½ Σ wᵢ rᵢ²`.
pub fn objective_value<T: Scalar>(r: &[T], w: Option<&WeightMatrix<T>>) -> Result<T, NllsError> {
    check_weights(r.len(), w)?;
    Ok(T::lit(0.5) * weighted_sum_sq(r, w))
}

/// Second starting point: each coordinate moved by `perturbation_rel` of its
/// value, or by `perturbation_abs` when it is exactly zero, then clamped into
/// bounds. If clamping undoes the move the opposite direction is used.
pub fn perturb_initial<T: Scalar>(beta0: &ParameterVector<T>, cfg: &SolverConfig<T>) -> ParameterVector<T> {
    let values = beta0
        .values()
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let forward = if v != T::zero() {
                v * (T::one() + cfg.perturbation_rel)
            } else {
                cfg.perturbation_abs
            };
            let moved = beta0.clamp_coordinate(j, forward);
            if moved != v {
                return moved;
            }
            let backward = if v != T::zero() {
                v * (T::one() - cfg.perturbation_rel)
            } else {
                -cfg.perturbation_abs
            };
            beta0.clamp_coordinate(j, backward)
        })
        .collect();
    beta0.with_values(values)
}

impl<T: Scalar> BroydenMatrix<T> {
    /// Rank-one secant update `B ← B + (t − B s) sᵀ / ‖s‖²`.
    ///
    /// `B s` and `‖s‖²` are accumulated in compensated arithmetic so the
    /// secant condition `B s = t` holds to a few ulps after the update.
    pub fn update(&mut self, s: &[T], t: &[T]) -> Result<(), NllsError> {
        let (m, n) = (self.rows(), self.cols());
        if s.len() != n || t.len() != m {
            return Err(NllsError::Dimension(format!(
                "secant pair ({}, {}) for a {m}x{n} matrix",
                s.len(),
                t.len()
            )));
        }
        let s_sq = dot_compensated(s, s);
        if !(s_sq >= T::lit(STAGNANT_STEP_SQ)) {
            return Err(NllsError::StagnantStep);
        }
        let coef: Vec<T> = (0..m)
            .map(|i| (t[i] - dot_compensated(self.matrix().row(i), s)) / s_sq)
            .collect();
        let b = self.matrix_mut();
        for (i, &ci) in coef.iter().enumerate() {
            for (j, &sj) in s.iter().enumerate() {
                b[(i, j)] = ci.mul_add(sj, b[(i, j)]);
            }
        }
        Ok(())
    }
}

/// Functional form of [`BroydenMatrix::update`].
pub fn broyden_update<T: Scalar>(
    b: &BroydenMatrix<T>,
    s: &[T],
    t: &[T],
) -> Result<BroydenMatrix<T>, NllsError> {
    let mut next = b.clone();
    next.update(s, t)?;
    Ok(next)
}

/// Damped normal equations `(BᵀWB + λ diag(BᵀWB)) p = −BᵀW r`, `W = I` when
/// unweighted.
pub fn assemble_lm_system<T: Scalar>(
    b: &BroydenMatrix<T>,
    r: &[T],
    lambda: T,
    w: Option<&WeightMatrix<T>>,
) -> Result<DenseSystem<T>, NllsError> {
    let (m, n) = (b.rows(), b.cols());
    if r.len() != m {
        return Err(NllsError::Dimension(format!("{} residuals for {m} rows", r.len())));
    }
    check_weights(m, w)?;
    if !(lambda >= T::zero()) {
        return Err(NllsError::config("lambda", "must be non-negative"));
    }
    let bm = b.matrix();
    let mut a = Matrix::zeros(n, n);
    let mut rhs = vec![T::zero(); n];
    for i in 0..m {
        let row = bm.row(i);
        let wi = w.map(|w| w.diagonal()[i]);
        for j in 0..n {
            let wb = match wi {
                Some(wi) => wi * row[j],
                None => row[j],
            };
            rhs[j] -= wb * r[i];
            for k in 0..=j {
                a[(j, k)] += wb * row[k];
            }
        }
    }
    for j in 0..n {
        for k in 0..j {
            a[(k, j)] = a[(j, k)];
        }
        let d = a[(j, j)];
        a[(j, j)] = d + lambda * d;
    }
    Ok(DenseSystem::new(a, rhs)?)
}

/// Solves the assembled step system for the direction `p`.
pub fn lm_step<T: Scalar>(sys: &DenseSystem<T>) -> Result<Vec<T>, NllsError> {
    debug_assert!(sys.is_symmetric(T::lit(1e-12).max(T::epsilon())));
    Ok(sys.solve()?)
}

/// Largest `α' ≤ alpha` keeping every bounded coordinate that would leave
/// its box at most half-way between its current value and the bound.
///
/// Coordinates already sitting on the bound they move towards are left to
/// the caller's clamping and impose no limit, so the result is always > 0.
pub fn constrain_step<T: Scalar>(beta: &ParameterVector<T>, p: &[T], alpha: T) -> T {
    let half = T::lit(0.5);
    let mut limited = alpha;
    for (j, (&bj, &pj)) in beta.values().iter().zip(p).enumerate() {
        let target = bj + alpha * pj;
        let gap = if pj > T::zero() {
            beta.upper(j).filter(|&u| target > u).map(|u| u - bj)
        } else if pj < T::zero() {
            beta.lower(j).filter(|&l| target < l).map(|l| l - bj)
        } else {
            None
        };
        if let Some(gap) = gap {
            if gap != T::zero() {
                limited = limited.min(half * gap / pj);
            }
        }
    }
    limited
}

/// Armijo test on residual norms given the slope `(BᵀWr)ᵀp`.
///
/// Also requires a strict decrease so a non-descent slope can never admit
/// an increase.
pub fn armijo_test<T: Scalar>(norm_old: T, norm_new: T, slope: T, alpha: T, c: T) -> bool {
    norm_new <= norm_old + c * alpha * slope && norm_new < norm_old
}

/// `‖r_new‖ ≤ ‖r_old‖ + c α (Bᵀ r_old)ᵀ p` with strict decrease.
pub fn armijo_holds<T: Scalar>(
    r_old: &[T],
    r_new: &[T],
    p: &[T],
    alpha: T,
    c: T,
    b: &BroydenMatrix<T>,
) -> bool {
    let grad = b.matrix().tr_mul_vec(r_old);
    let slope = dot(&grad, p);
    armijo_test(
        crate::scalar::norm2(r_old),
        crate::scalar::norm2(r_new),
        slope,
        alpha,
        c,
    )
}

/// `max_j |p_j| / max(|β_j|, 1)`
pub fn max_relative_change<T: Scalar>(p: &[T], beta: &[T]) -> T {
    p.iter()
        .zip(beta)
        .map(|(&pj, &bj)| pj.abs() / bj.abs().max(T::one()))
        .fold(T::zero(), T::max)
}

pub fn check_convergence<T: Scalar>(p: &[T], beta: &[T], cfg: &SolverConfig<T>) -> bool {
    if max_relative_change(p, beta) < cfg.epsilon {
        return true;
    }
    cfg.max_p_norm
        .is_some_and(|guard| crate::scalar::norm2(p) < guard)
}

/// Multiplicative damping schedule clamped to `[1e-12, 1e12]`.
pub fn update_lambda<T: Scalar>(lambda: T, accepted: bool, cfg: &SolverConfig<T>) -> T {
    let next = if accepted {
        lambda * cfg.lambda_decrease
    } else {
        lambda * cfg.lambda_increase
    };
    next.max(T::lit(LAMBDA_FLOOR)).min(T::lit(LAMBDA_CAP))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bm(rows: &[Vec<f64>]) -> BroydenMatrix<f64> {
        BroydenMatrix::from_matrix(Matrix::from_rows(rows).unwrap())
    }

    #[test]
    fn objective_examples() {
        assert_eq!(objective_value(&[0.0, 0.0, 0.0], None).unwrap(), 0.0);
        assert_eq!(objective_value(&[1.0, 2.0], None).unwrap(), 2.5);
        let w = WeightMatrix::new(vec![4.0, 1.0]).unwrap();
        assert_eq!(objective_value(&[1.0, 1.0], Some(&w)).unwrap(), 2.5);
    }

    #[test]
    fn objective_weight_mismatch() {
        let w = WeightMatrix::new(vec![1.0]).unwrap();
        assert!(matches!(
            objective_value(&[1.0, 1.0], Some(&w)),
            Err(NllsError::Dimension(_))
        ));
    }

    #[test]
    fn perturb_relative_and_absolute() {
        let cfg = SolverConfig::<f64>::default();
        let p = perturb_initial(&ParameterVector::new(vec![100.0, 2.0]), &cfg);
        assert_relative_eq!(p.values()[0], 101.0, max_relative = 1e-15);
        assert_relative_eq!(p.values()[1], 2.02, max_relative = 1e-15);
        let p = perturb_initial(&ParameterVector::zeros(2), &cfg);
        assert_eq!(p.values(), &[0.01, 0.01]);
        let p = perturb_initial(&ParameterVector::new(vec![-5.0]), &cfg);
        assert_relative_eq!(p.values()[0], -5.05, max_relative = 1e-15);
    }

    #[test]
    fn perturb_reverses_at_bound() {
        let cfg = SolverConfig::<f64>::default();
        let b = ParameterVector::with_bounds(vec![1.0, 0.0], vec![None, None], vec![Some(1.0), Some(0.0 + 1e-9)])
            .unwrap();
        let p = perturb_initial(&b, &cfg);
        assert_relative_eq!(p.values()[0], 0.99, max_relative = 1e-15);
        // Forward move clamped to 1e-9 still differs from the start.
        assert_eq!(p.values()[1], 1e-9);
        let b = ParameterVector::with_bounds(vec![0.0], vec![None], vec![Some(0.0)]).unwrap();
        assert_eq!(perturb_initial(&b, &cfg).values(), &[-0.01]);
    }

    #[test]
    fn broyden_examples() {
        let b = BroydenMatrix::<f64>::unit(2, 2);
        let next = broyden_update(&b, &[1.0, 0.0], &[2.0, 0.0]).unwrap();
        assert_eq!(next, bm(&[vec![2.0, 0.0], vec![0.0, 1.0]]));

        let b = BroydenMatrix::from_matrix(Matrix::<f64>::zeros(2, 2));
        let next = broyden_update(&b, &[0.0, 1.0], &[3.0, 4.0]).unwrap();
        assert_eq!(next, bm(&[vec![0.0, 3.0], vec![0.0, 4.0]]));
    }

    #[test]
    fn broyden_consistent_secant_is_noop() {
        let b = bm(&[vec![1.0, -2.0, 3.0], vec![4.0, 0.5, -1.0]]);
        let s = [2.0, 1.0, -1.0];
        let t = b.matrix().mul_vec(&s);
        assert_eq!(broyden_update(&b, &s, &t).unwrap(), b);
    }

    #[test]
    fn broyden_stagnant_step() {
        let b = BroydenMatrix::<f64>::unit(2, 2);
        assert_eq!(
            broyden_update(&b, &[1e-16, 0.0], &[1.0, 1.0]),
            Err(NllsError::StagnantStep)
        );
        assert_eq!(broyden_update(&b, &[0.0, 0.0], &[1.0, 1.0]), Err(NllsError::StagnantStep));
    }

    #[test]
    fn assemble_examples() {
        let b = BroydenMatrix::<f64>::unit(2, 2);
        let sys = assemble_lm_system(&b, &[1.0, 1.0], 0.0, None).unwrap();
        assert_eq!(sys.a, Matrix::identity(2));
        assert_eq!(sys.b, vec![-1.0, -1.0]);

        let sys = assemble_lm_system(&b, &[1.0, 1.0], 1.0, None).unwrap();
        assert_eq!(sys.a, Matrix::from_diagonal(&[2.0, 2.0]));
        assert_eq!(sys.b, vec![-1.0, -1.0]);

        let col = bm(&[vec![1.0], vec![2.0]]);
        let w = WeightMatrix::identity(2);
        let sys = assemble_lm_system(&col, &[1.0, 1.0], 0.0, Some(&w)).unwrap();
        assert_eq!(sys.a.as_slice(), &[5.0]);
        assert_eq!(sys.b, vec![-3.0]);
    }

    #[test]
    fn assemble_weighted_matches_explicit_products() {
        let b = bm(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![3.0, 1.0]]);
        let r = [0.5, -2.0, 1.0];
        let w = WeightMatrix::new(vec![2.0, 0.5, 4.0]).unwrap();
        let sys = assemble_lm_system(&b, &r, 0.25, Some(&w)).unwrap();
        let bt = b.matrix().transpose();
        let wm = Matrix::from_diagonal(w.diagonal());
        let btwb = bt.mul(&wm).mul(b.matrix());
        for j in 0..2 {
            for k in 0..2 {
                let damp = if j == k { 0.25 * btwb[(j, j)] } else { 0.0 };
                assert_relative_eq!(sys.a[(j, k)], btwb[(j, k)] + damp, max_relative = 1e-15);
            }
        }
        let btwr = bt.mul(&wm).mul_vec(&r);
        for j in 0..2 {
            assert_relative_eq!(sys.b[j], -btwr[j], max_relative = 1e-15);
        }
    }

    #[test]
    fn lm_step_examples() {
        let sys = DenseSystem::new(Matrix::<f64>::identity(2), vec![-1.0, -1.0]).unwrap();
        assert_eq!(lm_step(&sys).unwrap(), vec![-1.0, -1.0]);
        let sys = DenseSystem::new(Matrix::from_diagonal(&[2.0, 2.0]), vec![-1.0, -1.0]).unwrap();
        assert_eq!(lm_step(&sys).unwrap(), vec![-0.5, -0.5]);
        let sys = DenseSystem::new(Matrix::from_diagonal(&[5.0]), vec![-3.0]).unwrap();
        assert_relative_eq!(lm_step(&sys).unwrap()[0], -0.6, max_relative = 1e-15);
    }

    #[test]
    fn lm_step_singular() {
        let sys =
            DenseSystem::new(Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap(), vec![1.0, 2.0])
                .unwrap();
        assert_eq!(lm_step(&sys), Err(NllsError::SingularSystem));
    }

    #[test]
    fn constrain_step_examples() {
        let bounded =
            ParameterVector::with_bounds(vec![0.5], vec![Some(0.0)], vec![Some(1.0)]).unwrap();
        assert_relative_eq!(constrain_step(&bounded, &[10.0], 1.0), 0.025, max_relative = 1e-15);
        assert_eq!(constrain_step(&ParameterVector::new(vec![0.5]), &[10.0], 1.0), 1.0);
        assert_eq!(constrain_step(&bounded, &[0.1], 1.0), 1.0);
        assert_relative_eq!(constrain_step(&bounded, &[-10.0], 1.0), 0.025, max_relative = 1e-15);
        assert_eq!(constrain_step(&bounded, &[0.0], 1.0), 1.0);
    }

    #[test]
    fn constrain_step_ignores_active_bound() {
        let at_bound =
            ParameterVector::with_bounds(vec![1.0, 0.0], vec![None, None], vec![Some(1.0), None]).unwrap();
        assert_eq!(constrain_step(&at_bound, &[1.0, 1.0], 1.0), 1.0);
    }

    #[test]
    fn armijo_examples() {
        let b = BroydenMatrix::<f64>::unit(2, 2);
        let r_old = [6.0, 8.0];
        assert!(armijo_holds(&r_old, &[0.6, 0.8], &[-1.0, -1.0], 1.0, 1e-4, &b));
        assert!(!armijo_holds(&r_old, &[8.0, 6.0], &[-1.0, -1.0], 1.0, 1e-4, &b));

        // bound = √2 + 0.5·1·(−2)
        let bound = 2f64.sqrt() - 1.0;
        let r_old = [1.0, 1.0];
        let p = [-1.0, -1.0];
        let just_below = [bound * 0.999 / 2f64.sqrt(); 2];
        let just_above = [bound * 1.001 / 2f64.sqrt(); 2];
        assert!(armijo_holds(&r_old, &just_below, &p, 1.0, 0.5, &b));
        assert!(!armijo_holds(&r_old, &just_above, &p, 1.0, 0.5, &b));
    }

    #[test]
    fn armijo_rejects_increase_on_ascent_slope() {
        let b = BroydenMatrix::<f64>::unit(1, 1);
        assert!(!armijo_holds(&[1.0], &[1.00001], &[1.0], 1.0, 0.5, &b));
    }

    #[test]
    fn convergence_examples() {
        let cfg = SolverConfig::<f64>::default();
        assert!(check_convergence(&[1e-5, 1e-5], &[1.0, 1.0], &cfg));
        assert!(!check_convergence(&[0.1, 1e-5], &[1.0, 1.0], &cfg));
        assert!(check_convergence(&[1e-4], &[0.0], &cfg));
    }

    #[test]
    fn convergence_relative_for_large_parameters() {
        let cfg = SolverConfig::<f64>::default();
        assert!(check_convergence(&[0.5], &[1000.0], &cfg));
        assert!(!check_convergence(&[2.0], &[1000.0], &cfg));
        // Strict inequality.
        assert!(!check_convergence(&[1e-3], &[1.0], &cfg));
    }

    #[test]
    fn convergence_p_norm_guard() {
        let cfg = SolverConfig::<f64> {
            max_p_norm: Some(1.0),
            ..SolverConfig::default()
        };
        assert!(check_convergence(&[0.5, 0.5], &[1.0, 1.0], &cfg));
        assert!(!check_convergence(&[0.9, 0.9], &[1.0, 1.0], &cfg));
    }

    #[test]
    fn lambda_schedule() {
        let cfg = SolverConfig::<f64>::default();
        assert_relative_eq!(update_lambda(0.01, true, &cfg), 0.001, max_relative = 1e-15);
        assert_relative_eq!(update_lambda(0.01, false, &cfg), 0.1, max_relative = 1e-15);
        assert_eq!(update_lambda(1e12, false, &cfg), 1e12);
        assert_eq!(update_lambda(1e-12, true, &cfg), 1e-12);
        assert_eq!(update_lambda(0.0, false, &cfg), 1e-12);
    }
}
