mod common;

use broyden_lm::fd::{brute_force_minimum, fd_jacobian, FdConfig, FdScheme};
use broyden_lm::linalg::Matrix;
use broyden_lm::{
    optimize, AnalyticModel, Dataset, DatasetModel, EvalError, ParameterVector, SolverConfig, Status,
};
use common::{builtin_problems, grid, rng, synth};
use proptest::prelude::*;
use rand::Rng;

/// `∂r/∂β` written out independently of the library's model code.
fn exact_jacobian(model: AnalyticModel, data: &Dataset<f64>, b: &[f64]) -> Matrix<f64> {
    let rows: Vec<Vec<f64>> = data
        .x()
        .iter()
        .map(|x| match model {
            AnalyticModel::Linear => std::iter::once(-1.0).chain(x.iter().map(|v| -v)).collect(),
            AnalyticModel::Polynomial { degree } => (0..=degree).map(|k| -x[0].powi(k as i32)).collect(),
            AnalyticModel::ExponentialDecay => {
                let e = (-b[1] * x[0]).exp();
                vec![-e, b[0] * x[0] * e]
            }
            AnalyticModel::Logistic => {
                let u = (-b[1] * (x[0] - b[2])).exp();
                let d = 1.0 + u;
                vec![-1.0 / d, -b[0] * (x[0] - b[2]) * u / (d * d), b[0] * b[1] * u / (d * d)]
            }
        })
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

fn max_abs_diff(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn central() -> FdConfig<f64> {
    FdConfig {
        scheme: FdScheme::Central,
        ..FdConfig::default()
    }
}

fn models_with_data() -> Vec<(AnalyticModel, Dataset<f64>)> {
    let xs = grid(12, -1.0, 3.0);
    let plane = Dataset::new(
        xs.iter().map(|&x| vec![x, (x * 1.7).sin()]).collect(),
        xs.iter().map(|x| 0.3 * x).collect(),
        None,
    )
    .unwrap();
    vec![
        (AnalyticModel::Linear, synth(AnalyticModel::Linear, &xs, &[1.0, 2.0], 0.1, 1)),
        (AnalyticModel::Linear, plane),
        (AnalyticModel::Polynomial { degree: 3 }, synth(AnalyticModel::Polynomial { degree: 3 }, &xs, &[1.0, 0.5, -0.2, 0.1], 0.1, 2)),
        (AnalyticModel::ExponentialDecay, synth(AnalyticModel::ExponentialDecay, &xs, &[2.0, 0.8], 0.1, 3)),
        (AnalyticModel::Logistic, synth(AnalyticModel::Logistic, &xs, &[3.0, 1.5, 1.0], 0.1, 4)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn central_differences_match_exact_jacobians(seed in any::<u64>()) {
        let mut r = rng(seed);
        for (model, data) in models_with_data() {
            let n = model.param_count(data.dim()).unwrap();
            let beta: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
            let mut ev = DatasetModel::new(model, data.clone()).unwrap();
            let fd = fd_jacobian(&mut ev, &ParameterVector::new(beta.clone()), &central()).unwrap();
            let exact = exact_jacobian(model, &data, &beta);
            let err = max_abs_diff(&fd, &exact);
            prop_assert!(err <= 1e-6, "{}: {err:e} at {beta:?}", model.name());
            prop_assert!(max_abs_diff(&ev.jacobian(&beta).unwrap(), &exact) <= 1e-12);
        }
    }
}

#[test]
fn linear_example_is_matched_tightly() {
    let data = Dataset::from_xy(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
    let mut ev = DatasetModel::new(AnalyticModel::Linear, data).unwrap();
    let j = fd_jacobian(&mut ev, &ParameterVector::new(vec![0.3, -0.7]), &central()).unwrap();
    let want = Matrix::from_rows(&[vec![-1.0, 0.0], vec![-1.0, -1.0], vec![-1.0, -2.0]]).unwrap();
    assert!(max_abs_diff(&j, &want) <= 1e-9);
}

fn power_model(k: i32) -> impl FnMut(&[f64]) -> Result<Vec<f64>, EvalError> {
    move |b: &[f64]| Ok(vec![1.0 - b[0].powi(k)])
}

fn fd_at(ev: &mut impl FnMut(&[f64]) -> Result<Vec<f64>, EvalError>, beta: f64, h_rel: f64) -> f64 {
    let cfg = FdConfig {
        scheme: FdScheme::Central,
        h_rel,
        h_abs: 1e-8,
    };
    fd_jacobian(ev, &ParameterVector::new(vec![beta]), &cfg).unwrap()[(0, 0)]
}

#[test]
fn quadratic_derivative_is_resolved_to_roundoff() {
    // Central differences carry no truncation error on a quadratic, so every
    // step size is limited by round-off alone.
    let mut ev = power_model(2);
    for h_rel in [1e-2, 5e-3, 2.5e-3, 1e-4, 1e-6] {
        let err = (fd_at(&mut ev, 3.0, h_rel) + 6.0).abs();
        assert!(err <= 1e-8, "h_rel {h_rel}: {err:e}");
    }
}

#[test]
fn central_error_is_second_order() {
    let mut ev = power_model(3);
    // d/dβ (1 − β³) at β = 3 is −27.
    let errs: Vec<f64> = (0..6)
        .map(|i| (fd_at(&mut ev, 3.0, 1e-2 / 2f64.powi(i)) + 27.0).abs())
        .collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((4.0 / 1.5..=4.0 * 1.5).contains(&ratio), "{errs:?}");
    }
}

#[test]
fn grid_example_recovers_linear_coefficients() {
    let data = Dataset::from_xy(&[0.0, 1.0], &[1.0, 3.0]).unwrap();
    let mut ev = DatasetModel::new(AnalyticModel::Linear, data).unwrap();
    let g = brute_force_minimum(&mut ev, &[0.0, 0.0], &[4.0, 4.0], 41, None).unwrap();
    assert_eq!(g.beta, vec![1.0, 2.0]);
    assert_eq!(g.objective, 0.0);
}

#[test]
fn optimizer_never_loses_to_the_grid() {
    let xs = grid(20, 0.0, 3.0);
    let problems = [
        (AnalyticModel::Linear, [-0.5, 0.75], [-2.0, -1.0], [2.0, 3.0]),
        (AnalyticModel::Polynomial { degree: 1 }, [1.0, 2.0], [0.0, 0.0], [4.0, 4.0]),
        (AnalyticModel::ExponentialDecay, [2.5, 1.3], [0.0, 0.0], [5.0, 3.0]),
    ];
    for (i, (model, truth, lo, hi)) in problems.into_iter().enumerate() {
        let data = synth(model, &xs, &truth, 0.05, 20 + i as u64);
        let mut ev = DatasetModel::new(model, data).unwrap();
        let g = brute_force_minimum(&mut ev, &lo, &hi, 101, None).unwrap();
        let cfg = SolverConfig {
            epsilon: 1e-8,
            ..SolverConfig::default()
        };
        let report = optimize(&mut ev, &ParameterVector::zeros(2), &cfg, None).unwrap();
        assert_eq!(report.status, Status::Converged);
        assert!(
            report.final_objective <= g.objective * (1.0 + 1e-9),
            "{}: optimizer {} vs grid {}",
            model.name(),
            report.final_objective,
            g.objective
        );
    }
}

#[test]
fn finite_difference_refresh_follows_exact_jacobian_path() {
    let (_, mut ev, _) = builtin_problems().into_iter().find(|p| p.0 == "linear-noisy").unwrap();
    let cfg = SolverConfig {
        epsilon: 1e-6,
        fd_refresh_period: Some(1),
        fd: central(),
        ..SolverConfig::default()
    };
    let report = optimize(&mut ev, &ParameterVector::zeros(2), &cfg, None).unwrap();
    assert_eq!(report.status, Status::Converged);

    // Reference: the same damping schedule with the exact Jacobian, starting
    // from the perturbed zero vector.
    let data = ev.data.clone();
    let j = exact_jacobian(AnalyticModel::Linear, &data, &[0.0, 0.0]);
    let jtj = j.transpose().mul(&j);
    let mut beta = [0.01, 0.01];
    let mut lambda = 1e-2;
    for rec in &report.iterations {
        assert!(rec.fd_refreshed && rec.armijo_satisfied && rec.alpha == 1.0);
        let r: Vec<f64> = data
            .x()
            .iter()
            .zip(data.y())
            .map(|(x, y)| y - (beta[0] + beta[1] * x[0]))
            .collect();
        let g = j.tr_mul_vec(&r);
        let (a, b, c, d) = (
            jtj[(0, 0)] * (1.0 + lambda),
            jtj[(0, 1)],
            jtj[(1, 0)],
            jtj[(1, 1)] * (1.0 + lambda),
        );
        let det = a * d - b * c;
        beta[0] += (-g[0] * d + g[1] * b) / det;
        beta[1] += (-g[1] * a + g[0] * c) / det;
        lambda = (lambda * 0.1f64).max(1e-12);
        for (got, want) in rec.beta.iter().zip(beta) {
            assert!((got - want).abs() <= 1e-8 * want.abs().max(1.0), "pass {}: {got} vs {want}", rec.k);
        }
    }
}
