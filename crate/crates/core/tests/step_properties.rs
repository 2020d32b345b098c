mod common;

use broyden_lm::linalg::Matrix;
use broyden_lm::nlls::{assemble_lm_system, broyden_update, lm_step, NllsError};
use broyden_lm::{BroydenMatrix, WeightMatrix};
use common::accurate_dot;
use proptest::prelude::*;

fn matrix(m: usize, n: usize, scale: f64) -> impl Strategy<Value = Matrix<f64>> {
    prop::collection::vec(-scale..scale, m * n)
        .prop_map(move |v| Matrix::from_row_slice(m, n, &v).unwrap())
}

/// Random `m × n` (m ≥ n) matrix with a dominant unit pattern, so `BᵀB` is
/// comfortably conditioned.
fn tall_matrix(max_n: usize, max_m: usize) -> impl Strategy<Value = Matrix<f64>> {
    (1..=max_n)
        .prop_flat_map(move |n| (n..=max_m, Just(n)))
        .prop_flat_map(|(m, n)| matrix(m, n, 1.0))
        .prop_map(|mut b| {
            for i in 0..b.rows().min(b.cols()) {
                b[(i, i)] += 3.0;
            }
            b
        })
}

fn vector(len: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, len)
}

fn frobenius(b: &Matrix<f64>) -> f64 {
    b.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn secant_condition_holds_after_update(
        (b, s, t) in (1usize..=10, 1usize..=10).prop_flat_map(|(m, n)| {
            (matrix(m, n, 10.0), vector(n, 5.0), vector(m, 5.0))
        }),
        s_scale in prop::sample::select(vec![1e-6, 1e-2, 1.0, 1e3]),
    ) {
        let s: Vec<f64> = s.iter().map(|v| v * s_scale).collect();
        let ss = accurate_dot(&s, &s);
        prop_assume!(ss >= 1e-30);
        let old = BroydenMatrix::from_matrix(b.clone());
        let new = broyden_update(&old, &s, &t).unwrap();
        let bound = 4.0 * f64::EPSILON * (common::norm(&t) + frobenius(&b) * common::norm(&s));
        let mut resid = 0.0;
        for (i, &ti) in t.iter().enumerate() {
            let mut row = new.matrix().row(i).to_vec();
            row.push(ti);
            let mut sv = s.clone();
            sv.push(-1.0);
            let e = accurate_dot(&row, &sv);
            resid += e * e;
        }
        prop_assert!(resid.sqrt() <= bound, "‖B s − t‖ = {} > {}", resid.sqrt(), bound);
    }

    #[test]
    fn tiny_steps_are_rejected(n in 1usize..5, m in 1usize..5) {
        let b = BroydenMatrix::unit(m, n);
        let s = vec![1e-16; n];
        let t = vec![1.0; m];
        prop_assert!(matches!(broyden_update(&b, &s, &t), Err(NllsError::StagnantStep)));
    }

    #[test]
    fn large_damping_approaches_gradient_descent(
        (b, r) in tall_matrix(6, 10).prop_flat_map(|b| {
            let m = b.rows();
            (Just(b), vector(m, 10.0))
        }),
    ) {
        let lambda = 1e8;
        let bm = BroydenMatrix::from_matrix(b.clone());
        let p = lm_step(&assemble_lm_system(&bm, &r, lambda, None).unwrap()).unwrap();
        let g = b.tr_mul_vec(&r);
        let gd: Vec<f64> = (0..b.cols())
            .map(|j| {
                let col = b.column(j);
                -g[j] / (lambda * accurate_dot(&col, &col))
            })
            .collect();
        let scale = gd.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assume!(scale > 0.0);
        for j in 0..p.len() {
            prop_assert!((p[j] - gd[j]).abs() <= 1e-6 * scale, "p = {p:?}, gd = {gd:?}");
        }
    }

    #[test]
    fn zero_damping_with_exact_jacobian_solves_linear_regression(
        xs in prop::collection::vec(-5.0f64..5.0, 3..30),
        coeffs in (-3.0f64..3.0, -3.0f64..3.0),
        noise in prop::collection::vec(-0.5f64..0.5, 30),
        beta in (-10.0f64..10.0, -10.0f64..10.0),
    ) {
        let m = xs.len();
        let xbar = xs.iter().sum::<f64>() / m as f64;
        let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
        prop_assume!(sxx > 1e-2 * m as f64);
        let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, e)| coeffs.0 + coeffs.1 * x + e).collect();
        let ybar = ys.iter().sum::<f64>() / m as f64;
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum::<f64>() / sxx;
        let intercept = ybar - slope * xbar;

        let r: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - (beta.0 + beta.1 * x)).collect();
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![-1.0, -x]).collect();
        let j = BroydenMatrix::from_matrix(Matrix::from_rows(&rows).unwrap());
        let p = lm_step(&assemble_lm_system(&j, &r, 0.0, None).unwrap()).unwrap();
        let got = [beta.0 + p[0], beta.1 + p[1]];
        let scale = intercept.abs().max(slope.abs()).max(1.0);
        prop_assert!((got[0] - intercept).abs() <= 1e-10 * scale, "{got:?} vs ({intercept}, {slope})");
        prop_assert!((got[1] - slope).abs() <= 1e-10 * scale, "{got:?} vs ({intercept}, {slope})");
    }

    #[test]
    fn step_scales_with_residuals(
        (b, r) in tall_matrix(6, 10).prop_flat_map(|b| {
            let m = b.rows();
            (Just(b), vector(m, 10.0))
        }),
        gamma in 1e-3f64..1e3,
        lambda in 1e-3f64..1.0,
    ) {
        let bm = BroydenMatrix::from_matrix(b);
        let p = lm_step(&assemble_lm_system(&bm, &r, lambda, None).unwrap()).unwrap();
        let rg: Vec<f64> = r.iter().map(|v| gamma * v).collect();
        let pg = lm_step(&assemble_lm_system(&bm, &rg, lambda, None).unwrap()).unwrap();
        let scale = p.iter().fold(0.0f64, |a, v| a.max(v.abs())) * gamma;
        prop_assume!(scale > 0.0);
        for (a, b) in p.iter().zip(&pg) {
            prop_assert!((gamma * a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn doubling_weights_leaves_step_unchanged(
        (b, r, w) in tall_matrix(6, 10).prop_flat_map(|b| {
            let m = b.rows();
            (Just(b), vector(m, 10.0), prop::collection::vec(0.1f64..10.0, m))
        }),
        lambda in 0.0f64..1.0,
    ) {
        let bm = BroydenMatrix::from_matrix(b);
        let w1 = WeightMatrix::new(w.clone()).unwrap();
        let w2 = WeightMatrix::new(w.iter().map(|v| 2.0 * v).collect()).unwrap();
        let p1 = lm_step(&assemble_lm_system(&bm, &r, lambda, Some(&w1)).unwrap()).unwrap();
        let p2 = lm_step(&assemble_lm_system(&bm, &r, lambda, Some(&w2)).unwrap()).unwrap();
        let scale = p1.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in p1.iter().zip(&p2) {
            prop_assert!((a - b).abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE));
        }
    }

    #[test]
    fn identity_weights_are_bit_identical(
        (b, r) in tall_matrix(6, 10).prop_flat_map(|b| {
            let m = b.rows();
            (Just(b), vector(m, 10.0))
        }),
        lambda in 0.0f64..1.0,
    ) {
        let bm = BroydenMatrix::from_matrix(b);
        let w = WeightMatrix::identity(r.len());
        let plain = assemble_lm_system(&bm, &r, lambda, None).unwrap();
        let weighted = assemble_lm_system(&bm, &r, lambda, Some(&w)).unwrap();
        prop_assert_eq!(plain, weighted);
    }
}
