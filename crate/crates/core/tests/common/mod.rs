#![allow(dead_code)]

use broyden_lm::{AnalyticModel, Dataset, DatasetModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Samples `model` at `xs` with `beta`, adding uniform noise of half-width `noise`.
pub fn synth(model: AnalyticModel, xs: &[f64], beta: &[f64], noise: f64, seed: u64) -> Dataset<f64> {
    let mut r = rng(seed);
    let y = xs
        .iter()
        .map(|&x| model.value(&[x], beta) + if noise > 0.0 { r.random_range(-noise..noise) } else { 0.0 })
        .collect::<Vec<_>>();
    Dataset::from_xy(xs, &y).unwrap()
}

pub fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// The regression problems shared by the suites: (name, evaluator, generating β).
pub fn builtin_problems() -> Vec<(&'static str, DatasetModel<f64>, Vec<f64>)> {
    let lin = AnalyticModel::Linear;
    let quad = AnalyticModel::Polynomial { degree: 2 };
    let decay = AnalyticModel::ExponentialDecay;
    let logistic = AnalyticModel::Logistic;
    let xs = grid(20, 0.0, 3.0);
    let xl = grid(30, -4.0, 6.0);
    let cases = [
        ("linear", lin, synth(lin, &xs, &[1.0, 2.0], 0.0, 0), vec![1.0, 2.0]),
        ("linear-noisy", lin, synth(lin, &xs, &[-0.5, 0.75], 0.05, 11), vec![-0.5, 0.75]),
        ("quadratic", quad, synth(quad, &xs, &[0.5, -1.0, 0.8], 0.0, 0), vec![0.5, -1.0, 0.8]),
        ("decay", decay, synth(decay, &xs, &[2.5, 1.3], 0.0, 0), vec![2.5, 1.3]),
        ("decay-noisy", decay, synth(decay, &xs, &[2.5, 1.3], 0.02, 7), vec![2.5, 1.3]),
        ("logistic", logistic, synth(logistic, &xl, &[3.0, 1.5, 1.0], 0.01, 3), vec![3.0, 1.5, 1.0]),
    ];
    cases
        .into_iter()
        .map(|(name, m, d, b)| (name, DatasetModel::new(m, d).unwrap(), b))
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Error-free product `a·b = p + e` via fused multiply-add.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let z = s - a;
    (s, (a - (s - z)) + (b - z))
}

/// Dot product evaluated in doubled precision.
pub fn accurate_dot(a: &[f64], b: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (p, ep) = two_prod(x, y);
        let (t, es) = two_sum(s, p);
        s = t;
        c += ep + es;
    }
    s + c
}
