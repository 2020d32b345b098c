//! Dense matrices and the linear solve behind each damped step.
//!
//! The step systems are small (n×n with n the parameter count) so everything
//! here is plain row-major storage and textbook LU with partial pivoting.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinalgError {
    /// Zero or near-zero pivot encountered during factorization.
    #[error("singular system: pivot {pivot} below tolerance")]
    Singular { pivot: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    /// Ones on entries `(i, i)` for `i < min(rows, cols)`, zeros elsewhere.
    pub fn identity_pattern(rows: usize, cols: usize) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows.min(cols) {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        Self::identity_pattern(n, n)
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_row_slice(rows: usize, cols: usize, data: &[T]) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            data: data.to_vec(),
        })
    }

    /// Builds a matrix from nested rows. All rows must have the same length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(LinalgError::Dimension("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[T]) {
        debug_assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `self · v`
    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols, "mul_vec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// `selfᵀ · v`
    pub fn tr_mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.rows, "tr_mul_vec dimension mismatch");
        let mut out = vec![T::zero(); self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matrix product dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a - b)
                .collect(),
        }
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> T {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<T>())
            .fold(T::zero(), T::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Square system `a · x = b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSystem<T> {
    pub a: Matrix<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> DenseSystem<T> {
    pub fn new(a: Matrix<T>, b: Vec<T>) -> Result<Self, LinalgError> {
        if a.rows() != a.cols() {
            return Err(LinalgError::Dimension(format!(
                "{}x{} matrix is not square",
                a.rows(),
                a.cols()
            )));
        }
        if a.rows() != b.len() {
            return Err(LinalgError::Dimension(format!(
                "rhs of length {} for an order-{} system",
                b.len(),
                a.rows()
            )));
        }
        if b.is_empty() {
            return Err(LinalgError::Dimension("empty system".into()));
        }
        Ok(Self { a, b })
    }

    pub fn order(&self) -> usize {
        self.b.len()
    }

    /// `‖A − Aᵀ‖_max ≤ tol · ‖A‖_max`
    pub fn is_symmetric(&self, tol: T) -> bool {
        let n = self.order();
        let scale = self.a.max_abs();
        (0..n).all(|i| (0..i).all(|j| (self.a[(i, j)] - self.a[(j, i)]).abs() <= tol * scale))
    }

    pub fn solve(&self) -> Result<Vec<T>, LinalgError> {
        solve(self)
    }

    pub fn condition_estimate(&self) -> T {
        condition_estimate(self)
    }
}

/// Relative pivot tolerance: 1e-14 for `f64`, machine epsilon for coarser types.
pub fn pivot_tolerance<T: Scalar>() -> T {
    T::lit(1e-14).max(T::epsilon())
}

/// LU factors with row permutation, `P·A = L·U` packed in one matrix.
#[derive(Debug, Clone)]
pub struct LuFactors<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> LuFactors<T> {
    /// Gaussian elimination with partial pivoting. A pivot whose magnitude is
    /// at or below `pivot_tolerance · max|a_ij|` is reported as singular.
    pub fn factor(a: &Matrix<T>) -> Result<Self, LinalgError> {
        let n = a.rows();
        if n != a.cols() {
            return Err(LinalgError::Dimension("LU of a non-square matrix".into()));
        }
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let threshold = pivot_tolerance::<T>() * a.max_abs();

        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -T::one()), |best, cand| if cand.1 > best.1 { cand } else { best });
            if !(pmax > threshold) {
                return Err(LinalgError::Singular { pivot: k });
            }
            if p != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
                perm.swap(k, p);
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let factor = lu[(i, k)] / pivot;
                lu[(i, k)] = factor;
                if factor != T::zero() {
                    for j in k + 1..n {
                        let u = lu[(k, j)];
                        lu[(i, j)] -= factor * u;
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn order(&self) -> usize {
        self.perm.len()
    }

    /// Solves `A · x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.order();
        assert_eq!(b.len(), n);
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[(i, j)] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.lu[(i, j)] * x[j];
            }
            x[i] = acc / self.lu[(i, i)];
        }
        x
    }

    /// Solves `Aᵀ · x = b`.
    pub fn solve_transpose(&self, b: &[T]) -> Vec<T> {
        let n = self.order();
        assert_eq!(b.len(), n);
        // Uᵀ z = b, then Lᵀ w = z, then x = Pᵀ w.
        let mut z = b.to_vec();
        for i in 0..n {
            let mut acc = z[i];
            for j in 0..i {
                acc -= self.lu[(j, i)] * z[j];
            }
            z[i] = acc / self.lu[(i, i)];
        }
        for i in (0..n).rev() {
            let mut acc = z[i];
            for j in i + 1..n {
                acc -= self.lu[(j, i)] * z[j];
            }
            z[i] = acc;
        }
        let mut x = vec![T::zero(); n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = z[i];
        }
        x
    }
}

/// Solves the system by LU with partial pivoting.
///
/// When every diagonal entry is positive (the damped normal equations always
/// are) the system is first equilibrated symmetrically with `D^{-1/2} A D^{-1/2}`,
/// `D = diag(A)`, so the relative pivot test is insensitive to parameter scaling.
pub fn solve<T: Scalar>(sys: &DenseSystem<T>) -> Result<Vec<T>, LinalgError> {
    let n = sys.order();
    let diag: Vec<T> = (0..n).map(|i| sys.a[(i, i)]).collect();
    let scale: Option<Vec<T>> = diag
        .iter()
        .all(|&d| d > T::zero() && d.is_finite())
        .then(|| diag.iter().map(|&d| T::one() / d.sqrt()).collect());

    let x = match scale {
        Some(s) => {
            let mut a = sys.a.clone();
            for i in 0..n {
                for j in 0..n {
                    a[(i, j)] = a[(i, j)] * s[i] * s[j];
                }
            }
            let b: Vec<T> = sys.b.iter().zip(&s).map(|(&b, &si)| b * si).collect();
            let y = LuFactors::factor(&a)?.solve(&b);
            y.iter().zip(&s).map(|(&y, &si)| y * si).collect::<Vec<_>>()
        }
        None => LuFactors::factor(&sys.a)?.solve(&sys.b),
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::Singular { pivot: n.saturating_sub(1) });
    }
    Ok(x)
}

/// 1-norm condition number estimate `‖A‖₁ · ‖A⁻¹‖₁` using Hager's method
/// (with Higham's alternating-sign safeguard). Returns `+∞` for singular `A`.
pub fn condition_estimate<T: Scalar>(sys: &DenseSystem<T>) -> T {
    let Ok(lu) = LuFactors::factor(&sys.a) else {
        return T::infinity();
    };
    let inv_norm = inverse_norm_1(&lu);
    if !inv_norm.is_finite() {
        return T::infinity();
    }
    sys.a.norm_1() * inv_norm
}

fn inverse_norm_1<T: Scalar>(lu: &LuFactors<T>) -> T {
    let n = lu.order();
    let nt = T::from_usize(n).unwrap();
    let norm1 = |v: &[T]| v.iter().map(|x| x.abs()).sum::<T>();

    let mut x = vec![T::one() / nt; n];
    let mut est = T::zero();
    for iter in 0..5 {
        let y = lu.solve(&x);
        let ynorm = norm1(&y);
        if iter > 0 && ynorm <= est {
            break;
        }
        est = ynorm;
        let sign: Vec<T> = y
            .iter()
            .map(|&v| if v >= T::zero() { T::one() } else { -T::one() })
            .collect();
        let z = lu.solve_transpose(&sign);
        let (jmax, zmax) = z
            .iter()
            .enumerate()
            .fold((0, -T::one()), |b, (j, &v)| if v.abs() > b.1 { (j, v.abs()) } else { b });
        let ztx: T = z.iter().zip(&x).map(|(&a, &b)| a * b).sum();
        if iter > 0 && zmax <= ztx {
            break;
        }
        x = vec![T::zero(); n];
        x[jmax] = T::one();
    }

    // Higham's alternative vector guards against Hager underestimating.
    if n > 1 {
        let denom = T::from_usize(n - 1).unwrap();
        let alt: Vec<T> = (0..n)
            .map(|i| {
                let sign = if i % 2 == 0 { T::one() } else { -T::one() };
                sign * (T::one() + T::from_usize(i).unwrap() / denom)
            })
            .collect();
        let y = lu.solve(&alt);
        let alt_est = T::lit(2.0) * norm1(&y) / (T::lit(3.0) * nt);
        est = est.max(alt_est);
    }
    est
}
