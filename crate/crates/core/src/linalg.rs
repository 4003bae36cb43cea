//! Small dense linear-algebra kernels.
//!
//! Every matrix in this crate is at most a few dozen rows on a side, so storage
//! is plain row-major `Vec<f64>` and the algorithms are the textbook ones.

use std::ops::{Deref, DerefMut, Index, IndexMut};

use crate::error::{Error, Result};

/// Relative pivot / denominator tolerance used by the solvers.
pub const SINGULAR_TOL: f64 = 1e-12;

/// Number of power iterations used to estimate the spectral norm.
pub const POWER_ITERATIONS: usize = 100;

/// Dense column vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    /// The `i`-th standard basis vector of dimension `dim`.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.0[i] = 1.0;
        v
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Vector {
        Vector(self.0.iter().map(|x| x * s).collect())
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &Vector) -> Vector {
        Vector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + s * b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        self.axpy(-1.0, other)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(
                "matrix entries must be finite".into(),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from row slices. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    /// `u vᵀ`
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        let mut m = Self::zeros(u.len(), v.len());
        for (i, ui) in u.iter().enumerate() {
            for (j, vj) in v.iter().enumerate() {
                m[(i, j)] = ui * vj;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                for (o, b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vector> {
        if self.cols != x.len() {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by a vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect::<Vec<_>>()
            .into())
    }

    /// `xᵀ self` as a vector.
    pub fn vec_mul(&self, x: &[f64]) -> Result<Vector> {
        if self.rows != x.len() {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply a vector of length {} by {}x{}",
                x.len(),
                self.rows,
                self.cols
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (i, xi) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += xi * a;
            }
        }
        Ok(out.into())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Sub-block of rows `r0..r1`, all columns.
    pub fn row_block(&self, r0: usize, r1: usize) -> Matrix {
        Matrix {
            rows: r1 - r0,
            cols: self.cols,
            data: self.data[r0 * self.cols..r1 * self.cols].to_vec(),
        }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `trace(AᵀA)`, the sum of squared entries.
pub fn frobenius_norm_sq(a: &Matrix) -> f64 {
    a.data.iter().map(|x| x * x).sum()
}

/// `xᵀ A x`.
pub fn weighted_norm_sq(x: &[f64], a: &Matrix) -> Result<f64> {
    if a.rows != a.cols || a.rows != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "quadratic form of a length-{} vector with a {}x{} matrix",
            x.len(),
            a.rows,
            a.cols
        )));
    }
    let mut acc = 0.0;
    for (i, xi) in x.iter().enumerate() {
        let row: f64 = a.row(i).iter().zip(x).map(|(aij, xj)| aij * xj).sum();
        acc += xi * row;
    }
    Ok(acc)
}

/// Inverse of `A + scale·u vᵀ` given `A⁻¹`.
pub fn sherman_morrison(ainv: &Matrix, u: &[f64], v: &[f64], scale: f64) -> Result<Matrix> {
    let n = ainv.rows;
    if ainv.cols != n || u.len() != n || v.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "rank-one update of a {}x{} inverse with vectors of length {} and {}",
            ainv.rows,
            ainv.cols,
            u.len(),
            v.len()
        )));
    }
    let ainv_u = ainv.mul_vec(u)?;
    let vt_ainv = ainv.vec_mul(v)?;
    let denom = 1.0 + scale * v.iter().zip(ainv_u.iter()).map(|(a, b)| a * b).sum::<f64>();
    if denom.abs() < SINGULAR_TOL {
        return Err(Error::SingularUpdate { denominator: denom });
    }
    let coeff = scale / denom;
    let mut out = ainv.clone();
    for i in 0..n {
        let ci = coeff * ainv_u[i];
        for (o, w) in out.row_mut(i).iter_mut().zip(vt_ainv.iter()) {
            *o -= ci * w;
        }
    }
    Ok(out)
}

/// Solves `A X = B` by Gaussian elimination with partial pivoting.
pub fn solve_small(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows;
    if a.cols != n || b.rows != n {
        return Err(Error::DimensionMismatch(format!(
            "solve with a {}x{} system and a {}x{} right-hand side",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let scale = frobenius_norm_sq(a).sqrt();
    let m = b.cols;
    let mut lu = a.data.clone();
    let mut x = b.data.clone();
    for col in 0..n {
        let (piv_row, piv) = (col..n)
            .map(|r| (r, lu[r * n + col]))
            .max_by(|p, q| p.1.abs().total_cmp(&q.1.abs()))
            .expect("non-empty pivot range");
        if piv.abs() <= SINGULAR_TOL * scale {
            return Err(Error::Singular { pivot: piv });
        }
        if piv_row != col {
            for j in 0..n {
                lu.swap(col * n + j, piv_row * n + j);
            }
            for j in 0..m {
                x.swap(col * m + j, piv_row * m + j);
            }
        }
        for r in col + 1..n {
            let f = lu[r * n + col] / piv;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                lu[r * n + j] -= f * lu[col * n + j];
            }
            for j in 0..m {
                x[r * m + j] -= f * x[col * m + j];
            }
        }
    }
    for col in (0..n).rev() {
        let piv = lu[col * n + col];
        for j in 0..m {
            let mut s = x[col * m + j];
            for k in col + 1..n {
                s -= lu[col * n + k] * x[k * m + j];
            }
            x[col * m + j] = s / piv;
        }
    }
    Ok(Matrix {
        rows: n,
        cols: m,
        data: x,
    })
}

/// `ln|det A|` by elimination with partial pivoting.
pub fn log_abs_det(a: &Matrix) -> Result<f64> {
    let n = a.rows;
    if a.cols != n {
        return Err(Error::DimensionMismatch(format!(
            "determinant of a {}x{} matrix",
            a.rows, a.cols
        )));
    }
    let scale = frobenius_norm_sq(a).sqrt();
    let mut lu = a.data.clone();
    let mut acc = 0.0;
    for col in 0..n {
        let (piv_row, piv) = (col..n)
            .map(|r| (r, lu[r * n + col]))
            .max_by(|p, q| p.1.abs().total_cmp(&q.1.abs()))
            .expect("non-empty pivot range");
        if piv.abs() <= SINGULAR_TOL * scale {
            return Err(Error::Singular { pivot: piv });
        }
        if piv_row != col {
            for j in 0..n {
                lu.swap(col * n + j, piv_row * n + j);
            }
        }
        acc += piv.abs().ln();
        for r in col + 1..n {
            let f = lu[r * n + col] / piv;
            for j in col..n {
                lu[r * n + j] -= f * lu[col * n + j];
            }
        }
    }
    Ok(acc)
}

/// Returns `(‖A‖_F, σ̂)` where `σ̂` is a power-iteration estimate of the
/// spectral norm. The estimate never exceeds the true spectral norm.
pub fn operator_norm_bounds_check(a: &Matrix) -> (f64, f64) {
    let fro = frobenius_norm_sq(a).sqrt();
    if fro == 0.0 || a.cols == 0 {
        return (fro, 0.0);
    }
    let n = a.cols;
    let start = vec![1.0 / (n as f64).sqrt(); n];
    let mut best = power_iterate(a, start);
    // The all-ones start can be orthogonal to every right singular vector
    // with a nonzero singular value; retry from basis vectors in that case.
    if best <= 1e-12 * fro {
        for j in 0..n {
            best = best.max(power_iterate(a, Vector::basis(n, j).into_inner()));
            if best > 1e-12 * fro {
                break;
            }
        }
    }
    (fro, best)
}

fn power_iterate(a: &Matrix, mut v: Vec<f64>) -> f64 {
    let mut sigma = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let av = a.mul_vec(&v).expect("conformable");
        sigma = av.norm();
        if sigma == 0.0 {
            return 0.0;
        }
        let atav = a.vec_mul(&av).expect("conformable");
        let nrm = atav.norm();
        if nrm == 0.0 {
            return sigma;
        }
        v = atav.iter().map(|x| x / nrm).collect();
    }
    sigma.max(a.mul_vec(&v).expect("conformable").norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_norm_sq(&Matrix::identity(2)), 2.0);
        assert_eq!(frobenius_norm_sq(&Matrix::zeros(3, 2)), 0.0);
        assert_eq!(
            frobenius_norm_sq(&Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]])),
            30.0
        );
    }

    #[test]
    fn weighted_norm_examples() {
        assert_eq!(
            weighted_norm_sq(&[1.0, 0.0], &Matrix::identity(2)).unwrap(),
            1.0
        );
        assert_eq!(
            weighted_norm_sq(&[1.0, 1.0], &Matrix::diag(&[2.0, 3.0])).unwrap(),
            5.0
        );
        assert_eq!(
            weighted_norm_sq(&[0.0, 0.0], &Matrix::diag(&[2.0, 3.0])).unwrap(),
            0.0
        );
        assert!(matches!(
            weighted_norm_sq(&[1.0], &Matrix::identity(2)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn sherman_morrison_examples() {
        let e1 = [1.0, 0.0];
        let out = sherman_morrison(&Matrix::identity(2), &e1, &e1, 1.0).unwrap();
        assert_eq!(out, Matrix::diag(&[0.5, 1.0]));

        let err = sherman_morrison(&Matrix::identity(2), &e1, &e1, -1.0).unwrap_err();
        assert!(matches!(err, Error::SingularUpdate { .. }));

        let e2 = [0.0, 1.0];
        let out = sherman_morrison(&Matrix::diag(&[0.5, 1.0]), &e2, &e2, 1.0).unwrap();
        assert_relative_eq!(out.max_abs_diff(&Matrix::diag(&[0.5, 0.5])), 0.0);
    }

    #[test]
    fn solve_examples() {
        let b = Matrix::from_rows(&[&[1.0, -2.0, 3.0], &[0.5, 7.0, -1.0]]);
        assert_eq!(solve_small(&Matrix::identity(2), &b).unwrap(), b);
        let x = solve_small(&Matrix::diag(&[2.0, 4.0]), &Matrix::identity(2)).unwrap();
        assert_eq!(x, Matrix::diag(&[0.5, 0.25]));
        assert!(matches!(
            solve_small(&Matrix::zeros(2, 2), &Matrix::identity(2)),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn solve_needs_pivoting() {
        let a = Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let b = Matrix::from_rows(&[&[3.0], &[5.0]]);
        let x = solve_small(&a, &b).unwrap();
        assert_eq!(x.as_slice(), &[5.0, 3.0]);
    }

    #[test]
    fn log_det_examples() {
        assert_eq!(log_abs_det(&Matrix::identity(3)).unwrap(), 0.0);
        let d = log_abs_det(&Matrix::diag(&[2.0, 3.0])).unwrap();
        assert_relative_eq!(d, 6f64.ln(), max_relative = 1e-15);
        let m = Matrix::from_rows(&[&[0.0, 2.0], &[-3.0, 1.0]]);
        assert_relative_eq!(log_abs_det(&m).unwrap(), 6f64.ln(), max_relative = 1e-15);
        assert!(log_abs_det(&Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn operator_norm_examples() {
        let (fro, op) = operator_norm_bounds_check(&Matrix::identity(3));
        assert_relative_eq!(fro, 3f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(op, 1.0, epsilon = 1e-12);

        let u = [1.0, 2.0, -2.0];
        let v = [3.0, 4.0];
        let (fro, op) = operator_norm_bounds_check(&Matrix::outer(&u, &v));
        assert_relative_eq!(fro, 15.0, epsilon = 1e-12);
        assert_relative_eq!(op, 15.0, epsilon = 1e-12);

        assert_eq!(operator_norm_bounds_check(&Matrix::zeros(2, 3)), (0.0, 0.0));
    }

    #[test]
    fn operator_norm_start_orthogonal_to_ones() {
        // v = (1, -1) is orthogonal to the all-ones start vector.
        let (fro, op) = operator_norm_bounds_check(&Matrix::outer(&[2.0], &[1.0, -1.0]));
        assert_relative_eq!(fro, 8f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(op, 8f64.sqrt(), epsilon = 1e-12);
    }

    fn matrix_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        prop::collection::vec(-3.0f64..3.0, rows * cols)
            .prop_map(move |d| Matrix::from_row_major(rows, cols, d).unwrap())
    }

    fn sm_case() -> impl Strategy<Value = (Matrix, Vec<f64>, Vec<f64>, f64)> {
        (2usize..=6).prop_flat_map(|n| {
            (
                matrix_strategy(n, n),
                prop::collection::vec(-1.0f64..1.0, n),
                prop::collection::vec(-1.0f64..1.0, n),
                0.1f64..2.0,
            )
        })
    }

    proptest! {
        #[test]
        fn sherman_morrison_is_exact((m, u, v, s) in sm_case()) {
            let n = m.rows();
            // Diagonally dominant keeps A and A + s·uvᵀ well conditioned.
            let a = m.add(&Matrix::identity(n).scaled(4.0 * n as f64)).unwrap();
            let ainv = solve_small(&a, &Matrix::identity(n)).unwrap();
            let updated = a.add(&Matrix::outer(&u, &v).scaled(s)).unwrap();
            let inv = sherman_morrison(&ainv, &u, &v, s).unwrap();
            let prod = updated.matmul(&inv).unwrap();
            prop_assert!(prod.max_abs_diff(&Matrix::identity(n)) < 1e-8);
        }

        #[test]
        fn norm_chain((r, c) in (1usize..6, 1usize..6), seed in any::<u64>()) {
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            let data: Vec<f64> = (0..r * c).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
            let a = Matrix::from_row_major(r, c, data).unwrap();
            let (fro, op) = operator_norm_bounds_check(&a);
            let m = c as f64;
            prop_assert!(op <= fro * (1.0 + 1e-6));
            prop_assert!(fro <= m.sqrt() * op * (1.0 + 1e-6));
        }

        #[test]
        fn matrix_cauchy_schwarz(a in matrix_strategy(3, 4), b in matrix_strategy(4, 3)) {
            let tr = a.matmul(&b).unwrap().trace();
            let bound = frobenius_norm_sq(&a).sqrt() * frobenius_norm_sq(&b).sqrt();
            prop_assert!(tr.abs() <= bound * (1.0 + 1e-12));
        }

        #[test]
        fn matrix_am_gm(a in matrix_strategy(2, 5), b in matrix_strategy(5, 2)) {
            let tr = a.matmul(&b).unwrap().trace();
            prop_assert!((2.0 * tr).abs() <= frobenius_norm_sq(&a) + frobenius_norm_sq(&b) + 1e-12);
        }

        #[test]
        fn solve_residual(m in matrix_strategy(4, 4), b in matrix_strategy(4, 2)) {
            let a = m.add(&Matrix::identity(4).scaled(10.0)).unwrap();
            let x = solve_small(&a, &b).unwrap();
            let resid = a.matmul(&x).unwrap().sub(&b).unwrap();
            prop_assert!(frobenius_norm_sq(&resid).sqrt() <= 1e-9 * frobenius_norm_sq(&b).sqrt().max(1e-300));
        }
    }
}
