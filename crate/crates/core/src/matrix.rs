//! Small dense linear algebra for the estimator.
//!
//! [`Mat`] stores its entries in **column-major** order. That is the layout
//! under which [`vectorize`] is a plain copy of the backing buffer, and
//! under which `kron_row_block(v, n) * vectorize(A) == A * v`.
//!
//! Vectors are plain `Vec<f64>` / `&[f64]`.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Off-diagonal Frobenius norm at which the Jacobi sweep stops, relative to
/// the Frobenius norm of the input.
const JACOBI_TOLERANCE: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Mat::zeros(diag.len(), diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    /// Builds a matrix from a slice of rows. All rows must have equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        if let Some(bad) = rows.iter().find(|r| r.as_ref().len() != ncols) {
            return Err(Error::dim("Mat::from_rows", ncols, bad.as_ref().len()));
        }
        Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i].as_ref()[j]))
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("Mat::from_col_major", rows * cols, data.len()));
        }
        Ok(Mat { rows, cols, data })
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_col_major(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, x| acc.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| s * x).collect(),
        }
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, s: f64, other: &Mat) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn add(&self, other: &Mat) -> Mat {
        let mut out = self.clone();
        out.add_scaled(1.0, other);
        out
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        let mut out = self.clone();
        out.add_scaled(-1.0, other);
        out
    }

    /// `(self + selfᵀ) / 2`
    pub fn symmetrize(&mut self) {
        debug_assert!(self.is_square());
        let n = self.rows;
        for j in 0..n {
            for i in (j + 1)..n {
                let avg = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = avg;
                self[(j, i)] = avg;
            }
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "mul_vec dimension mismatch");
        let mut out = vec![0.0; self.rows];
        for (j, vj) in v.iter().enumerate() {
            if *vj == 0.0 {
                continue;
            }
            let col = &self.data[j * self.rows..(j + 1) * self.rows];
            for (o, c) in out.iter_mut().zip(col) {
                *o += c * vj;
            }
        }
        out
    }

    /// `selfᵀ * v`
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows, "tr_mul_vec dimension mismatch");
        (0..self.cols)
            .map(|j| {
                let col = &self.data[j * self.rows..(j + 1) * self.rows];
                col.iter().zip(v).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            for k in 0..self.cols {
                let b = other[(k, j)];
                if b == 0.0 {
                    continue;
                }
                let a_col = &self.data[k * self.rows..(k + 1) * self.rows];
                let o_col = &mut out.data[j * self.rows..(j + 1) * self.rows];
                for (o, a) in o_col.iter_mut().zip(a_col) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ * self`, exactly symmetric.
    pub fn gram(&self) -> Mat {
        let n = self.cols;
        let mut out = Mat::zeros(n, n);
        for j in 0..n {
            let cj = &self.data[j * self.rows..(j + 1) * self.rows];
            for i in 0..=j {
                let ci = &self.data[i * self.rows..(i + 1) * self.rows];
                let s: f64 = ci.iter().zip(cj).map(|(a, b)| a * b).sum();
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[j * self.rows + i]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[j * self.rows + i]
    }
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mat{}x{}", self.rows, self.cols)?;
        f.debug_list().entries(self.to_rows()).finish()
    }
}

// Matrices appear in config files as a list of rows.
impl Serialize for Mat {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Mat {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        Mat::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Column-stacking vectorization.
pub fn vectorize(m: &Mat) -> Vec<f64> {
    m.data.clone()
}

/// Inverse of [`vectorize`] for an `rows x cols` matrix.
pub fn unvectorize(v: &[f64], rows: usize, cols: usize) -> Result<Mat> {
    Mat::from_col_major(rows, cols, v.to_vec())
}

/// Returns `(v ⊗ Iₙ)ᵀ`, the `n x n·dim(v)` matrix with
/// `kron_row_block(v, n) * vectorize(A) == A * v` for every `n x dim(v)` matrix `A`.
pub fn kron_row_block(v: &[f64], n: usize) -> Mat {
    let mut out = Mat::zeros(n, n * v.len());
    for (k, vk) in v.iter().enumerate() {
        for i in 0..n {
            out[(i, k * n + i)] = *vk;
        }
    }
    out
}

/// Writes `[kron_row_block(a) kron_row_block(b) ...]` side by side.
pub fn kron_row_blocks(parts: &[&[f64]], n: usize) -> Mat {
    let width: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = Mat::zeros(n, n * width);
    let mut offset = 0;
    for part in parts {
        for (k, vk) in part.iter().enumerate() {
            for i in 0..n {
                out[(i, (offset + k) * n + i)] = *vk;
            }
        }
        offset += part.len();
    }
    out
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors, column `i` pairs with `values[i]`.
    pub vectors: Mat,
}

impl SymmetricEigen {
    /// `V diag(f(λ)) Vᵀ`
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Mat {
        let n = self.values.len();
        let mapped: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let v = &self.vectors;
        let mut out = Mat::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let s: f64 = (0..n).map(|k| v[(i, k)] * mapped[k] * v[(j, k)]).sum();
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }
}

fn check_symmetric_input(m: &Mat) -> Result<Mat> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("symmetric eigen-solve input"));
    }
    let mut a = m.clone();
    a.symmetrize();
    Ok(a)
}

/// Cyclic Jacobi rotations on the (already symmetric) `a`. On return the
/// diagonal of `a` holds the eigenvalues; `v`, when given, accumulates the
/// rotations.
fn jacobi_in_place(a: &mut Mat, mut v: Option<&mut Mat>) {
    let n = a.rows;
    let threshold = JACOBI_TOLERANCE * a.frobenius_norm();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for j in 0..n {
            for i in 0..n {
                if i != j {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
        }
        if off.sqrt() <= threshold {
            return;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                if let Some(v) = v.as_deref_mut() {
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    log::warn!("Jacobi eigen-solve hit the sweep limit ({JACOBI_MAX_SWEEPS}) for n={n}");
}

/// Eigenvalues and eigenvectors of a symmetric matrix. The input is
/// symmetrized as `(m + mᵀ)/2` first.
pub fn symmetric_eigen(m: &Mat) -> Result<SymmetricEigen> {
    let mut a = check_symmetric_input(m)?;
    let n = a.rows;
    let mut v = Mat::identity(n);
    jacobi_in_place(&mut a, Some(&mut v));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = Mat::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymmetricEigen { values, vectors })
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(m: &Mat) -> Result<Vec<f64>> {
    let mut a = check_symmetric_input(m)?;
    jacobi_in_place(&mut a, None);
    let mut values: Vec<f64> = (0..a.rows).map(|i| a[(i, i)]).collect();
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// `λ_min` of a symmetric matrix.
pub fn min_eigenvalue_symmetric(m: &Mat) -> Result<f64> {
    let values = symmetric_eigenvalues(m)?;
    Ok(values.first().copied().unwrap_or(0.0))
}

/// Solves `m x = b` for symmetric positive definite `m` by Cholesky
/// factorization. Returns `None` if `m` is not numerically positive definite.
pub fn solve_spd(m: &Mat, b: &[f64]) -> Option<Vec<f64>> {
    let n = m.rows;
    debug_assert!(m.is_square() && b.len() == n);
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[(i, k)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            y[i] -= l[(k, i)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    Some(y)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// `y += s * x`
pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
        Mat::from_fn(rows, cols, |_, _| rng.random_range(-3.0..3.0))
    }

    #[test]
    fn vectorize_stacks_columns() {
        let m = Mat::from_rows(&[[1.0, 3.0], [0.0, 1.0]]).unwrap();
        assert_eq!(vectorize(&m), vec![1.0, 0.0, 3.0, 1.0]);
        assert_eq!(vectorize(&Mat::zeros(2, 2)), vec![0.0; 4]);
        assert_eq!(vectorize(&Mat::identity(2)), vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn kron_row_block_examples() {
        let a1 = Mat::from_rows(&[[2.0, 3.0], [1.0, 2.0]]).unwrap();
        let k = kron_row_block(&[1.0, 1.0], 2);
        assert_eq!(k.shape(), (2, 4));
        assert_eq!(k.mul_vec(&vectorize(&a1)), a1.mul_vec(&[1.0, 1.0]));
        assert_eq!(k.mul_vec(&vectorize(&a1)), vec![5.0, 3.0]);

        let zero = kron_row_block(&[0.0, 0.0], 2);
        assert_eq!(zero.mul_vec(&vectorize(&a1)), vec![0.0, 0.0]);

        let a = Mat::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let e1 = kron_row_block(&[1.0, 0.0, 0.0], 2);
        assert_eq!(e1.mul_vec(&vectorize(&a)), vec![1.0, 4.0]);
    }

    #[test]
    fn kron_row_blocks_matches_separate_blocks() {
        let f = [1.0, -2.0];
        let g = [0.5, 3.0];
        let u = [4.0, 7.0];
        let joined = kron_row_blocks(&[&f, &g, &u], 2);
        let parts = [kron_row_block(&f, 2), kron_row_block(&g, 2), kron_row_block(&u, 2)];
        for (b, part) in parts.iter().enumerate() {
            for i in 0..2 {
                for j in 0..4 {
                    assert_eq!(joined[(i, b * 4 + j)], part[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn min_eigenvalue_examples() {
        assert!((min_eigenvalue_symmetric(&Mat::identity(12)).unwrap() - 1.0).abs() < 1e-15);
        let d = Mat::from_diag(&[3.0, 1.0, 2.0]);
        assert!((min_eigenvalue_symmetric(&d).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            min_eigenvalue_symmetric(&Mat::zeros(2, 3)),
            Err(Error::NotSquare { rows: 2, cols: 3 })
        ));
        assert_eq!(min_eigenvalue_symmetric(&Mat::zeros(4, 4)).unwrap(), 0.0);
    }

    /// Smallest root of det(λI - M) for a 3x3 symmetric M, found by
    /// bisection on the characteristic polynomial.
    fn char_poly_min_root(m: &Mat) -> f64 {
        let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let minors = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
            + m[(0, 0)] * m[(2, 2)]
            - m[(0, 2)] * m[(2, 0)]
            + m[(1, 1)] * m[(2, 2)]
            - m[(1, 2)] * m[(2, 1)];
        let det = m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
            - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
            + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)]);
        let p = |l: f64| ((l - tr) * l + minors) * l - det;
        // All roots are real and lie in [-bound, bound].
        let bound = 1.0 + m.as_col_major().iter().map(|x| x.abs()).sum::<f64>();
        // Scan for the first sign change from below, then bisect.
        let steps = 200_000;
        let h = 2.0 * bound / steps as f64;
        let mut lo = -bound;
        let mut plo = p(lo);
        for k in 1..=steps {
            let x = -bound + k as f64 * h;
            let px = p(x);
            if px == 0.0 {
                return x;
            }
            if px.signum() != plo.signum() {
                let mut hi = x;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if p(mid).signum() == plo.signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return 0.5 * (lo + hi);
            }
            lo = x;
            plo = px;
        }
        panic!("no root found");
    }

    #[test]
    fn min_eigenvalue_matches_characteristic_polynomial() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let g = random_mat(&mut rng, 5, 3);
            let gram = g.gram();
            let expected = char_poly_min_root(&gram);
            let got = min_eigenvalue_symmetric(&gram).unwrap();
            assert!(
                (got - expected).abs() <= 1e-8 * expected.abs().max(1e-12),
                "got {got}, oracle {expected}"
            );
        }
    }

    #[test]
    fn eigen_decomposition_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = random_mat(&mut rng, 12, 12);
        let mut m = q.add(&q.transpose());
        m.symmetrize();
        let eig = symmetric_eigen(&m).unwrap();
        assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
        let back = eig.reconstruct_with(|l| l);
        assert!(back.max_abs_diff(&m) < 1e-10 * m.max_abs());
        let vtv = eig.vectors.gram();
        assert!(vtv.max_abs_diff(&Mat::identity(12)) < 1e-12);
    }

    #[test]
    fn spd_solve_recovers_rhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_mat(&mut rng, 6, 6);
        let mut m = q.gram();
        m.add_scaled(1.0, &Mat::identity(6));
        let x: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let b = m.mul_vec(&x);
        let got = solve_spd(&m, &b).unwrap();
        assert!(sub(&got, &x).iter().all(|e| e.abs() < 1e-10));
        assert!(solve_spd(&Mat::from_diag(&[1.0, -1.0]), &[1.0, 1.0]).is_none());
    }

    #[test]
    fn serde_uses_row_lists() {
        let m = Mat::from_rows(&[[1.0, 3.0], [0.0, 1.0]]).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, "[[1.0,3.0],[0.0,1.0]]");
        let back: Mat = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<Mat>("[[1.0],[2.0,3.0]]").is_err());
    }

    proptest! {
        #[test]
        fn kron_identity_holds(n in 1usize..4, k in 1usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_mat(&mut rng, n, k);
            let v: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let lhs = kron_row_block(&v, n).mul_vec(&vectorize(&a));
            let rhs = a.mul_vec(&v);
            let scale = norm(&rhs).max(1.0);
            prop_assert!(norm(&sub(&lhs, &rhs)) <= 1e-12 * scale);
        }

        #[test]
        fn gram_is_psd(rows in 1usize..8, cols in 1usize..8, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_mat(&mut rng, rows, cols);
            prop_assert!(min_eigenvalue_symmetric(&q.gram()).unwrap() >= -1e-9);
        }

        #[test]
        fn min_eigenvalue_is_permutation_invariant(n in 2usize..9, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_mat(&mut rng, n, n);
            let m = q.add(&q.transpose());
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let permuted = Mat::from_fn(n, n, |i, j| m[(perm[i], perm[j])]);
            let a = min_eigenvalue_symmetric(&m).unwrap();
            let b = min_eigenvalue_symmetric(&permuted).unwrap();
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}
