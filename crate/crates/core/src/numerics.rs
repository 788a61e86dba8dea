//! Dense row-major linear algebra and the seeded random source.
//!
//! Everything is `f64`. Dimension checks fail fast; nothing broadcasts.
//! Batched network code stores one sample per matrix row, so the hot
//! products are `Y·Kᵀ`, `Q·K` and `Qᵀ·Y`, all routed through [`gemm`].

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};

pub type Vector = Vec<f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
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
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("Matrix::from_vec", rows * cols, data.len())?;
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally long rows. An empty slice gives a 0×0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim("Matrix::from_rows", cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and a matrix with zero columns has no data anyway
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        check_dim("Matrix::axpy rows", self.rows, other.rows)?;
        check_dim("Matrix::axpy cols", self.cols, other.cols)?;
        axpy(alpha, &other.data, &mut self.data);
        Ok(())
    }

    /// Adds `v` to every row.
    pub fn add_row_vector(&mut self, v: &[f64]) -> Result<()> {
        check_dim("Matrix::add_row_vector", self.cols, v.len())?;
        for i in 0..self.rows {
            axpy(1.0, v, self.row_mut(i));
        }
        Ok(())
    }

    /// Column sums, i.e. `1ᵀ·self`.
    pub fn column_sums(&self) -> Vector {
        let mut s = vec![0.0; self.cols];
        for r in self.row_iter() {
            axpy(1.0, r, &mut s);
        }
        s
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Standard matrix-vector product.
pub fn matvec(m: &Matrix, v: &[f64]) -> Result<Vector> {
    check_dim("matvec", m.cols, v.len())?;
    Ok(m.row_iter().map(|r| dot(r, v)).collect())
}

/// `mᵀ·v` without forming the transpose.
pub fn matvec_t(m: &Matrix, v: &[f64]) -> Result<Vector> {
    check_dim("matvec_t", m.rows, v.len())?;
    let mut out = vec![0.0; m.cols];
    for (r, &vi) in m.row_iter().zip(v) {
        axpy(vi, r, &mut out);
    }
    Ok(out)
}

/// `result[i][j] = u[i] * v[j]`.
pub fn outer(u: &[f64], v: &[f64]) -> Matrix {
    let mut m = Matrix::zeros(u.len(), v.len());
    for (i, &ui) in u.iter().enumerate() {
        for (j, &vj) in v.iter().enumerate() {
            m.data[i * v.len() + j] = ui * vj;
        }
    }
    m
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transpose {
    No,
    Yes,
}

impl Transpose {
    fn apply(self, m: &Matrix) -> (usize, usize, isize, isize) {
        match self {
            Transpose::No => (m.rows, m.cols, m.cols as isize, 1),
            Transpose::Yes => (m.cols, m.rows, 1, m.cols as isize),
        }
    }
}

/// Below this many multiply-adds the packing overhead of the blocked kernel
/// dominates and a plain loop is faster.
const BLOCKED_GEMM_THRESHOLD: usize = 32 * 32 * 32;

/// `c = alpha · op(a) · op(b) + beta · c`.
///
/// With `beta == 0` the previous contents of `c` are ignored (NaNs included).
/// Results depend only on the operand shapes and values, never on timing, so
/// repeated calls are bit-identical.
pub fn gemm(
    alpha: f64,
    a: &Matrix,
    ta: Transpose,
    b: &Matrix,
    tb: Transpose,
    beta: f64,
    c: &mut Matrix,
) -> Result<()> {
    let (m, k, rsa, csa) = ta.apply(a);
    let (kb, n, rsb, csb) = tb.apply(b);
    check_dim("gemm inner", k, kb)?;
    check_dim("gemm rows", m, c.rows)?;
    check_dim("gemm cols", n, c.cols)?;
    if m == 0 || n == 0 {
        return Ok(());
    }
    if k == 0 {
        if beta == 0.0 {
            c.fill(0.0);
        } else {
            c.scale(beta);
        }
        return Ok(());
    }
    if m * n * k < BLOCKED_GEMM_THRESHOLD {
        small_gemm(alpha, a, (rsa, csa), b, (rsb, csb), beta, c, k);
        return Ok(());
    }
    // SAFETY: the strides describe in-bounds views of `a`, `b` and `c`, whose
    // shapes were checked above; `c` does not alias `a` or `b` (&mut borrow).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn small_gemm(
    alpha: f64,
    a: &Matrix,
    (rsa, csa): (isize, isize),
    b: &Matrix,
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut Matrix,
    k: usize,
) {
    let (rsa, csa, rsb, csb) = (rsa as usize, csa as usize, rsb as usize, csb as usize);
    let n = c.cols;
    for i in 0..c.rows {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a.data[i * rsa + p * csa] * b.data[p * rsb + j * csb];
            }
            let out = &mut c.data[i * n + j];
            *out = if beta == 0.0 {
                alpha * acc
            } else {
                beta * *out + alpha * acc
            };
        }
    }
}

/// Deterministic, splittable random source.
///
/// A state is a ChaCha8 stream keyed by a 64-bit seed. [`RngState::child`]
/// derives an independent stream from `(seed, index)` alone, so consumers that
/// take children by index see the same numbers regardless of the order in
/// which the children are created or consumed.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream; depends only on this state's seed and `index`.
    pub fn child(&self, index: u64) -> RngState {
        RngState::new(splitmix64(self.seed ^ splitmix64(index.wrapping_add(1))))
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u: f64 = self.inner.random();
        lo + (hi - lo) * u
    }

    pub fn normal(&mut self, mean: f64, stddev: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.inner);
        mean + stddev * z
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

/// `n` i.i.d. normal draws.
pub fn gaussian(rng: &mut RngState, n: usize, mean: f64, stddev: f64) -> Vector {
    debug_assert!(stddev >= 0.0);
    (0..n).map(|_| rng.normal(mean, stddev)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn matvec_examples() {
        let i2 = Matrix::identity(2);
        assert_eq!(matvec(&i2, &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        assert_eq!(
            matvec(&Matrix::zeros(2, 2), &[1.0, 1.0]).unwrap(),
            vec![0.0, 0.0]
        );
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(matvec(&m, &[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn matvec_rejects_mismatch() {
        let m = Matrix::zeros(2, 3);
        assert!(matches!(
            matvec(&m, &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn outer_examples() {
        assert_eq!(
            outer(&[1.0, 0.0], &[0.0, 1.0]),
            Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]).unwrap()
        );
        assert_eq!(outer(&[0.0, 0.0], &[5.0, 6.0]), Matrix::zeros(2, 2));
        assert_eq!(
            outer(&[2.0, 3.0], &[4.0, 5.0]),
            Matrix::from_rows(&[[8.0, 10.0], [12.0, 15.0]]).unwrap()
        );
    }

    #[test]
    fn gaussian_examples() {
        let mut rng = RngState::new(3);
        assert_eq!(gaussian(&mut rng, 5, 1.25, 0.0), vec![1.25; 5]);

        let a = gaussian(&mut RngState::new(11), 64, 0.0, 1.0);
        let b = gaussian(&mut RngState::new(11), 64, 0.0, 1.0);
        assert_eq!(a, b);

        let n = 100_000;
        let xs = gaussian(&mut RngState::new(12345), n, 0.0, 1.0);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "stddev {}", var.sqrt());
    }

    #[test]
    fn children_are_order_independent() {
        let root = RngState::new(9);
        let mut c1 = root.child(1);
        let mut c0 = root.child(0);
        let x1 = c1.uniform(0.0, 1.0);
        let x0 = c0.uniform(0.0, 1.0);
        assert_eq!(root.child(0).uniform(0.0, 1.0), x0);
        assert_eq!(root.child(1).uniform(0.0, 1.0), x1);
        assert_ne!(x0, x1);
    }

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut c = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a.get(i, p) * b.get(p, j);
                }
                c.set(i, j, s);
            }
        }
        c
    }

    fn random_matrix(rng: &mut RngState, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn gemm_matches_naive_for_all_transposes_and_sizes() {
        let mut rng = RngState::new(5);
        for &(m, k, n) in &[(2, 3, 4), (5, 40, 40), (7, 64, 33)] {
            let a = random_matrix(&mut rng, m, k);
            let b = random_matrix(&mut rng, k, n);
            let expected = naive(&a, &b);
            let c0 = random_matrix(&mut rng, m, n);
            for (ta, aa) in [(Transpose::No, a.clone()), (Transpose::Yes, a.transpose())] {
                for (tb, bb) in [(Transpose::No, b.clone()), (Transpose::Yes, b.transpose())] {
                    let mut c = c0.clone();
                    gemm(2.0, &aa, ta, &bb, tb, 0.5, &mut c).unwrap();
                    for i in 0..m {
                        for j in 0..n {
                            let want = 2.0 * expected.get(i, j) + 0.5 * c0.get(i, j);
                            assert!((c.get(i, j) - want).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn gemm_beta_zero_ignores_nan() {
        let a = Matrix::identity(2);
        let mut c = Matrix::from_vec(2, 2, vec![f64::NAN; 4]).unwrap();
        gemm(1.0, &a, Transpose::No, &a, Transpose::No, 0.0, &mut c).unwrap();
        assert_eq!(c, Matrix::identity(2));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(-1e3f64..1e3, 0..8)
        }

        proptest! {
            #[test]
            fn identity_matvec_is_exact(v in vec_strategy()) {
                prop_assert_eq!(matvec(&Matrix::identity(v.len()), &v).unwrap(), v);
            }

            #[test]
            fn outer_transpose_swaps_arguments(u in vec_strategy(), v in vec_strategy()) {
                prop_assert_eq!(outer(&u, &v).transpose(), outer(&v, &u));
            }

            #[test]
            fn equal_seeds_give_equal_streams(seed in any::<u64>()) {
                let a = gaussian(&mut RngState::new(seed), 16, 0.0, 1.0);
                let b = gaussian(&mut RngState::new(seed), 16, 0.0, 1.0);
                prop_assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                                b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            }
        }
    }
}
