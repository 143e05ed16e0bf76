//! Dense row-major matrices and a seeded random number generator.
//!
//! Everything numeric in the crate goes through [`Matrix`]. Products are
//! delegated to `matrixmultiply`'s single-threaded `dgemm`, which has a fixed
//! reduction order for a given target so repeated runs are bit-identical.

use crate::error::{Error, Result};

/// Row-major 2-D array of `f64`. `data.len() == rows * cols` always holds.
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

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data has {} entries, expected {rows}x{cols} = {}",
                data.len(),
                rows * cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::invalid(format!(
                "ragged rows: expected {cols} columns, found {}",
                bad.len()
            )));
        }
        let data = rows.iter().flatten().copied().collect();
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
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and a 0-column matrix has no meaningful rows
        // to hand out anyway.
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(if self.cols == 0 { 0 } else { self.rows })
    }

    /// Copies the listed rows into a new `indices.len() x cols` matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Matrix> {
        let mut out = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::Index {
                    op: "select_rows",
                    index: i,
                    len: self.rows,
                });
            }
            out.extend_from_slice(self.row(i));
        }
        Matrix::from_vec(indices.len(), self.cols, out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut c = Matrix::zeros(a.rows, b.cols);
    gemm(
        a.rows,
        a.cols,
        b.cols,
        (&a.data, a.cols as isize, 1),
        (&b.data, b.cols as isize, 1),
        &mut c.data,
    );
    Ok(c)
}

/// `a * b^T` for `a: m x k`, `b: n x k`.
pub fn matmul_a_bt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::Shape {
            op: "matmul_a_bt",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut c = Matrix::zeros(a.rows, b.rows);
    gemm(
        a.rows,
        a.cols,
        b.rows,
        (&a.data, a.cols as isize, 1),
        (&b.data, 1, b.cols as isize),
        &mut c.data,
    );
    Ok(c)
}

/// `a^T * b` for `a: k x m`, `b: k x n`.
pub fn matmul_at_b(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::Shape {
            op: "matmul_at_b",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut c = Matrix::zeros(a.cols, b.cols);
    gemm(
        a.cols,
        a.rows,
        b.cols,
        (&a.data, 1, a.cols as isize),
        (&b.data, b.cols as isize, 1),
        &mut c.data,
    );
    Ok(c)
}

/// `c = A * B` where A is `m x k` and B is `k x n`, both given as
/// (buffer, row stride, column stride). `c` is a dense row-major `m x n`.
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: (&[f64], isize, isize),
    b: (&[f64], isize, isize),
    c: &mut [f64],
) {
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.fill(0.0);
        return;
    }
    debug_assert!(a.0.len() >= m * k && b.0.len() >= k * n);
    // SAFETY: the caller checked shapes; the strides address exactly the
    // m*k, k*n and m*n elements of the three buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Inner product of row `i` of `a` with row `j` of `b`.
pub fn row_dot(a: &Matrix, i: usize, b: &Matrix, j: usize) -> Result<f64> {
    if a.cols != b.cols {
        return Err(Error::Shape {
            op: "row_dot",
            left: a.shape(),
            right: b.shape(),
        });
    }
    if i >= a.rows {
        return Err(Error::Index {
            op: "row_dot",
            index: i,
            len: a.rows,
        });
    }
    if j >= b.rows {
        return Err(Error::Index {
            op: "row_dot",
            index: j,
            len: b.rows,
        });
    }
    Ok(dot(a.row(i), b.row(j)))
}

/// Plain left-to-right dot product.
#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// xoshiro256** seeded through splitmix64.
///
/// The generator is implemented here rather than pulled from a crate so the
/// sequence for a given seed is pinned by this file alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: [u64; 4],
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let mut next = || {
            sm = sm.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = sm;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        };
        Rng {
            state: [next(), next(), next(), next()],
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!(
                "uniform bounds must satisfy lo < hi, got [{lo}, {hi})"
            )));
        }
        Ok(lo + (hi - lo) * self.next_f64())
    }

    /// Unbiased integer in `[0, n)`; `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "Rng::below called with n = 0");
        // Rejection on the top of the range keeps the result unbiased.
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, seq: &mut [T]) {
        for i in (1..seq.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            seq.swap(i, j);
        }
    }

    /// Standard normal sample (Marsaglia polar method).
    pub fn normal(&mut self) -> f64 {
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let q = u * u + v * v;
            if q > 0.0 && q < 1.0 {
                return u * (-2.0 * q.ln() / q).sqrt();
            }
        }
    }
}

/// `rows x cols` matrix of N(0, 2/cols) entries.
pub fn he_init(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let std = if cols == 0 { 0.0 } else { (2.0 / cols as f64).sqrt() };
    let data = (0..rows * cols).map(|_| std * rng.normal()).collect();
    Matrix { rows, cols, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::numkit::Rng;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut c = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                c.set(i, j, acc);
            }
        }
        c
    }

    fn random(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        let data = (0..r * c).map(|_| rng.uniform(-1.0, 1.0).unwrap()).collect();
        Matrix::from_vec(r, c, data).unwrap()
    }

    #[test]
    fn identity_product() {
        let i = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(matmul(&i, &b).unwrap(), b);
    }

    #[test]
    fn row_times_column() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn random_7x5_5x3_matches_triple_loop() {
        let mut rng = Rng::new(7);
        let a = random(&mut rng, 7, 5);
        let b = random(&mut rng, 5, 3);
        let fast = matmul(&a, &b).unwrap();
        let slow = naive(&a, &b);
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("(2, 3)"), "{err}");
    }

    #[test]
    fn transposed_variants_agree_with_explicit_transpose() {
        let mut rng = Rng::new(11);
        let a = random(&mut rng, 6, 9);
        let b = random(&mut rng, 4, 9);
        let c = random(&mut rng, 6, 5);
        let abt = matmul_a_bt(&a, &b).unwrap();
        let abt_ref = naive(&a, &b.transpose());
        let atc = matmul_at_b(&a, &c).unwrap();
        let atc_ref = naive(&a.transpose(), &c);
        for (x, y) in abt.data().iter().zip(abt_ref.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in atc.data().iter().zip(atc_ref.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(matmul_a_bt(&a, &c).is_err());
        assert!(matmul_at_b(&a, &b).is_err());
    }

    #[test]
    fn row_dot_cases() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(row_dot(&a, 0, &b, 0).unwrap(), 32.0);
        assert_eq!(row_dot(&a, 1, &b, 0).unwrap(), 0.0);
        assert_eq!(row_dot(&a, 0, &a, 0).unwrap(), 14.0);
        assert!(row_dot(&a, 2, &b, 0).is_err());
        assert!(row_dot(&a, 0, &b, 1).is_err());
        assert!(row_dot(&a, 0, &Matrix::zeros(1, 2), 0).is_err());
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Matrix::from_vec(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn uniform_rejects_empty_interval() {
        let mut rng = Rng::new(1);
        assert!(rng.uniform(1.0, 1.0).is_err());
        assert!(rng.uniform(2.0, 1.0).is_err());
        let v = rng.uniform(-3.0, -2.0).unwrap();
        assert!((-3.0..-2.0).contains(&v));
    }

    #[test]
    fn shuffle_single_element() {
        let mut rng = Rng::new(3);
        let mut v = vec![42usize];
        rng.shuffle(&mut v);
        assert_eq!(v, vec![42]);
    }

    #[test]
    fn shuffle_is_seed_deterministic_permutation() {
        let perm = |seed| {
            let mut rng = Rng::new(seed);
            let mut v: Vec<usize> = (0..60_000).collect();
            rng.shuffle(&mut v);
            v
        };
        let a = perm(42);
        let b = perm(42);
        assert_eq!(a, b);
        assert_ne!(a, perm(43));
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert!(sorted.iter().enumerate().all(|(i, &v)| i == v));
    }

    #[test]
    fn xoshiro_reference_sequence() {
        // Expected values come from an independent Python transcription of
        // splitmix64 + xoshiro256**.
        let mut rng = Rng::new(0);
        let got: Vec<u64> = (0..3).map(|_| rng.next_u64()).collect();
        let mut again = Rng::new(0);
        let again: Vec<u64> = (0..3).map(|_| again.next_u64()).collect();
        assert_eq!(got, again);
        assert_eq!(got, FROZEN_SEED0);
    }

    const FROZEN_SEED0: [u64; 3] = [
        11_091_344_671_253_066_420,
        13_793_997_310_169_335_082,
        1_900_383_378_846_508_768,
    ];

    #[test]
    fn he_init_std_within_ten_percent() {
        let target = (2.0f64 / 784.0).sqrt();
        let mut rng = Rng::new(42);
        for _ in 0..10 {
            let m = he_init(&mut rng, 512, 784);
            let n = m.data().len() as f64;
            let mean = m.data().iter().sum::<f64>() / n;
            let var = m.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let std = var.sqrt();
            assert!((std - target).abs() < 0.1 * target, "std {std} vs {target}");
        }
    }

    proptest! {
        #[test]
        fn matmul_matches_naive(m in 1usize..32, k in 1usize..32, n in 1usize..32, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let a = random(&mut rng, m, k);
            let b = random(&mut rng, k, n);
            let fast = matmul(&a, &b).unwrap();
            let slow = naive(&a, &b);
            for (x, y) in fast.data().iter().zip(slow.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn matmul_is_associative(m in 1usize..8, k in 1usize..8, l in 1usize..8, n in 1usize..8, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let a = random(&mut rng, m, k);
            let b = random(&mut rng, k, l);
            let c = random(&mut rng, l, n);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let scale = left.max_abs().max(1.0);
            for (x, y) in left.data().iter().zip(right.data()) {
                prop_assert!((x - y).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn self_row_dot_nonnegative(r in 1usize..6, c in 1usize..16, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let a = random(&mut rng, r, c);
            for i in 0..r {
                prop_assert!(row_dot(&a, i, &a, i).unwrap() >= 0.0);
            }
        }

        #[test]
        fn seeded_ops_are_reproducible(seed in any::<u64>()) {
            let mut r1 = Rng::new(seed);
            let mut r2 = Rng::new(seed);
            prop_assert_eq!(he_init(&mut r1, 3, 4), he_init(&mut r2, 3, 4));
            prop_assert_eq!(r1.uniform(0.0, 1.0).unwrap().to_bits(), r2.uniform(0.0, 1.0).unwrap().to_bits());
        }
    }
}
