use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};

/// Dense row-major matrix. Vectors are stored as `n x 1` or `1 x n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
    }

    /// Column vector (`n x 1`).
    pub fn column_vector(values: Vec<T>) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values,
        }
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
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            T::one(),
            (&self.data, self.cols, 1),
            (&other.data, other.cols, 1),
            T::zero(),
            (&mut out.data, other.cols, 1),
        );
        Ok(out)
    }

    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return Err(Error::Dimension(format!(
                "{}x{} matrix times vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(x)
                    .fold(T::zero(), |acc, (&w, &v)| acc + w * v)
            })
            .collect())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Matrix<T>) {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in add_assign");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix<T>) -> f64 {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in max_abs_diff");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs().as_f64())
            .fold(0.0, f64::max)
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|&v| v.as_f64() * v.as_f64()).sum()
    }

    /// Element type conversion through `f64`.
    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }
}

#[derive(Clone, Copy)]
struct SendPtr<T>(*mut T);
unsafe impl<T> Send for SendPtr<T> {}
unsafe impl<T> Sync for SendPtr<T> {}

fn span(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// Below this many rows the packed kernel spends most of its time packing
/// `b`, which is the whole weight matrix during single-lane evaluation.
pub(crate) const SMALL_ROWS: usize = 4;

/// Dot product with eight independent accumulators so it vectorizes.
fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (xs, ys) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] += xs[l] * ys[l];
        }
    }
    let mut tail = T::zero();
    for (&u, &v) in xr.iter().zip(yr) {
        tail += u * v;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Row-at-a-time product for a handful of rows. Operands were bounds-checked
/// by the caller.
#[allow(clippy::too_many_arguments)]
fn small_gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    (a, rsa, csa): (&[T], usize, usize),
    (b, rsb, csb): (&[T], usize, usize),
    beta: T,
    (c, rsc, csc): (&mut [T], usize, usize),
) {
    let mut row = vec![T::zero(); n];
    let mut ai = vec![T::zero(); k];
    let mut bj = vec![T::zero(); if rsb == 1 { 0 } else { k }];
    for i in 0..m {
        for (p, v) in ai.iter_mut().enumerate() {
            *v = a[i * rsa + p * csa];
        }
        if rsb == 1 && k > 0 {
            // Columns of `b` are contiguous: one dot product per output.
            for (j, r) in row.iter_mut().enumerate() {
                *r = dot(&ai, &b[j * csb..j * csb + k]);
            }
        } else if csb == 1 {
            // Rows of `b` are contiguous: accumulate scaled rows.
            row.fill(T::zero());
            for (p, &av) in ai.iter().enumerate() {
                for (r, &bv) in row.iter_mut().zip(&b[p * rsb..p * rsb + n]) {
                    *r += av * bv;
                }
            }
        } else {
            for (j, r) in row.iter_mut().enumerate() {
                for (p, v) in bj.iter_mut().enumerate() {
                    *v = b[p * rsb + j * csb];
                }
                *r = dot(&ai, &bj);
            }
        }
        for (j, &r) in row.iter().enumerate() {
            let cij = &mut c[i * rsc + j * csc];
            *cij = if beta == T::zero() { alpha * r } else { beta * *cij + alpha * r };
        }
    }
}

/// `c <- alpha * a * b + beta * c` with `a` (m x k), `b` (k x n), `c` (m x n).
///
/// Each operand is a slice plus `(row_stride, col_stride)`, so transposes and
/// column blocks of wider buffers are free. When the global rayon pool has
/// more than one thread, large products are split by rows of `c`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: (&[T], usize, usize),
    b: (&[T], usize, usize),
    beta: T,
    c: (&mut [T], usize, usize),
) {
    let (a, rsa, csa) = a;
    let (b, rsb, csb) = b;
    let (c, rsc, csc) = c;
    assert!(span(m, k, rsa, csa) <= a.len(), "gemm: lhs out of bounds");
    assert!(span(k, n, rsb, csb) <= b.len(), "gemm: rhs out of bounds");
    assert!(span(m, n, rsc, csc) <= c.len(), "gemm: output out of bounds");
    if m == 0 || n == 0 {
        return;
    }

    if m < SMALL_ROWS {
        small_gemm(m, k, n, alpha, (a, rsa, csa), (b, rsb, csb), beta, (c, rsc, csc));
        return;
    }

    let threads = rayon::current_num_threads();
    const MIN_ROWS: usize = 16;
    if threads > 1 && m >= 2 * MIN_ROWS && m * n * k >= 1 << 20 {
        let chunk = m.div_ceil(threads).max(MIN_ROWS);
        let cptr = SendPtr(c.as_mut_ptr());
        let aptr = a.as_ptr() as usize;
        let bptr = b.as_ptr() as usize;
        rayon::scope(|s| {
            let mut start = 0;
            while start < m {
                let rows = chunk.min(m - start);
                s.spawn(move |_| {
                    let cptr = cptr;
                    // SAFETY: row blocks of `c` are disjoint and bounds were
                    // checked for the whole product above.
                    unsafe {
                        T::gemm_raw(
                            rows,
                            k,
                            n,
                            alpha,
                            (aptr as *const T).add(start * rsa),
                            rsa as isize,
                            csa as isize,
                            bptr as *const T,
                            rsb as isize,
                            csb as isize,
                            beta,
                            cptr.0.add(start * rsc),
                            rsc as isize,
                            csc as isize,
                        );
                    }
                });
                start += rows;
            }
        });
        return;
    }

    // SAFETY: all three operands were bounds-checked above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// [`gemm`] over `steps` consecutive blocks of `lanes` rows of `a` and `c`.
///
/// The packed kernel and the small-row path round differently, so a single
/// gemm over every row would depend on how many steps a window holds. Here
/// the kernel choice depends only on `lanes`, so a whole window and the same
/// steps issued one at a time give identical rows.
#[allow(clippy::too_many_arguments)]
pub fn gemm_steps<T: Real>(
    steps: usize,
    lanes: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: (&[T], usize, usize),
    b: (&[T], usize, usize),
    beta: T,
    c: (&mut [T], usize, usize),
) {
    if lanes >= SMALL_ROWS || steps <= 1 {
        gemm(steps * lanes, k, n, alpha, a, b, beta, c);
        return;
    }
    let (a, rsa, csa) = a;
    let (c, rsc, csc) = c;
    for t in 0..steps {
        gemm(
            lanes,
            k,
            n,
            alpha,
            (&a[t * lanes * rsa..], rsa, csa),
            b,
            beta,
            (&mut c[t * lanes * rsc..], rsc, csc),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn few_rows_match_packed_kernel() {
        let (k, n) = (13, 9);
        let a: Vec<f64> = (0..3 * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        // b as k x n row-major, then the same values read through its transpose.
        let bt = Matrix::from_vec(k, n, b.clone()).unwrap().transpose().into_data();
        for m in 1..=3 {
            let mut want = vec![1.0; m * n];
            unsafe {
                f64::gemm_raw(m, k, n, 0.5, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, 2.0, want.as_mut_ptr(), n as isize, 1);
            }
            for (bb, rs, cs) in [(&b, n, 1), (&bt, 1, k)] {
                let mut got = vec![1.0; m * n];
                gemm(m, k, n, 0.5, (&a, k, 1), (bb, rs, cs), 2.0, (&mut got, n, 1));
                for (x, y) in got.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
        let mut c = vec![7.0; 2];
        gemm(1, 0, 2, 1.0, (&[], 1, 1), (&[], 1, 1), 0.0, (&mut c, 2, 1));
        assert_eq!(c, [0.0, 0.0]);
    }

    #[test]
    fn step_blocks_do_not_depend_on_step_count() {
        let (steps, k, n) = (6, 11, 7);
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.23).cos()).collect();
        for lanes in 1..=5 {
            let a: Vec<f64> = (0..steps * lanes * k).map(|i| (i as f64 * 0.41).sin()).collect();
            let mut whole = vec![0.5; steps * lanes * n];
            gemm_steps(steps, lanes, k, n, 1.0, (&a, k, 1), (&b, 1, k), 1.0, (&mut whole, n, 1));
            for t in 0..steps {
                let mut one = vec![0.5; lanes * n];
                gemm_steps(1, lanes, k, n, 1.0, (&a[t * lanes * k..], k, 1), (&b, 1, k), 1.0, (&mut one, n, 1));
                assert_eq!(one[..], whole[t * lanes * n..(t + 1) * lanes * n], "lanes {lanes} step {t}");
            }
        }
    }

    #[test]
    fn matmul_small() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Matrix::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn gemm_transposed_block() {
        // c (2x2) = a^T b with a stored 3x2 and b the second column block of a 3x4 buffer.
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [0.0f64, 0.0, 1.0, 2.0, 0.0, 0.0, 3.0, 4.0, 0.0, 0.0, 5.0, 6.0];
        let mut c = [0.0f64; 4];
        gemm(2, 3, 2, 1.0, (&a, 1, 2), (&b[2..], 4, 1), 0.0, (&mut c, 2, 1));
        assert_eq!(c, [35.0, 44.0, 44.0, 56.0]);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Matrix::<f64>::from_vec(2, 2, vec![1.0]).is_err());
    }

    #[test]
    fn matvec_matches_matmul() {
        let a = Matrix::from_fn(4, 3, |r, c| (r * 3 + c) as f64 * 0.5 - 1.0);
        let x = vec![0.25, -1.0, 2.0];
        let y = a.matvec(&x).unwrap();
        let y2 = a.matmul(&Matrix::column_vector(x)).unwrap();
        assert_eq!(y, y2.data());
    }
}
