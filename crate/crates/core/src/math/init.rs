use nalgebra::DMatrix;

use super::{Matrix, Real, Rng};
use crate::error::{Error, Result};

/// `scale * Q` for a Haar-distributed orthogonal `Q`.
///
/// `Q` comes from the QR factorization of a matrix of standard normals,
/// with column signs flipped so that `diag(R)` is positive. The
/// factorization runs in `f64` regardless of `T`.
pub fn scaled_orthogonal<T: Real>(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Result<Matrix<T>> {
    if rows != cols {
        return Err(Error::Dimension(format!(
            "orthogonal initialization needs a square matrix, got {rows}x{cols}"
        )));
    }
    if !(scale > 0.0) {
        return Err(Error::Parameter(format!("orthogonal scale must be positive, got {scale}")));
    }
    let n = rows;
    let mut draws = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        draws.push(rng.normal());
    }
    // nalgebra is column-major; fill row-major to keep the draw order natural.
    let g = DMatrix::from_row_slice(n, n, &draws);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Ok(Matrix::from_fn(n, n, |i, j| T::lit(scale * q[(i, j)])))
}

/// Uniform in `[-s, s]` with `s = 1 / sqrt(fan_in)`.
pub fn uniform_fan_in<T: Real>(rows: usize, cols: usize, fan_in: usize, rng: &mut Rng) -> Matrix<T> {
    let s = 1.0 / (fan_in.max(1) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| T::lit(rng.uniform_range(-s, s)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gram_error(w: &Matrix<f64>, expected_diag: f64) -> f64 {
        let g = w.transpose().matmul(w).unwrap();
        let target = Matrix::identity(w.rows()).scale(expected_diag);
        g.max_abs_diff(&target)
    }

    /// Largest singular value of `m` by power iteration on `m^T m`.
    fn spectral_norm(m: &Matrix<f64>) -> f64 {
        let mtm = m.transpose().matmul(m).unwrap();
        let mut v = vec![1.0; m.cols()];
        let mut lambda = 0.0;
        for _ in 0..2000 {
            let w = mtm.matvec(&v).unwrap();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            lambda = norm;
            v = w.iter().map(|x| x / norm).collect();
        }
        lambda.sqrt()
    }

    #[test]
    fn unit_scale_is_orthogonal() {
        let mut rng = Rng::new(3);
        for n in [1, 2, 5, 16, 64] {
            let w = scaled_orthogonal::<f64>(n, n, 1.0, &mut rng).unwrap();
            assert!(gram_error(&w, 1.0) < 1e-10, "n={n}");
        }
    }

    #[test]
    fn scale_07_gives_049_gram() {
        let mut rng = Rng::new(4);
        let w = scaled_orthogonal::<f64>(8, 8, 0.7, &mut rng).unwrap();
        assert!(gram_error(&w, 0.49) < 1e-10);
    }

    #[test]
    fn product_of_two_scaled_has_norm_049() {
        let mut rng = Rng::new(5);
        let a = scaled_orthogonal::<f64>(8, 8, 0.7, &mut rng).unwrap();
        let b = scaled_orthogonal::<f64>(8, 8, 0.7, &mut rng).unwrap();
        let p = a.matmul(&b).unwrap();
        // Every singular value of the product equals 0.49, so the spectral
        // norm and the spectral radius coincide.
        assert!((spectral_norm(&p) - 0.49).abs() < 1e-8);
    }

    #[test]
    fn non_square_is_rejected() {
        let mut rng = Rng::new(0);
        assert!(scaled_orthogonal::<f64>(3, 4, 1.0, &mut rng).is_err());
    }

    #[test]
    fn deterministic() {
        let a = scaled_orthogonal::<f32>(6, 6, 0.7, &mut Rng::new(77)).unwrap();
        let b = scaled_orthogonal::<f32>(6, 6, 0.7, &mut Rng::new(77)).unwrap();
        assert_eq!(a, b);
    }
}
