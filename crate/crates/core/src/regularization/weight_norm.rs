use crate::error::{Error, Result};
use crate::math::{Matrix, Real};

/// Rows with a smaller direction norm cannot be normalized.
pub const MIN_ROW_NORM: f64 = 1e-12;

/// Direction/gain pair of a weight-normalized matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightNormState<T> {
    pub direction: Matrix<T>,
    pub gain: Vec<T>,
}

impl<T: Real> WeightNormState<T> {
    /// Gains equal to the current row norms, leaving the matrix unchanged.
    pub fn from_matrix(w: Matrix<T>) -> Self {
        let gain = row_norms(&w);
        WeightNormState { direction: w, gain }
    }

    pub fn effective(&self) -> Result<Matrix<T>> {
        weight_norm_effective(&self.direction, &self.gain, "weight")
    }
}

fn row_norms<T: Real>(v: &Matrix<T>) -> Vec<T> {
    (0..v.rows())
        .map(|r| v.row(r).iter().map(|&x| x * x).sum::<T>().sqrt())
        .collect()
}

/// Row `r` of the result is `g_r * v_r / |v_r|`.
pub fn weight_norm_effective<T: Real>(v: &Matrix<T>, g: &[T], name: &str) -> Result<Matrix<T>> {
    if g.len() != v.rows() {
        return Err(Error::Dimension(format!(
            "{name}: {} gains for {} rows",
            g.len(),
            v.rows()
        )));
    }
    let norms = row_norms(v);
    let mut out = v.clone();
    for (r, (&n, &gain)) in norms.iter().zip(g).enumerate() {
        if n.as_f64() < MIN_ROW_NORM {
            return Err(Error::DegenerateRow {
                tensor: name.to_string(),
                row: r,
                norm: n.as_f64(),
            });
        }
        let s = gain / n;
        out.row_mut(r).iter_mut().for_each(|x| *x *= s);
    }
    Ok(out)
}

/// Pull a gradient on the effective matrix back to `(direction, gain)`.
///
/// With `n = |v_r|`: `dg_r = dW_r . v_r / n` and
/// `dv_r = (g_r / n) (dW_r - dg_r v_r / n)`.
pub fn weight_norm_backward<T: Real>(v: &Matrix<T>, g: &[T], d_eff: &Matrix<T>) -> (Matrix<T>, Vec<T>) {
    let norms = row_norms(v);
    let mut dv = Matrix::zeros(v.rows(), v.cols());
    let mut dg = vec![T::zero(); v.rows()];
    for r in 0..v.rows() {
        let n = norms[r];
        let vr = v.row(r);
        let dr = d_eff.row(r);
        let dot = vr.iter().zip(dr).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        let dgr = dot / n;
        dg[r] = dgr;
        let scale = g[r] / n;
        let proj = dgr / n;
        for ((o, &d), &x) in dv.row_mut(r).iter_mut().zip(dr).zip(vr) {
            *o = scale * (d - proj * x);
        }
    }
    (dv, dg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Rng;
    use proptest::prelude::*;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut rng = Rng::new(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.uniform_range(-1.0, 1.0))
    }

    #[test]
    fn gains_at_row_norms_reproduce_direction() {
        let v = random(4, 6, 1);
        let s = WeightNormState::from_matrix(v.clone());
        assert!(s.effective().unwrap().max_abs_diff(&v) < 1e-15);
    }

    #[test]
    fn effective_rows_have_gain_norm() {
        let v = random(3, 5, 2);
        let g = [0.5, -2.0, 1.5];
        let w = weight_norm_effective(&v, &g, "w").unwrap();
        for r in 0..3 {
            let n: f64 = w.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - g[r].abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_row_is_degenerate() {
        let mut v = random(3, 3, 3);
        v.row_mut(1).fill(0.0);
        assert!(matches!(
            weight_norm_effective(&v, &[1.0; 3], "w"),
            Err(Error::DegenerateRow { row: 1, .. })
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let v = random(3, 4, 4);
        let g = vec![0.7, 1.3, -0.4];
        let probe = random(3, 4, 5);
        // loss = sum(probe * W_eff)
        let loss = |v: &Matrix<f64>, g: &[f64]| -> f64 {
            let w = weight_norm_effective(v, g, "w").unwrap();
            w.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let (dv, dg) = weight_norm_backward(&v, &g, &probe);
        let eps = 1e-6;
        for i in 0..v.len() {
            let mut p = v.clone();
            p.data_mut()[i] += eps;
            let mut m = v.clone();
            m.data_mut()[i] -= eps;
            let fd = (loss(&p, &g) - loss(&m, &g)) / (2.0 * eps);
            assert!((fd - dv.data()[i]).abs() < 1e-8);
        }
        for r in 0..3 {
            let mut gp = g.clone();
            gp[r] += eps;
            let mut gm = g.clone();
            gm[r] -= eps;
            let fd = (loss(&v, &gp) - loss(&v, &gm)) / (2.0 * eps);
            assert!((fd - dg[r]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn direction_scale_invariance(c in 1e-3f64..1e3, seed in 0u64..1000) {
            let v = random(4, 5, seed);
            let g = [0.3, 0.9, -1.1, 2.0];
            let a = weight_norm_effective(&v, &g, "w").unwrap();
            let b = weight_norm_effective(&v.scale(c), &g, "w").unwrap();
            prop_assert!(a.max_abs_diff(&b) < 1e-12);
        }
    }
}
