use super::{Real, Rng};
use crate::error::{Error, Result};

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Softmax with max-subtraction; exact shift invariance for finite logits.
pub fn softmax<T: Real>(logits: &[T]) -> Result<Vec<T>> {
    if logits.is_empty() {
        return Err(Error::Dimension("softmax of an empty vector".into()));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub fn softmax_in_place<T: Real>(z: &mut [T]) {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in z.iter_mut() {
        *v *= inv;
    }
}

pub fn log_softmax_in_place<T: Real>(z: &mut [T]) {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = z.iter().map(|&v| (v - max).exp()).sum();
    let log_norm = max + sum.ln();
    for v in z.iter_mut() {
        *v -= log_norm;
    }
}

/// `-log2 probs[target]`. Returns `+inf` when the target has probability 0;
/// the training loop treats that as a numeric failure.
pub fn cross_entropy_bits<T: Real>(probs: &[T], target: usize) -> Result<f64> {
    let p = *probs.get(target).ok_or(Error::Index {
        index: target,
        size: probs.len(),
    })?;
    let p = p.as_f64();
    if p <= 0.0 {
        return Ok(f64::INFINITY);
    }
    // -log2(1) must be +0, not -0.
    Ok(0.0 - p.log2())
}

/// Draw an index with probability proportional to `probs^(1/temperature)`,
/// i.e. `softmax(log(probs) / temperature)`.
pub fn sample_categorical<T: Real>(probs: &[T], rng: &mut Rng, temperature: f64) -> Result<usize> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Parameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if probs.is_empty() {
        return Err(Error::Dimension("sampling from an empty distribution".into()));
    }
    let logp: Vec<f64> = probs
        .iter()
        .map(|&p| {
            let p = p.as_f64();
            if p > 0.0 {
                p.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Parameter("distribution has no positive mass".into()));
    }
    let weights: Vec<f64> = logp.iter().map(|&l| ((l - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let u = rng.uniform() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            acc += w;
            if u < acc {
                return Ok(i);
            }
        }
    }
    Ok(last_positive)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use super::Rng;

    #[test]
    fn softmax_uniform() {
        let p = softmax(&[0.0f64, 0.0, 0.0]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_large_logits() {
        let p = softmax(&[1000.0f64, 1000.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_known_values() {
        // e^{z_i} / sum_j e^{z_j} evaluated directly for z = [1, 2, 3].
        let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|z| z.exp()).collect();
        let s: f64 = e.iter().sum();
        let direct: Vec<f64> = e.iter().map(|v| v / s).collect();
        let p = softmax(&[1.0f64, 2.0, 3.0]).unwrap();
        let frozen = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219];
        for i in 0..3 {
            assert!((p[i] - direct[i]).abs() < 1e-15);
            assert!((p[i] - frozen[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_empty_is_error() {
        assert!(softmax::<f64>(&[]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy_bits(&[0.5f64, 0.5], 1).unwrap(), 1.0);
        assert_eq!(cross_entropy_bits(&[0.0f64, 1.0], 1).unwrap(), 0.0);
        let u = vec![1.0f64 / 27.0; 27];
        assert!((cross_entropy_bits(&u, 3).unwrap() - 27f64.log2()).abs() < 1e-12);
        assert!((27f64.log2() - 4.7549).abs() < 1e-4);
        assert_eq!(cross_entropy_bits(&[1.0f64, 0.0], 1).unwrap(), f64::INFINITY);
        assert!(cross_entropy_bits(&[1.0f64], 1).is_err());
    }

    #[test]
    fn sampling_edge_cases() {
        let mut rng = Rng::new(1);
        for _ in 0..100 {
            assert_eq!(sample_categorical(&[1.0f64, 0.0], &mut rng, 1.0).unwrap(), 0);
        }
        assert!(sample_categorical(&[0.5f64, 0.5], &mut rng, 0.0).is_err());
        assert!(sample_categorical(&[0.5f64, 0.5], &mut rng, -1.0).is_err());
        // Vanishing temperature picks the mode.
        for _ in 0..100 {
            assert_eq!(
                sample_categorical(&[0.2f64, 0.5, 0.3], &mut rng, 1e-6).unwrap(),
                1
            );
        }
    }

    #[test]
    fn sampling_frequency() {
        let mut rng = Rng::new(2024);
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| sample_categorical(&[0.25f64, 0.75], &mut rng, 1.0).unwrap() == 1)
            .count();
        let freq = ones as f64 / n as f64;
        assert!((0.74..=0.76).contains(&freq), "{freq}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = [0.1f64, 0.2, 0.3, 0.4];
        let a: Vec<usize> = {
            let mut r = Rng::new(5);
            (0..50).map(|_| sample_categorical(&p, &mut r, 0.8).unwrap()).collect()
        };
        let b: Vec<usize> = {
            let mut r = Rng::new(5);
            (0..50).map(|_| sample_categorical(&p, &mut r, 0.8).unwrap()).collect()
        };
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            z in prop::collection::vec(-50.0f64..50.0, 1..40),
            c in -100.0f64..100.0,
        ) {
            let p = softmax(&z).unwrap();
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v > 0.0));
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn cross_entropy_monotone(a in 1e-9f64..1.0, b in 1e-9f64..1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let x = cross_entropy_bits(&[lo, 1.0 - lo], 0).unwrap();
            let y = cross_entropy_bits(&[hi, 1.0 - hi], 0).unwrap();
            prop_assert!(y <= x);
        }
    }
}
