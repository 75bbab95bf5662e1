use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Matrix, Real, Rng};

/// Dropout rates and placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutConfig {
    /// Rate on `h_{t-1}` where it enters the recurrent matrices.
    pub hidden: f64,
    /// Rate on the embedding output.
    pub embed: f64,
    /// Also mask `h_t` before the output layer, with the same mask.
    pub output_path: bool,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        DropoutConfig {
            hidden: 0.0,
            embed: 0.0,
            output_path: true,
        }
    }
}

impl DropoutConfig {
    pub fn is_active(&self) -> bool {
        self.hidden > 0.0 || self.embed > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("dropout_hidden", self.hidden), ("dropout_embed", self.embed)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Parameter(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        Ok(())
    }
}

/// Inverted-dropout masks for one truncation window.
///
/// Each row belongs to one batch lane and is reused unchanged at every
/// timestep of the window. Entries are `0` or `1/(1-p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks<T> {
    pub lanes: usize,
    /// `lanes x embed`, when embedding dropout is on.
    pub embed: Option<Matrix<T>>,
    /// One `lanes x hidden` mask per layer, when hidden dropout is on.
    pub hidden: Option<Vec<Matrix<T>>>,
    /// Apply the top layer's hidden mask to `h_t` before `W_out`.
    pub output_path: bool,
    pub rate_hidden: f64,
    pub rate_embed: f64,
}

impl<T: Real> DropoutMasks<T> {
    /// Masks that keep every unit; equivalent to no dropout.
    pub fn ones(lanes: usize, embed: usize, hidden: usize, layers: usize, output_path: bool) -> Self {
        DropoutMasks {
            lanes,
            embed: (embed > 0).then(|| Matrix::filled(lanes, embed, T::one())),
            hidden: Some(vec![Matrix::filled(lanes, hidden, T::one()); layers]),
            output_path,
            rate_hidden: 0.0,
            rate_embed: 0.0,
        }
    }

    pub fn hidden_mask(&self, layer: usize) -> Option<&Matrix<T>> {
        self.hidden.as_ref().map(|v| &v[layer])
    }

    pub fn cast<U: Real>(&self) -> DropoutMasks<U> {
        DropoutMasks {
            lanes: self.lanes,
            embed: self.embed.as_ref().map(|m| m.cast()),
            hidden: self.hidden.as_ref().map(|v| v.iter().map(|m| m.cast()).collect()),
            output_path: self.output_path,
            rate_hidden: self.rate_hidden,
            rate_embed: self.rate_embed,
        }
    }
}

/// One mask vector: each entry is 0 with probability `p`, else `1/(1-p)`.
pub fn sample_mask<T: Real>(len: usize, p: f64, rng: &mut Rng) -> Result<Vec<T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Parameter(format!("dropout rate must lie in [0, 1), got {p}")));
    }
    if p == 0.0 {
        return Ok(vec![T::one(); len]);
    }
    let keep = T::lit(1.0 / (1.0 - p));
    Ok((0..len)
        .map(|_| if rng.uniform() < p { T::zero() } else { keep })
        .collect())
}

/// Fresh masks for every lane of a window. Lanes are drawn in order, embedding
/// mask first, then the hidden mask of each layer.
pub fn sample_masks<T: Real>(
    lanes: usize,
    embed: usize,
    hidden: usize,
    layers: usize,
    config: &DropoutConfig,
    rng: &mut Rng,
) -> Result<DropoutMasks<T>> {
    config.validate()?;
    let use_embed = embed > 0 && config.embed > 0.0;
    let use_hidden = config.hidden > 0.0;
    let mut emb = use_embed.then(|| Matrix::zeros(lanes, embed));
    let mut hid = use_hidden.then(|| vec![Matrix::zeros(lanes, hidden); layers]);
    for lane in 0..lanes {
        if let Some(m) = emb.as_mut() {
            let v = sample_mask::<T>(embed, config.embed, rng)?;
            m.row_mut(lane).copy_from_slice(&v);
        }
        if let Some(ms) = hid.as_mut() {
            for m in ms.iter_mut() {
                let v = sample_mask::<T>(hidden, config.hidden, rng)?;
                m.row_mut(lane).copy_from_slice(&v);
            }
        }
    }
    Ok(DropoutMasks {
        lanes,
        embed: emb,
        hidden: hid,
        output_path: config.output_path,
        rate_hidden: config.hidden,
        rate_embed: config.embed,
    })
}

/// Elementwise `h * mask`.
pub fn apply_hidden_mask<T: Real>(h: &[T], mask: &[T]) -> Result<Vec<T>> {
    if h.len() != mask.len() {
        return Err(Error::Dimension(format!(
            "hidden vector of length {} with mask of length {}",
            h.len(),
            mask.len()
        )));
    }
    Ok(h.iter().zip(mask).map(|(&a, &m)| a * m).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_keeps_everything() {
        let m = sample_mask::<f64>(100, 0.0, &mut Rng::new(0)).unwrap();
        assert!(m.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rate_one_is_rejected() {
        assert!(sample_mask::<f64>(3, 1.0, &mut Rng::new(0)).is_err());
        assert!(sample_mask::<f64>(3, -0.1, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn half_rate_statistics() {
        let m = sample_mask::<f64>(100_000, 0.5, &mut Rng::new(11)).unwrap();
        let zeros = m.iter().filter(|&&v| v == 0.0).count() as f64 / m.len() as f64;
        assert!((0.49..=0.51).contains(&zeros), "{zeros}");
        assert!(m.iter().filter(|&&v| v != 0.0).all(|&v| v == 2.0));
    }

    #[test]
    fn mask_identity_and_severing() {
        let h = [0.3f64, -0.2, 0.9];
        assert_eq!(apply_hidden_mask(&h, &[1.0; 3]).unwrap(), h.to_vec());
        assert_eq!(apply_hidden_mask(&h, &[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert!(apply_hidden_mask(&h, &[1.0; 2]).is_err());
    }

    #[test]
    fn inverted_scaling_is_unbiased() {
        let mut rng = Rng::new(8);
        let h = [0.5f64, -1.0, 0.25, 2.0];
        let mut acc = [0.0f64; 4];
        let draws = 10_000;
        for _ in 0..draws {
            let m = sample_mask::<f64>(4, 0.2, &mut rng).unwrap();
            for (a, v) in acc.iter_mut().zip(apply_hidden_mask(&h, &m).unwrap()) {
                *a += v;
            }
        }
        for (a, &x) in acc.iter().zip(&h) {
            let mean = a / draws as f64;
            assert!(((mean - x) / x).abs() < 0.02, "{mean} vs {x}");
        }
    }

    #[test]
    fn masks_differ_between_windows() {
        let mut rng = Rng::new(3);
        let cfg = DropoutConfig {
            hidden: 0.2,
            embed: 0.2,
            output_path: true,
        };
        let first = sample_masks::<f64>(1, 8, 8, 1, &cfg, &mut rng).unwrap();
        let mut differs = false;
        for _ in 0..10 {
            let next = sample_masks::<f64>(1, 8, 8, 1, &cfg, &mut rng).unwrap();
            differs |= next != first;
        }
        assert!(differs);
    }
}
