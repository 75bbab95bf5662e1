use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::DoubleDouble;

/// Fraction of positions in a surprise set.
pub const SURPRISE_FRACTION: f64 = 0.1;
/// Offsets after a surprising position that are reported.
pub const SURPRISE_OFFSETS: usize = 4;

/// Positions whose loss reaches the nearest-rank 90th percentile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurpriseSet {
    /// The `ceil(0.1 n)`-th largest loss.
    pub threshold: f64,
    /// Ascending positions with loss `>= threshold`. Ties at the threshold
    /// are all included, so this can exceed `ceil(0.1 n)`.
    pub positions: Vec<usize>,
    /// Length of the stream the set was drawn from.
    pub len: usize,
}

impl SurpriseSet {
    pub fn from_losses(losses: &[f64]) -> Result<Self> {
        if losses.is_empty() {
            return Err(Error::Parameter("surprise set of an empty loss stream".into()));
        }
        if let Some(i) = losses.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("loss at position {i} is not finite")));
        }
        let k = (SURPRISE_FRACTION * losses.len() as f64).ceil().max(1.0) as usize;
        let mut sorted = losses.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let threshold = sorted[k - 1];
        let positions = (0..losses.len()).filter(|&i| losses[i] >= threshold).collect();
        Ok(SurpriseSet {
            threshold,
            positions,
            len: losses.len(),
        })
    }

    /// One set for several models: drawn from the position-wise mean loss.
    pub fn shared(streams: &[&[f64]]) -> Result<Self> {
        let first = streams
            .first()
            .ok_or_else(|| Error::Parameter("shared surprise set needs at least one stream".into()))?;
        if let Some(s) = streams.iter().find(|s| s.len() != first.len()) {
            return Err(Error::Dimension(format!(
                "loss streams of lengths {} and {}",
                first.len(),
                s.len()
            )));
        }
        let avg: Vec<f64> = (0..first.len())
            .map(|i| streams.iter().map(|s| s[i]).sum::<f64>() / streams.len() as f64)
            .collect();
        Self::from_losses(&avg)
    }
}

/// How a model's loss behaves on and after surprising positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurpriseReport {
    /// Threshold of the set the report was computed on.
    pub threshold: f64,
    /// This model's mean loss over the surprise set.
    pub surprise_mean: f64,
    /// `offset_means[k - 1]` is the mean loss at `p + k` over surprising `p`
    /// with `p + k` inside the stream; `None` when no such position exists.
    pub offset_means: Vec<Option<f64>>,
    pub overall_mean: f64,
    pub count: usize,
    pub len: usize,
}

/// Mean accumulated in double-double, so averaging copies of one value
/// returns that value exactly.
fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((DoubleDouble::zero(), 0usize), |(s, n), v| {
        (s + DoubleDouble::from_f64(v), n + 1)
    });
    (n > 0).then(|| (sum / DoubleDouble::from_f64(n as f64)).hi())
}

/// Report for `losses` over an externally chosen set (for example a shared one).
pub fn surprise_report_on(losses: &[f64], set: &SurpriseSet, offsets: usize) -> Result<SurpriseReport> {
    if losses.len() != set.len {
        return Err(Error::Dimension(format!(
            "surprise set drawn from {} positions, loss stream has {}",
            set.len,
            losses.len()
        )));
    }
    if losses.is_empty() {
        return Err(Error::Parameter("surprise report of an empty loss stream".into()));
    }
    let surprise_mean = mean(set.positions.iter().map(|&p| losses[p])).unwrap_or(f64::NAN);
    let offset_means = (1..=offsets)
        .map(|k| {
            mean(
                set.positions
                    .iter()
                    .filter(|&&p| p + k < losses.len())
                    .map(|&p| losses[p + k]),
            )
        })
        .collect();
    Ok(SurpriseReport {
        threshold: set.threshold,
        surprise_mean,
        offset_means,
        overall_mean: mean(losses.iter().copied()).expect("nonempty"),
        count: set.positions.len(),
        len: losses.len(),
    })
}

/// Report over the model's own top-decile positions.
pub fn surprise_report(losses: &[f64], offsets: usize) -> Result<SurpriseReport> {
    if losses.len() < 10 {
        return Err(Error::Parameter(format!(
            "surprise analysis needs at least 10 positions, got {}",
            losses.len()
        )));
    }
    let set = SurpriseSet::from_losses(losses)?;
    surprise_report_on(losses, &set, offsets)
}

/// Field-wise `b - a`: positive entries mean `a` took the smaller loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurpriseComparison {
    pub overall_gap: f64,
    pub surprise_gap: f64,
    pub offset_gaps: Vec<Option<f64>>,
    /// `offset_gaps[k] / overall_gap`; unchanged when the arguments swap.
    pub offset_ratios: Vec<Option<f64>>,
}

impl SurpriseComparison {
    /// Whether the gap one step after a surprise exceeds the overall gap in
    /// the same direction.
    pub fn larger_after_surprise(&self) -> bool {
        match self.offset_gaps.first().copied().flatten() {
            Some(g) => g.abs() > self.overall_gap.abs() && g.signum() == self.overall_gap.signum(),
            None => false,
        }
    }
}

pub fn compare_surprise(a: &SurpriseReport, b: &SurpriseReport) -> Result<SurpriseComparison> {
    if a.len != b.len || a.offset_means.len() != b.offset_means.len() {
        return Err(Error::Dimension(format!(
            "reports over {} and {} positions ({} and {} offsets)",
            a.len,
            b.len,
            a.offset_means.len(),
            b.offset_means.len()
        )));
    }
    let overall_gap = b.overall_mean - a.overall_mean;
    let offset_gaps: Vec<Option<f64>> = a
        .offset_means
        .iter()
        .zip(&b.offset_means)
        .map(|(x, y)| Some((*y)? - (*x)?))
        .collect();
    let offset_ratios = offset_gaps
        .iter()
        .map(|g| g.filter(|_| overall_gap != 0.0).map(|g| g / overall_gap))
        .collect();
    Ok(SurpriseComparison {
        overall_gap,
        surprise_gap: b.surprise_mean - a.surprise_mean,
        offset_gaps,
        offset_ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spike_at_end_has_no_offsets() {
        let mut l = vec![1.0; 9];
        l.push(10.0);
        let r = surprise_report(&l, 4).unwrap();
        assert_eq!(r.threshold, 10.0);
        assert_eq!(r.count, 1);
        assert_eq!(r.surprise_mean, 10.0);
        assert!(r.offset_means.iter().all(Option::is_none));
    }

    #[test]
    fn first_offset_reads_the_next_position() {
        let l = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 10.0, 2.0];
        let r = surprise_report(&l, 4).unwrap();
        assert_eq!(r.count, 1);
        assert_eq!(r.offset_means[0], Some(2.0));
        assert_eq!(r.offset_means[1], None);
    }

    #[test]
    fn constant_losses_take_every_tie() {
        let l = vec![0.5; 37];
        let r = surprise_report(&l, 4).unwrap();
        assert_eq!(r.count, 37);
        for m in &r.offset_means {
            assert_eq!(*m, Some(0.5));
        }
    }

    #[test]
    fn short_and_mismatched_inputs_fail() {
        assert!(surprise_report(&[1.0; 9], 4).is_err());
        assert!(SurpriseSet::shared(&[&[1.0; 10], &[1.0; 11]]).is_err());
        let set = SurpriseSet::from_losses(&[1.0; 10]).unwrap();
        assert!(surprise_report_on(&[1.0; 12], &set, 4).is_err());
    }

    #[test]
    fn shared_set_uses_mean_losses() {
        let a = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 4.0, 0.0];
        let b = [0.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 4.0, 0.0];
        // Means: position 9 has 4, position 1 has 2.5; k = ceil(1.1) = 2.
        let s = SurpriseSet::shared(&[&a, &b]).unwrap();
        assert_eq!(s.positions, vec![1, 9]);
        assert_eq!(s.threshold, 2.5);
    }

    #[test]
    fn identical_reports_have_zero_gaps() {
        let l: Vec<f64> = (0..50).map(|i| (i * 37 % 11) as f64).collect();
        let r = surprise_report(&l, 4).unwrap();
        let c = compare_surprise(&r, &r).unwrap();
        assert_eq!(c.overall_gap, 0.0);
        assert_eq!(c.surprise_gap, 0.0);
        assert!(c.offset_gaps.iter().all(|g| *g == Some(0.0)));
        assert!(!c.larger_after_surprise());
    }

    fn brute_force_count(l: &[f64]) -> usize {
        let k = (l.len() as f64 / 10.0).ceil() as usize;
        // Count positions strictly above at most k-1 others... i.e. loss >= k-th largest.
        l.iter()
            .filter(|&&x| l.iter().filter(|&&y| y > x).count() < k)
            .count()
    }

    proptest! {
        #[test]
        fn distinct_losses_select_exactly_a_tenth(n in 10usize..400, seed in 0u64..1000) {
            let mut rng = crate::math::Rng::new(seed);
            let l: Vec<f64> = (0..n).map(|i| rng.uniform() + i as f64 * 1e-12).collect();
            let s = SurpriseSet::from_losses(&l).unwrap();
            prop_assert_eq!(s.positions.len(), n.div_ceil(10));
            prop_assert_eq!(s.positions.len(), brute_force_count(&l));
            let r = surprise_report_on(&l, &s, 4).unwrap();
            prop_assert!(r.threshold <= r.surprise_mean);
        }

        #[test]
        fn ties_match_brute_force(l in proptest::collection::vec(0u8..4, 10..200)) {
            let l: Vec<f64> = l.into_iter().map(f64::from).collect();
            let s = SurpriseSet::from_losses(&l).unwrap();
            prop_assert_eq!(s.positions.len(), brute_force_count(&l));
        }

        #[test]
        fn comparison_is_antisymmetric(a in proptest::collection::vec(0.0f64..8.0, 10..120), seed in 0u64..100) {
            let mut rng = crate::math::Rng::new(seed);
            let b: Vec<f64> = a.iter().map(|x| x + rng.uniform_range(-1.0, 1.0)).collect();
            let set = SurpriseSet::shared(&[&a, &b]).unwrap();
            let ra = surprise_report_on(&a, &set, 4).unwrap();
            let rb = surprise_report_on(&b, &set, 4).unwrap();
            let ab = compare_surprise(&ra, &rb).unwrap();
            let ba = compare_surprise(&rb, &ra).unwrap();
            prop_assert_eq!(ab.overall_gap, -ba.overall_gap);
            prop_assert_eq!(ab.surprise_gap, -ba.surprise_gap);
            for (x, y) in ab.offset_gaps.iter().zip(&ba.offset_gaps) {
                prop_assert_eq!(x.map(|v| -v), *y);
            }
            prop_assert_eq!(ab.offset_ratios, ba.offset_ratios);
        }
    }
}
