use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name recorded in checkpoints next to the generator position.
pub const RNG_ALGORITHM: &str = "chacha8";

/// Seeded random source.
///
/// Backed by ChaCha8, a counter-based generator: the stream is a pure
/// function of `(seed, word position)`, identical on every platform, and
/// its position can be saved and restored exactly.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// Serializable generator position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub algorithm: String,
    pub seed: u64,
    /// 128-bit word position, decimal.
    pub word_pos: String,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child generator, seeded from this stream.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.inner.next_u64())
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn state(&self) -> RngState {
        RngState {
            algorithm: RNG_ALGORITHM.to_string(),
            seed: self.seed,
            word_pos: self.inner.get_word_pos().to_string(),
        }
    }

    pub fn from_state(state: &RngState) -> Result<Self> {
        if state.algorithm != RNG_ALGORITHM {
            return Err(Error::Config(format!(
                "unsupported rng algorithm {:?}",
                state.algorithm
            )));
        }
        let pos: u128 = state
            .word_pos
            .parse()
            .map_err(|_| Error::Config(format!("bad rng word position {:?}", state.word_pos)))?;
        let mut rng = Rng::new(state.seed);
        rng.inner.set_word_pos(pos);
        Ok(rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn state_roundtrip_resumes_stream() {
        let mut a = Rng::new(9);
        for _ in 0..37 {
            a.normal();
        }
        let mut b = Rng::from_state(&a.state()).unwrap();
        for _ in 0..50 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn pinned_first_draw() {
        // Guards against silent stream changes from dependency upgrades.
        assert_eq!(Rng::new(0).next_u64(), 13_080_132_717_333_068_652);
        assert_ne!(Rng::new(1).next_u64(), 13_080_132_717_333_068_652);
    }
}
