use std::f64::consts::LN_2;

use crate::cells::{forward_sequence, target_nats, ModelParams, State};
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::math::{softmax, sample_categorical, Real, Rng};

/// Steps per forward call when streaming; state is carried between chunks.
pub const EVAL_CHUNK: usize = 1024;

/// Per-position losses of one pass over a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamEval {
    /// `bits[i]` is the loss of predicting position `i + 1` from everything
    /// before it. Position 0 has no context and is not scored.
    pub bits: Vec<f64>,
    pub total_bits: f64,
    pub mean_bits: f64,
}

impl StreamEval {
    pub fn scored(&self) -> usize {
        self.bits.len()
    }
}

/// Score a stream of vocabulary ids with one lane from a zero state and no
/// dropout.
pub fn evaluate_stream<T: Real>(params: &ModelParams<T>, ids: &[u8]) -> Result<StreamEval> {
    if ids.len() < 2 {
        return Err(Error::Parameter(format!(
            "a stream needs at least 2 symbols to score, got {}",
            ids.len()
        )));
    }
    let vocab = params.vocab();
    if let Some(&bad) = ids.iter().find(|&&i| i as usize >= vocab) {
        return Err(Error::Index {
            index: bad as usize,
            size: vocab,
        });
    }
    let mut state = State::zeros(params.arch(), 1);
    let mut bits = Vec::with_capacity(ids.len() - 1);
    let n = ids.len() - 1;
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let inputs: Vec<usize> = ids[start..end].iter().map(|&i| i as usize).collect();
        let targets: Vec<usize> = ids[start + 1..end + 1].iter().map(|&i| i as usize).collect();
        let (tape, next) = forward_sequence(params, &state, &inputs, None)?;
        bits.extend(target_nats(&tape.logits, &targets)?.into_iter().map(|x| x / LN_2));
        state = next;
        start = end;
    }
    let total_bits: f64 = bits.iter().sum();
    Ok(StreamEval {
        mean_bits: total_bits / bits.len() as f64,
        total_bits,
        bits,
    })
}

/// [`evaluate_stream`] on raw bytes; any byte outside the vocabulary is an error.
pub fn evaluate_bytes<T: Real>(params: &ModelParams<T>, vocab: &Vocab, bytes: &[u8]) -> Result<StreamEval> {
    if vocab.len() != params.vocab() {
        return Err(Error::Dimension(format!(
            "vocabulary of {} symbols for a model over {}",
            vocab.len(),
            params.vocab()
        )));
    }
    evaluate_stream(params, &vocab.encode(bytes)?)
}

/// Generate `length` bytes after feeding `prime` through the model.
///
/// Deterministic given `seed`. An empty prime starts from the zero state with
/// the first vocabulary symbol as the previous input.
pub fn sample<T: Real>(
    params: &ModelParams<T>,
    vocab: &Vocab,
    prime: &[u8],
    length: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<u8>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Parameter(format!("temperature must be positive, got {temperature}")));
    }
    let prime_ids: Vec<usize> = if prime.is_empty() {
        vec![0]
    } else {
        vocab.encode(prime)?.into_iter().map(usize::from).collect()
    };
    let mut rng = Rng::new(seed);
    let mut state = State::zeros(params.arch(), 1);
    let (tape, next) = forward_sequence(params, &state, &prime_ids, None)?;
    state = next;
    let mut logits = tape.logits.row(prime_ids.len() - 1).to_vec();
    let mut out = Vec::with_capacity(length);
    for _ in 0..length {
        let probs = softmax(&logits)?;
        let id = sample_categorical(&probs, &mut rng, temperature)?;
        out.push(vocab.byte(id)?);
        let (tape, next) = forward_sequence(params, &state, &[id], None)?;
        state = next;
        logits = tape.logits.row(0).to_vec();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{init_params, window_loss, Arch, ArchKind};

    fn model(seed: u64) -> ModelParams<f64> {
        let arch = Arch::new(ArchKind::Mlstm, 6);
        init_params(&arch, 5, 0.7, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn chunking_matches_one_long_window() {
        let p = model(1);
        let mut rng = Rng::new(2);
        let ids: Vec<u8> = (0..EVAL_CHUNK + 300).map(|_| rng.below(5) as u8).collect();
        let ev = evaluate_stream(&p, &ids).unwrap();
        assert_eq!(ev.bits.len(), ids.len() - 1);
        let inputs: Vec<usize> = ids[..ids.len() - 1].iter().map(|&i| i as usize).collect();
        let targets: Vec<usize> = ids[1..].iter().map(|&i| i as usize).collect();
        let (tape, _) = forward_sequence(&p, &State::zeros(p.arch(), 1), &inputs, None).unwrap();
        let whole = window_loss(&tape, &targets).unwrap() / LN_2;
        assert!((whole - ev.mean_bits).abs() < 1e-12, "{whole} vs {}", ev.mean_bits);
    }

    #[test]
    fn repeat_evaluation_is_bitwise_identical() {
        let p = model(3);
        let ids: Vec<u8> = (0..500u32).map(|i| (i * 7 % 5) as u8).collect();
        assert_eq!(evaluate_stream(&p, &ids).unwrap(), evaluate_stream(&p, &ids).unwrap());
    }

    #[test]
    fn out_of_vocab_is_rejected() {
        let p = model(1);
        let vocab = Vocab::from_data(b"abcde").unwrap();
        assert!(matches!(
            evaluate_bytes(&p, &vocab, b"abz").unwrap_err(),
            Error::OutOfVocab { byte: b'z' }
        ));
        assert!(evaluate_stream(&p, &[0, 1, 9]).is_err());
        assert!(evaluate_stream(&p, &[0]).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let p = model(4);
        let vocab = Vocab::from_data(b"abcde").unwrap();
        let a = sample(&p, &vocab, b"ab", 200, 1.0, 5).unwrap();
        let b = sample(&p, &vocab, b"ab", 200, 1.0, 5).unwrap();
        let c = sample(&p, &vocab, b"ab", 200, 1.0, 6).unwrap();
        assert_eq!(a.len(), 200);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|x| vocab.bytes().contains(x)));
    }
}
