use serde::{Deserialize, Serialize};

use crate::cells::ModelParams;
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::math::Real;
use crate::training::evaluate_bytes;

/// Bytes that end a word.
pub const WORD_DELIMITERS: [u8; 2] = *b" \n";

pub fn is_delimiter(b: u8) -> bool {
    WORD_DELIMITERS.contains(&b)
}

/// One word and the bits the model spent on it, terminator included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordScore {
    /// The word without its terminator (lossy UTF-8).
    pub word: String,
    /// Byte offset of the word's first byte.
    pub start: usize,
    /// Bytes scored, terminator included when present.
    pub scored_bytes: usize,
    /// `-log2 P(word bytes, terminator)`.
    pub bits: f64,
}

impl WordScore {
    pub fn log2_prob(&self) -> f64 {
        -self.bits
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordScores {
    pub words: Vec<WordScore>,
    /// Bits of delimiters that do not end a word (leading or repeated ones).
    pub stray_bits: f64,
    pub stray_bytes: usize,
    /// Total bits of the scored stream.
    pub total_bits: f64,
}

/// Split a scored stream into words.
///
/// `bits[i]` is the loss of byte `i + 1`; byte 0 has no context and is
/// not scored, so a word starting at 0 omits it. A word is a maximal run of
/// non-delimiters plus the single delimiter ending it. A trailing word
/// without a delimiter is scored over its bytes only.
pub fn word_scores_from_bits(text: &[u8], bits: &[f64]) -> Result<WordScores> {
    if text.len() != bits.len() + 1 {
        return Err(Error::Dimension(format!(
            "{} bytes need {} scored positions, got {}",
            text.len(),
            text.len().saturating_sub(1),
            bits.len()
        )));
    }
    let cost = |i: usize| if i == 0 { 0.0 } else { bits[i - 1] };
    let mut words = Vec::new();
    let mut stray_bits = 0.0;
    let mut stray_bytes = 0;
    let mut i = 0;
    while i < text.len() {
        if is_delimiter(text[i]) {
            stray_bits += cost(i);
            stray_bytes += 1;
            i += 1;
            continue;
        }
        let start = i;
        let mut b = 0.0;
        while i < text.len() && !is_delimiter(text[i]) {
            b += cost(i);
            i += 1;
        }
        let end = i;
        if i < text.len() {
            b += cost(i);
            i += 1;
        }
        words.push(WordScore {
            word: String::from_utf8_lossy(&text[start..end]).into_owned(),
            start,
            scored_bytes: i - start,
            bits: b,
        });
    }
    Ok(WordScores {
        words,
        stray_bits,
        stray_bytes,
        total_bits: bits.iter().sum(),
    })
}

/// Score every word of `text` under the model's streaming context.
pub fn word_scores<T: Real>(params: &ModelParams<T>, vocab: &Vocab, text: &[u8]) -> Result<WordScores> {
    let ev = evaluate_bytes(params, vocab, text)?;
    word_scores_from_bits(text, &ev.bits)
}

/// Bits/word and base-2 perplexity from a bits/symbol figure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WordPerplexity {
    pub symbols_per_word: f64,
    pub bits_per_word: f64,
    pub perplexity: f64,
}

pub fn bits_per_word(bits_per_symbol: f64, n_symbols: u64, n_words: u64) -> Result<WordPerplexity> {
    if n_words == 0 {
        return Err(Error::Parameter("word count must be positive".into()));
    }
    if n_symbols == 0 {
        return Err(Error::Parameter("symbol count must be positive".into()));
    }
    if !(bits_per_symbol >= 0.0 && bits_per_symbol.is_finite()) {
        return Err(Error::Parameter(format!(
            "bits per symbol must be a finite nonnegative number, got {bits_per_symbol}"
        )));
    }
    let symbols_per_word = n_symbols as f64 / n_words as f64;
    let bpw = bits_per_symbol * symbols_per_word;
    Ok(WordPerplexity {
        symbols_per_word,
        bits_per_word: bpw,
        perplexity: bpw.exp2(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_words_two_bytes_each() {
        let s = word_scores_from_bits(b"a b", &[1.0, 2.0]).unwrap();
        assert_eq!(s.words.len(), 2);
        assert_eq!(s.words[0].word, "a");
        assert_eq!(s.words[0].scored_bytes, 2);
        assert_eq!(s.words[0].bits, 1.0);
        assert_eq!(s.words[1].scored_bytes, 1);
        assert_eq!(s.words[1].bits, 2.0);
    }

    #[test]
    fn repeated_delimiters_are_stray() {
        let s = word_scores_from_bits(b"\nab  c\n", &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let names: Vec<&str> = s.words.iter().map(|w| w.word.as_str()).collect();
        assert_eq!(names, ["ab", "c"]);
        assert_eq!(s.words[0].bits, 1.0 + 2.0 + 3.0);
        assert_eq!(s.stray_bytes, 2);
        assert_eq!(s.stray_bits, 4.0);
        assert_eq!(s.words[1].bits, 11.0);
    }

    #[test]
    fn wikitext_conversion() {
        let w = bits_per_word(1.2649, 1_256_449, 245_569).unwrap();
        assert!((w.symbols_per_word - 5.1165).abs() < 1e-4);
        assert!((w.perplexity - 88.8).abs() < 0.1, "{}", w.perplexity);
    }

    #[test]
    fn degenerate_conversions() {
        assert_eq!(bits_per_word(1.0, 7, 7).unwrap().perplexity, 2.0);
        assert_eq!(bits_per_word(0.0, 7, 3).unwrap().perplexity, 1.0);
        assert!(bits_per_word(1.0, 7, 0).is_err());
        assert!(bits_per_word(-1.0, 7, 1).is_err());
    }

    proptest! {
        #[test]
        fn partition_conserves_bits(text in proptest::collection::vec(prop_oneof![Just(b' '), Just(b'\n'), Just(b'a'), Just(b'b')], 1..200)) {
            let bits: Vec<f64> = (1..text.len()).map(|i| (i % 7) as f64 * 0.37 + 0.01).collect();
            let s = word_scores_from_bits(&text, &bits).unwrap();
            let sum: f64 = s.words.iter().map(|w| w.bits).sum::<f64>() + s.stray_bits;
            prop_assert!((sum - s.total_bits).abs() < 1e-9);
            let scored: usize = s.words.iter().map(|w| w.scored_bytes).sum::<usize>() + s.stray_bytes;
            prop_assert_eq!(scored, text.len());
        }

        #[test]
        fn bits_per_word_is_linear_and_monotone(b in 0.0f64..4.0, d in 0.001f64..1.0, sym in 1u64..200, words in 1u64..1000) {
            let lo = bits_per_word(b, sym, words).unwrap();
            let hi = bits_per_word(b + d, sym, words).unwrap();
            let twice = bits_per_word(2.0 * b, sym, words).unwrap();
            prop_assert!(hi.perplexity > lo.perplexity);
            prop_assert!((twice.bits_per_word - 2.0 * lo.bits_per_word).abs() <= 1e-12 * (1.0 + lo.bits_per_word));
        }
    }
}
