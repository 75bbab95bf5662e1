use crate::math::Rng;

const LETTERS: &[u8; 26] = b"abcdefghijklmnopqrstuvwxyz";
const LEXICON: usize = 6000;
const SUCCESSORS: usize = 12;

/// Index drawn from cumulative weights.
fn draw(cum: &[f64], rng: &mut Rng) -> usize {
    let u = rng.uniform() * cum[cum.len() - 1];
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

/// Text in the text8 format (lowercase `a`-`z` and single spaces, no
/// newlines) with word- and letter-level structure, for when the real corpus
/// is not at hand.
///
/// Words come from a fixed lexicon spelled by a sparse first-order letter
/// chain. Word frequencies are Zipfian and half of all words follow a
/// per-word successor list, so both short and longer contexts carry
/// information. The output is a pure function of `(len, seed)`.
pub fn synthetic_text8(len: usize, seed: u64) -> Vec<u8> {
    let mut rng = Rng::new(seed);
    // Letter chain: each letter prefers a handful of successors.
    let start = cumulative((0..26).map(|i| 1.0 / (1.0 + i as f64)));
    let chain: Vec<Vec<f64>> = (0..26)
        .map(|_| {
            cumulative((0..26).map(|_| {
                let u = rng.uniform();
                u * u * u * u + 0.002
            }))
        })
        .collect();
    let mut lexicon: Vec<Vec<u8>> = Vec::with_capacity(LEXICON);
    let mut seen = std::collections::HashSet::new();
    while lexicon.len() < LEXICON {
        // Frequent words tend to be short.
        let mean = 2.0 + 6.0 * (lexicon.len() as f64 / LEXICON as f64).sqrt();
        let n = 1 + (rng.uniform_range(0.5, 1.5) * mean) as usize;
        let mut w = Vec::with_capacity(n);
        let mut c = draw(&start, &mut rng);
        w.push(LETTERS[c]);
        for _ in 1..n {
            c = draw(&chain[c], &mut rng);
            w.push(LETTERS[c]);
        }
        if seen.insert(w.clone()) {
            lexicon.push(w);
        }
    }
    let unigram = cumulative((0..LEXICON).map(|r| (1.0 + r as f64).powf(-1.05)));
    let successors: Vec<Vec<usize>> = (0..LEXICON)
        .map(|_| (0..SUCCESSORS).map(|_| draw(&unigram, &mut rng)).collect())
        .collect();
    let succ_weights = cumulative((0..SUCCESSORS).map(|r| 1.0 / (1.0 + r as f64)));

    let mut out = Vec::with_capacity(len + 16);
    let mut prev = draw(&unigram, &mut rng);
    while out.len() < len {
        out.push(b' ');
        let next = if rng.uniform() < 0.5 {
            successors[prev][draw(&succ_weights, &mut rng)]
        } else {
            draw(&unigram, &mut rng)
        };
        out.extend_from_slice(&lexicon[next]);
        prev = next;
    }
    out.truncate(len);
    out
}
