use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sorted set of the distinct bytes of a corpus; a byte's id is its rank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct Vocab {
    bytes: Vec<u8>,
    #[serde(skip)]
    index: Box<[Option<u8>; 256]>,
}

impl TryFrom<Vec<u8>> for Vocab {
    type Error = Error;

    fn try_from(bytes: Vec<u8>) -> Result<Self> {
        if bytes.is_empty() || bytes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("vocabulary bytes must be nonempty and strictly increasing".into()));
        }
        let mut index = Box::new([None; 256]);
        for (id, &b) in bytes.iter().enumerate() {
            index[b as usize] = Some(id as u8);
        }
        Ok(Vocab { bytes, index })
    }
}

impl From<Vocab> for Vec<u8> {
    fn from(v: Vocab) -> Self {
        v.bytes
    }
}

impl Vocab {
    /// Vocabulary of the distinct bytes in `data`.
    pub fn from_data(data: &[u8]) -> Result<Self> {
        let mut seen = [false; 256];
        for &b in data {
            seen[b as usize] = true;
        }
        let bytes: Vec<u8> = (0..=255u8).filter(|&b| seen[b as usize]).collect();
        Vocab::try_from(bytes)
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn id(&self, byte: u8) -> Result<usize> {
        self.index[byte as usize]
            .map(usize::from)
            .ok_or(Error::OutOfVocab { byte })
    }

    pub fn byte(&self, id: usize) -> Result<u8> {
        self.bytes.get(id).copied().ok_or(Error::Index {
            index: id,
            size: self.bytes.len(),
        })
    }

    pub fn encode(&self, data: &[u8]) -> Result<Vec<u8>> {
        data.iter().map(|&b| self.id(b).map(|i| i as u8)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<u8>> {
        ids.iter().map(|&i| self.byte(i)).collect()
    }
}

/// A file read as raw bytes, with ids under its own vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    bytes: Vec<u8>,
    ids: Vec<u8>,
    vocab: Vocab,
    source: Option<PathBuf>,
}

impl Corpus {
    pub fn from_bytes(bytes: Vec<u8>, source: Option<PathBuf>) -> Result<Self> {
        if bytes.is_empty() {
            return Err(Error::Config(match &source {
                Some(p) => format!("corpus {} is empty", p.display()),
                None => "corpus is empty".into(),
            }));
        }
        let vocab = Vocab::from_data(&bytes)?;
        let ids = vocab.encode(&bytes)?;
        Ok(Corpus {
            bytes,
            ids,
            vocab,
            source,
        })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Symbol ids, one per byte.
    pub fn ids(&self) -> &[u8] {
        &self.ids
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

/// Read a file as a byte corpus; no text decoding takes place.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Corpus::from_bytes(bytes, Some(path.to_path_buf()))
}

/// Train/validation/test fractions of a contiguous split, in file order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.9,
            valid: 0.05,
            test: 0.05,
        }
    }
}

impl TryFrom<[f64; 3]> for SplitSpec {
    type Error = Error;

    fn try_from(f: [f64; 3]) -> Result<Self> {
        let s = SplitSpec {
            train: f[0],
            valid: f[1],
            test: f[2],
        };
        s.validate()?;
        Ok(s)
    }
}

impl From<SplitSpec> for [f64; 3] {
    fn from(s: SplitSpec) -> Self {
        [s.train, s.valid, s.test]
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must lie in [0, 1] and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    /// Byte offsets `floor(f * len)` of the two inner boundaries.
    pub fn boundaries(&self, len: usize) -> (usize, usize) {
        // Products that land within rounding of an integer count as that integer.
        let cut = |f: f64| {
            let x = f * len as f64;
            let r = x.round();
            let v = if (x - r).abs() <= 1e-9 * x.max(1.0) { r } else { x.floor() };
            (v as usize).min(len)
        };
        let a = cut(self.train);
        let b = cut(self.train + self.valid).max(a);
        (a, b)
    }
}

/// A contiguous slice of a corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitView<'a> {
    pub ids: &'a [u8],
    /// Byte offset of the view within the corpus.
    pub offset: usize,
}

impl<'a> SplitView<'a> {
    pub fn new(ids: &'a [u8]) -> Self {
        SplitView { ids, offset: 0 }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.ids.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splits<'a> {
    pub train: SplitView<'a>,
    pub valid: SplitView<'a>,
    pub test: SplitView<'a>,
}

/// Cut a corpus into contiguous train/validation/test views. The vocabulary
/// stays that of the whole file.
pub fn split<'a>(corpus: &'a Corpus, spec: &SplitSpec) -> Result<Splits<'a>> {
    spec.validate()?;
    let len = corpus.len();
    let (a, b) = spec.boundaries(len);
    let ids = corpus.ids();
    let view = |r: Range<usize>| SplitView {
        ids: &ids[r.clone()],
        offset: r.start,
    };
    let s = Splits {
        train: view(0..a),
        valid: view(a..b),
        test: view(b..len),
    };
    for (name, v) in [("train", &s.train), ("valid", &s.valid), ("test", &s.test)] {
        if v.is_empty() {
            return Err(Error::Config(format!(
                "{name} split of a {len}-byte corpus is empty under fractions {:?}",
                <[f64; 3]>::from(*spec)
            )));
        }
    }
    Ok(s)
}
