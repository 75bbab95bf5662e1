//! Byte corpora, vocabularies, splits and lane batching.

mod batch;
mod corpus;
mod synthetic;

pub use batch::{make_batches, targets_per_epoch, BatchPlan, Window, Windows};
pub use corpus::{load_corpus, split, Corpus, SplitSpec, SplitView, Splits, Vocab};
pub use synthetic::synthetic_text8;
