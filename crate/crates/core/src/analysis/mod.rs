//! Surprise-recovery analysis, word-level scoring and plot data.

mod report;
mod surprise;
mod words;

pub use report::{
    load_position_bits, read_position_bits, read_surprise_curve, read_sweep, save_position_bits,
    save_surprise_curve, write_comparison, write_position_bits, write_surprise_curve, write_sweep, SweepRow,
    POSITION_BITS_HEADER, SURPRISE_HEADER, SWEEP_HEADER,
};
pub use surprise::{
    compare_surprise, surprise_report, surprise_report_on, SurpriseComparison, SurpriseReport, SurpriseSet,
    SURPRISE_FRACTION, SURPRISE_OFFSETS,
};
pub use words::{
    bits_per_word, is_delimiter, word_scores, word_scores_from_bits, WordPerplexity, WordScore, WordScores,
    WORD_DELIMITERS,
};
