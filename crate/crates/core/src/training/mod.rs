//! Run configuration, the truncated-BPTT training loop, checkpoints, stream
//! evaluation and sampling.

mod checkpoint;
mod config;
mod eval;
mod log;
mod train;

pub use checkpoint::{
    peek_header, read_header, Checkpoint, CheckpointHeader, ManifestEntry, Progress, ResumeState, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{RunConfig, CONFIG_KEYS, PRESETS};
pub use eval::{evaluate_bytes, evaluate_stream, sample, StreamEval, EVAL_CHUNK};
pub use log::{LogRow, TrainLog, TRAIN_LOG_HEADER};
pub use train::{resume, train, EarlyStopping, StopReason, TrainOptions, TrainOutcome, Verdict};
