//! Byte-level recurrent language modelling.
//!
//! The crate implements multiplicative LSTM (mLSTM) together with the
//! recurrent baselines it is usually compared against (vanilla RNN, tensor
//! RNN, multiplicative RNN, LSTM and stacked LSTM). Every cell carries a
//! hand-written backward pass; [`cells::grad_check`] compares them against
//! central finite differences in double precision.
//!
//! Module map:
//!
//! - [`math`]: dense matrices, softmax / cross-entropy, initializers, sampling.
//! - [`cells`]: architectures, parameters, forward and backward through time.
//! - [`regularization`]: variational dropout masks and weight normalization.
//! - [`optim`]: Adam with linear decay and length-normalized RMSprop.
//! - [`data`]: byte corpora, contiguous splits and lane batching.
//! - [`training`]: the truncated-BPTT loop, evaluation and checkpoints.
//! - [`analysis`]: surprise recovery, bits/word conversion, word scores, CSV.
//! - [`cli`]: the `mlstm` command line.

// Index loops mirror the cell equations, and `!(x > 0.0)` is how NaN gets rejected.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cells;
pub mod cli;
pub mod data;
pub mod error;
pub mod math;
pub mod optim;
pub mod regularization;
pub mod training;

pub use error::{Error, Result};
