//! Variational dropout and weight normalization.

mod dropout;
mod weight_norm;

pub use dropout::{apply_hidden_mask, sample_mask, sample_masks, DropoutConfig, DropoutMasks};
pub use weight_norm::{weight_norm_backward, weight_norm_effective, WeightNormState, MIN_ROW_NORM};
