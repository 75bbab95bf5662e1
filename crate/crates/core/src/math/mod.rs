//! Dense linear algebra, nonlinearities, initializers and sampling.

mod dd;
mod init;
mod matrix;
mod ops;
mod real;
mod rng;

pub use dd::DoubleDouble;
pub use init::{scaled_orthogonal, uniform_fan_in};
pub use matrix::{gemm, gemm_steps, Matrix};
pub(crate) use matrix::SMALL_ROWS;
pub use ops::{
    cross_entropy_bits, log_softmax_in_place, sample_categorical, sigmoid, softmax,
    softmax_in_place,
};
pub use real::{Precision, Real};
pub use rng::{Rng, RngState, RNG_ALGORITHM};
