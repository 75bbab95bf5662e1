//! Recurrent cells: parameters, forward and backward passes, and gradient checking.

mod arch;
mod gradcheck;
mod layer;
mod params;
mod sequence;
mod step;

pub use arch::{Arch, ArchKind, CellKind, LstmVariant, TENSOR_RNN_MAX_VOCAB};
pub use gradcheck::{grad_check, grad_check_report, GradCheckDims, GradCheckReport};
pub use layer::{LayerInput, LayerTape};
pub use params::{
    bias_name, gain_name, init_params, param_count, schema, tensor_rnn_slice_name, weight_name, ModelParams,
    NamedTensor, ParamCount, TensorRole, TensorSpec, EMBED, FORGET_BIAS_INIT, OUT_BIAS, OUT_WEIGHT,
};
pub use sequence::{
    backward_sequence, forward_sequence, target_nats, window_loss, LayerState, State, StepState, Tape,
};
pub use step::{
    effective_params, lstm_step, mlstm_step, mrnn_step, rnn_step, single_state, tensor_rnn_from_mrnn,
    tensor_rnn_step,
};
