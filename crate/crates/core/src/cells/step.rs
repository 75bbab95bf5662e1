//! Single-timestep API for each cell type.

use super::arch::{Arch, ArchKind, CellKind, LstmVariant};
use super::layer::{layer_forward, LayerInput, LayerWeights};
use super::params::{
    bias_name, gain_name, tensor_rnn_slice_name, weight_name, ModelParams, NamedTensor,
};
use super::sequence::{LayerState, State, StepState};
use crate::error::{Error, Result};
use crate::math::{Matrix, Real};
use crate::regularization::weight_norm_effective;

fn require(params: &ModelParams<impl Real>, kinds: &[ArchKind], op: &str) -> Result<()> {
    if kinds.contains(&params.arch().kind) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{op} does not apply to a {} model",
            params.arch().kind.name()
        )))
    }
}

/// Advance a single-lane state by one input symbol through every layer.
/// Returns the bottom layer's intermediate state `m` for multiplicative cells.
fn step<T: Real>(
    params: &ModelParams<T>,
    prev: &StepState<T>,
    x: usize,
    variant: Option<LstmVariant>,
) -> Result<(Option<Vec<T>>, StepState<T>)> {
    let arch = params.arch();
    if prev.lanes() != 1 {
        return Err(Error::Dimension("a step state has exactly one lane".into()));
    }
    if x >= params.vocab() {
        return Err(Error::Index {
            index: x,
            size: params.vocab(),
        });
    }
    if prev.layers.len() != arch.layers {
        return Err(Error::Dimension("state does not match the architecture".into()));
    }
    let mut input = if arch.embed > 0 {
        LayerInput::Dense(Matrix::from_vec(1, arch.embed, params.get(super::params::EMBED)?.row(x).to_vec())?)
    } else {
        LayerInput::OneHot(vec![x])
    };
    let mut m = None;
    let mut layers = Vec::with_capacity(arch.layers);
    for (l, s) in prev.layers.iter().enumerate() {
        let mut w = LayerWeights::resolve(params, l)?;
        if let Some(v) = variant {
            w.variant = v;
        }
        let tape = layer_forward(&w, input, 1, 1, s.h.data(), s.c.as_ref().map(|c| c.data()), None)?;
        if l == 0 && !tape.m.is_empty() {
            m = Some(tape.m.clone());
        }
        let h = Matrix::from_vec(1, arch.hidden, tape.h[arch.hidden..].to_vec())?;
        let c = (!tape.c.is_empty())
            .then(|| Matrix::from_vec(1, arch.hidden, tape.c[arch.hidden..].to_vec()))
            .transpose()?;
        input = LayerInput::Dense(h.clone());
        layers.push(LayerState { h, c });
    }
    Ok((m, State { layers }))
}

/// Single-lane state from a hidden vector (and cell vector for gated cells).
pub fn single_state<T: Real>(h: Vec<T>, c: Option<Vec<T>>) -> StepState<T> {
    let n = h.len();
    StepState {
        layers: vec![LayerState {
            h: Matrix::from_vec(1, n, h).expect("row vector"),
            c: c.map(|c| Matrix::from_vec(1, n, c).expect("row vector")),
        }],
    }
}

/// `h = tanh(W_hh h_prev + W_hx[:, x] + b_h)`.
pub fn rnn_step<T: Real>(params: &ModelParams<T>, h_prev: &StepState<T>, x: usize) -> Result<StepState<T>> {
    require(params, &[ArchKind::VanillaRnn], "rnn_step")?;
    Ok(step(params, h_prev, x, None)?.1)
}

/// Multiplicative RNN step; also returns the intermediate state `m`.
pub fn mrnn_step<T: Real>(
    params: &ModelParams<T>,
    h_prev: &StepState<T>,
    x: usize,
) -> Result<(Vec<T>, StepState<T>)> {
    require(params, &[ArchKind::Mrnn], "mrnn_step")?;
    let (m, s) = step(params, h_prev, x, None)?;
    Ok((m.expect("multiplicative cell"), s))
}

/// LSTM step with an explicit output variant. Stacked models step every layer.
pub fn lstm_step<T: Real>(
    params: &ModelParams<T>,
    state_prev: &StepState<T>,
    x: usize,
    variant: LstmVariant,
) -> Result<StepState<T>> {
    require(params, &[ArchKind::Lstm, ArchKind::StackedLstm], "lstm_step")?;
    Ok(step(params, state_prev, x, Some(variant))?.1)
}

/// Multiplicative LSTM step using the architecture's output variant.
pub fn mlstm_step<T: Real>(
    params: &ModelParams<T>,
    state_prev: &StepState<T>,
    x: usize,
) -> Result<(Vec<T>, StepState<T>)> {
    require(params, &[ArchKind::Mlstm], "mlstm_step")?;
    let (m, s) = step(params, state_prev, x, None)?;
    Ok((m.expect("multiplicative cell"), s))
}

/// Tensor RNN step: `h = tanh(W_hh^(x) h_prev + W_hx[:, x] + b_h)`.
pub fn tensor_rnn_step<T: Real>(
    params: &ModelParams<T>,
    h_prev: &StepState<T>,
    x: usize,
) -> Result<StepState<T>> {
    require(params, &[ArchKind::TensorRnn], "tensor_rnn_step")?;
    let n = params.vocab();
    let h = params.arch().hidden;
    if x >= n {
        return Err(Error::Index { index: x, size: n });
    }
    let prev = h_prev
        .layers
        .first()
        .filter(|l| l.h.shape() == (1, h))
        .ok_or_else(|| Error::Dimension("tensor RNN state must be one lane of the hidden size".into()))?;
    let w_hh = params.get(&tensor_rnn_slice_name(x))?;
    let w_hx = params.get(&weight_name(0, "hx"))?;
    let b_h = params.get(&bias_name(0, "h"))?;
    let rec = w_hh.matvec(prev.h.data())?;
    let out: Vec<T> = (0..h)
        .map(|j| (rec[j] + w_hx.get(j, x) + b_h.data()[j]).tanh())
        .collect();
    Ok(single_state(out, None))
}

/// Tensor RNN whose slices are `W_hm diag(W_mx[:, n]) W_mh`, built from an
/// mRNN. Its steps match the mRNN's exactly up to rounding.
pub fn tensor_rnn_from_mrnn<T: Real>(mrnn: &ModelParams<T>) -> Result<ModelParams<T>> {
    require(mrnn, &[ArchKind::Mrnn], "tensor_rnn_from_mrnn")?;
    if mrnn.arch().embed > 0 {
        return Err(Error::Config("the tensor RNN takes one-hot inputs".into()));
    }
    let eff = effective_params(mrnn)?;
    let n = eff.vocab();
    let arch = Arch::new(ArchKind::TensorRnn, eff.arch().hidden);
    let w_mx = eff.get(&weight_name(0, "mx"))?;
    let w_mh = eff.get(&weight_name(0, "mh"))?;
    let w_hm = eff.get(&weight_name(0, "hm"))?;
    let mut tensors = vec![NamedTensor {
        name: weight_name(0, "hx"),
        value: eff.get(&weight_name(0, "hx"))?.clone(),
    }];
    for x in 0..n {
        let col = w_mx.column(x);
        let scaled = Matrix::from_fn(w_mh.rows(), w_mh.cols(), |r, c| col[r] * w_mh.get(r, c));
        tensors.push(NamedTensor {
            name: tensor_rnn_slice_name(x),
            value: w_hm.matmul(&scaled)?,
        });
    }
    for name in [bias_name(0, "h"), super::params::OUT_WEIGHT.into(), super::params::OUT_BIAS.into()] {
        tensors.push(NamedTensor {
            value: eff.get(&name)?.clone(),
            name,
        });
    }
    ModelParams::from_tensors(&arch, n, tensors)
}

/// Fold weight-norm gains into plain matrices. The result computes the same
/// function with `weight_norm` off, which is cheaper for repeated inference.
pub fn effective_params<T: Real>(params: &ModelParams<T>) -> Result<ModelParams<T>> {
    let arch = *params.arch();
    if !arch.weight_norm {
        return Ok(params.clone());
    }
    let plain = arch.with_weight_norm(false);
    let cell: CellKind = arch.cell();
    let mut tensors = Vec::new();
    for t in params.tensors() {
        if t.name.contains(".g_") {
            continue;
        }
        let mut value = t.value.clone();
        for l in 0..arch.layers {
            for blk in cell.recurrent_matrices() {
                if t.name == weight_name(l, blk) {
                    let g = params.get(&gain_name(l, blk))?;
                    value = weight_norm_effective(&t.value, g.data(), &t.name)?;
                }
            }
        }
        tensors.push(NamedTensor {
            name: t.name.clone(),
            value,
        });
    }
    ModelParams::from_tensors(&plain, params.vocab(), tensors)
}
