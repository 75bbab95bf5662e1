//! Finite-difference check of [`backward_sequence`](super::backward_sequence).

use serde::Serialize;

use super::arch::Arch;
use super::params::{init_params, ModelParams};
use super::sequence::{backward_sequence, forward_sequence, State};
use crate::error::{Error, Result};
use crate::math::{DoubleDouble, Matrix, Real, Rng};
use crate::regularization::{sample_masks, DropoutConfig, DropoutMasks};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Largest model the checker accepts.
pub const MAX_CHECK_PARAMS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GradCheckDims {
    pub vocab: usize,
    pub hidden: usize,
    pub steps: usize,
    pub lanes: usize,
}

impl GradCheckDims {
    pub fn new(vocab: usize, hidden: usize, steps: usize) -> Self {
        GradCheckDims {
            vocab,
            hidden,
            steps,
            lanes: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Tensor holding the worst coordinate.
    pub worst_tensor: String,
    pub worst_index: usize,
    /// Analytic and finite-difference values at the worst coordinate.
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    /// Coordinates compared, including the initial state.
    pub coordinates: usize,
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Mean cross-entropy in the element type of the logits.
fn mean_loss<T: Real>(logits: &Matrix<T>, targets: &[usize]) -> T {
    let mut total = T::zero();
    for (row, &y) in targets.iter().enumerate() {
        let z = logits.row(row);
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = z.iter().map(|&v| (v - max).exp()).sum();
        total += sum.ln() + max - z[y];
    }
    total / T::lit(targets.len() as f64)
}

/// Picks the initial-state tensor of one layer, if the cell has it.
type StateSlot = fn(&mut State<DoubleDouble>, usize) -> Option<&mut Matrix<DoubleDouble>>;

/// Worst relative error between analytic and central-difference gradients.
pub fn grad_check(arch: &Arch, dims: GradCheckDims, seed: u64, dropout: Option<&DropoutConfig>) -> Result<f64> {
    Ok(grad_check_report(arch, dims, seed, dropout)?.max_relative_error)
}

/// Like [`grad_check`], with the location of the worst coordinate.
///
/// Parameters are drawn with `init_params` and then jittered so that biases
/// and weight-norm gains are not at their special initial values. The
/// initial state is random, and dropout masks (if any) are drawn once and
/// held fixed. Analytic gradients are computed in `f64`. The perturbed
/// losses are evaluated in double-double so that their difference keeps its
/// digits when the gradient is tiny.
pub fn grad_check_report(
    arch: &Arch,
    dims: GradCheckDims,
    seed: u64,
    dropout: Option<&DropoutConfig>,
) -> Result<GradCheckReport> {
    let arch = Arch { hidden: dims.hidden, ..*arch };
    if dims.steps == 0 || dims.lanes == 0 {
        return Err(Error::Config("grad_check needs at least one step and one lane".into()));
    }
    let mut rng = Rng::new(seed);
    let mut params: ModelParams<f64> = init_params(&arch, dims.vocab, 0.9, &mut rng)?;
    if params.num_scalars() > MAX_CHECK_PARAMS {
        return Err(Error::Config(format!(
            "grad_check is limited to {MAX_CHECK_PARAMS} parameters, model has {}",
            params.num_scalars()
        )));
    }
    for t in params.tensors_mut() {
        for v in t.value.data_mut() {
            *v += 0.1 * rng.uniform_range(-1.0, 1.0);
        }
    }
    let rows = dims.steps * dims.lanes;
    let inputs: Vec<usize> = (0..rows).map(|_| rng.below(dims.vocab)).collect();
    let targets: Vec<usize> = (0..rows).map(|_| rng.below(dims.vocab)).collect();
    let mut state0: State<f64> = State::zeros(&arch, dims.lanes);
    for l in state0.layers.iter_mut() {
        for v in l.h.data_mut() {
            *v = rng.uniform_range(-0.8, 0.8);
        }
        if let Some(c) = l.c.as_mut() {
            for v in c.data_mut() {
                *v = rng.uniform_range(-1.5, 1.5);
            }
        }
    }
    let masks: Option<DropoutMasks<f64>> = match dropout {
        Some(cfg) if cfg.is_active() => Some(sample_masks(
            dims.lanes,
            arch.embed,
            arch.hidden,
            arch.layers,
            cfg,
            &mut rng,
        )?),
        _ => None,
    };

    let masks_dd: Option<DropoutMasks<DoubleDouble>> = masks.as_ref().map(|m| m.cast());
    let loss = |p: &ModelParams<DoubleDouble>, s: &State<DoubleDouble>| -> Result<DoubleDouble> {
        let (tape, _) = forward_sequence(p, s, &inputs, masks_dd.as_ref())?;
        Ok(mean_loss(&tape.logits, &targets))
    };
    let step = DoubleDouble::lit(FD_STEP);
    let central = |up: DoubleDouble, down: DoubleDouble| ((up - down) / (step + step)).as_f64();
    let (tape, _) = forward_sequence(&params, &state0, &inputs, masks.as_ref())?;
    let (grads, dstate) = backward_sequence(&params, &tape, &targets)?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        coordinates: 0,
    };
    let mut record = |analytic: f64, numeric: f64, name: &str, idx: usize| {
        report.coordinates += 1;
        let err = rel_err(analytic, numeric);
        if err > report.max_relative_error || report.worst_tensor.is_empty() {
            report.max_relative_error = err.max(report.max_relative_error);
            report.worst_tensor = name.to_string();
            report.worst_index = idx;
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
    };

    let mut pdd: ModelParams<DoubleDouble> = params.cast();
    let state_dd: State<DoubleDouble> = state0.cast();
    for ti in 0..pdd.tensors().len() {
        let name = pdd.tensors()[ti].name.clone();
        for k in 0..pdd.tensors()[ti].value.len() {
            let orig = pdd.tensors()[ti].value.data()[k];
            pdd.tensors_mut()[ti].value.data_mut()[k] = orig + step;
            let up = loss(&pdd, &state_dd)?;
            pdd.tensors_mut()[ti].value.data_mut()[k] = orig - step;
            let down = loss(&pdd, &state_dd)?;
            pdd.tensors_mut()[ti].value.data_mut()[k] = orig;
            let numeric = central(up, down);
            record(grads.tensors()[ti].value.data()[k], numeric, &name, k);
        }
    }

    let mut state = state_dd;
    for l in 0..arch.layers {
        let parts: [(&str, StateSlot); 2] = [
            ("h0", |s, l| Some(&mut s.layers[l].h)),
            ("c0", |s, l| s.layers[l].c.as_mut()),
        ];
        for (label, get) in parts {
            let Some(len) = get(&mut state, l).map(|m| m.len()) else {
                continue;
            };
            let analytic: Vec<f64> = match label {
                "h0" => dstate.layers[l].h.data().to_vec(),
                _ => dstate.layers[l].c.as_ref().expect("cell gradient").data().to_vec(),
            };
            for k in 0..len {
                let orig = get(&mut state, l).expect("present").data()[k];
                get(&mut state, l).expect("present").data_mut()[k] = orig + step;
                let up = loss(&pdd, &state)?;
                get(&mut state, l).expect("present").data_mut()[k] = orig - step;
                let down = loss(&pdd, &state)?;
                get(&mut state, l).expect("present").data_mut()[k] = orig;
                let numeric = central(up, down);
                record(analytic[k], numeric, &format!("l{l}.{label}"), k);
            }
        }
    }
    Ok(report)
}
