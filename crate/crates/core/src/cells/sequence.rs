//! Whole-window forward pass, backpropagation through time, and the loss.

use serde::{Deserialize, Serialize};

use super::arch::{Arch, ArchKind};
use super::layer::{layer_backward, layer_forward, LayerInput, LayerTape, LayerWeights};
use super::params::{bias_name, gain_name, weight_name, ModelParams, EMBED, OUT_BIAS, OUT_WEIGHT};
use crate::error::{Error, Result};
use crate::math::{gemm, gemm_steps, Matrix, Real};
use crate::regularization::{weight_norm_backward, DropoutMasks};

/// Recurrent state of one layer for every lane, `lanes x hidden`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerState<T> {
    pub h: Matrix<T>,
    /// Cell state, present for gated cells.
    pub c: Option<Matrix<T>>,
}

/// Recurrent state of every layer. A single-lane state is what one step of
/// a cell consumes and produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State<T> {
    pub layers: Vec<LayerState<T>>,
}

/// State of a single lane.
pub type StepState<T> = State<T>;

impl<T: Real> State<T> {
    pub fn zeros(arch: &Arch, lanes: usize) -> Self {
        let gated = arch.cell().gated();
        State {
            layers: (0..arch.layers)
                .map(|_| LayerState {
                    h: Matrix::zeros(lanes, arch.hidden),
                    c: gated.then(|| Matrix::zeros(lanes, arch.hidden)),
                })
                .collect(),
        }
    }

    pub fn lanes(&self) -> usize {
        self.layers.first().map_or(0, |l| l.h.rows())
    }

    /// Hidden state of the top layer.
    pub fn top(&self) -> &Matrix<T> {
        &self.layers.last().expect("state has at least one layer").h
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.h.is_finite() && l.c.as_ref().is_none_or(|c| c.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> State<U> {
        State {
            layers: self
                .layers
                .iter()
                .map(|l| LayerState {
                    h: l.h.cast(),
                    c: l.c.as_ref().map(|c| c.cast()),
                })
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &State<T>) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| {
                let dc = match (&a.c, &b.c) {
                    (Some(x), Some(y)) => x.max_abs_diff(y),
                    _ => 0.0,
                };
                a.h.max_abs_diff(&b.h).max(dc)
            })
            .fold(0.0, f64::max)
    }

    fn check(&self, arch: &Arch, lanes: usize) -> Result<()> {
        let gated = arch.cell().gated();
        if self.layers.len() != arch.layers {
            return Err(Error::Dimension(format!(
                "state has {} layers, architecture has {}",
                self.layers.len(),
                arch.layers
            )));
        }
        for l in &self.layers {
            if l.h.shape() != (lanes, arch.hidden) || l.c.is_some() != gated {
                return Err(Error::Dimension("state does not match the architecture".into()));
            }
            if let Some(c) = &l.c {
                if c.shape() != (lanes, arch.hidden) {
                    return Err(Error::Dimension("cell state does not match the architecture".into()));
                }
            }
        }
        Ok(())
    }
}

/// Everything recorded by [`forward_sequence`].
///
/// Rows of every buffer are time-major (`t * lanes + lane`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tape<T> {
    pub lanes: usize,
    pub steps: usize,
    pub inputs: Vec<usize>,
    pub masks: Option<DropoutMasks<T>>,
    pub state0: State<T>,
    /// Embedded (and masked) inputs, `rows x embed`.
    pub embedded: Option<Matrix<T>>,
    pub layers: Vec<LayerTape<T>>,
    /// Top hidden state as fed to the output layer, `rows x hidden`.
    pub head_input: Matrix<T>,
    /// `rows x vocab`.
    pub logits: Matrix<T>,
}

impl<T: Real> Tape<T> {
    /// Window length in timesteps.
    pub fn len(&self) -> usize {
        self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps == 0
    }

    /// Logits of lane `lane` at step `t`.
    pub fn logits_at(&self, t: usize, lane: usize) -> &[T] {
        self.logits.row(t * self.lanes + lane)
    }
}

fn check_masks<T: Real>(arch: &Arch, masks: &DropoutMasks<T>, lanes: usize) -> Result<()> {
    if masks.lanes != lanes {
        return Err(Error::Dimension(format!(
            "masks are for {} lanes, state has {lanes}",
            masks.lanes
        )));
    }
    if let Some(e) = &masks.embed {
        if arch.embed == 0 {
            return Err(Error::Dimension("embedding mask given without an embedding".into()));
        }
        if e.shape() != (lanes, arch.embed) {
            return Err(Error::Dimension(format!(
                "embedding mask is {}x{}, expected {lanes}x{}",
                e.rows(),
                e.cols(),
                arch.embed
            )));
        }
    }
    if let Some(hs) = &masks.hidden {
        if hs.len() != arch.layers {
            return Err(Error::Dimension(format!(
                "{} hidden masks for {} layers",
                hs.len(),
                arch.layers
            )));
        }
        for m in hs {
            if m.shape() != (lanes, arch.hidden) {
                return Err(Error::Dimension(format!(
                    "hidden mask is {}x{}, expected {lanes}x{}",
                    m.rows(),
                    m.cols(),
                    arch.hidden
                )));
            }
        }
    }
    Ok(())
}

/// Run every layer over a window and apply the output layer at each step.
///
/// `inputs` is time-major with `state0.lanes()` lanes. Returns the tape and
/// the final state, which the next window starts from.
pub fn forward_sequence<T: Real>(
    params: &ModelParams<T>,
    state0: &State<T>,
    inputs: &[usize],
    masks: Option<&DropoutMasks<T>>,
) -> Result<(Tape<T>, State<T>)> {
    let arch = *params.arch();
    let vocab = params.vocab();
    if arch.kind == ArchKind::TensorRnn {
        return Err(Error::Config(
            "the tensor RNN has no sequence model; use tensor_rnn_step".into(),
        ));
    }
    let lanes = state0.lanes();
    if lanes == 0 {
        return Err(Error::Dimension("state has no lanes".into()));
    }
    if inputs.is_empty() || !inputs.len().is_multiple_of(lanes) {
        return Err(Error::Dimension(format!(
            "{} inputs do not form whole steps of {lanes} lanes",
            inputs.len()
        )));
    }
    if let Some(&x) = inputs.iter().find(|&&x| x >= vocab) {
        return Err(Error::Index { index: x, size: vocab });
    }
    state0.check(&arch, lanes)?;
    if let Some(m) = masks {
        check_masks(&arch, m, lanes)?;
    }
    let steps = inputs.len() / lanes;
    let rows = inputs.len();
    let h = arch.hidden;

    let embedded = if arch.embed > 0 {
        let w_emb = params.get(EMBED)?;
        let e = arch.embed;
        let mut out = Matrix::zeros(rows, e);
        let emask = masks.and_then(|m| m.embed.as_ref());
        for (row, &x) in inputs.iter().enumerate() {
            let dst = out.row_mut(row);
            dst.copy_from_slice(w_emb.row(x));
            if let Some(mk) = emask {
                for (d, &k) in dst.iter_mut().zip(mk.row(row % lanes)) {
                    *d *= k;
                }
            }
        }
        Some(out)
    } else {
        None
    };

    let mut layers: Vec<LayerTape<T>> = Vec::with_capacity(arch.layers);
    for l in 0..arch.layers {
        let w = LayerWeights::resolve(params, l)?;
        let input = if l == 0 {
            match &embedded {
                Some(e) => LayerInput::Dense(e.clone()),
                None => LayerInput::OneHot(inputs.to_vec()),
            }
        } else {
            let below = layers[l - 1].outputs(lanes, h).to_vec();
            LayerInput::Dense(Matrix::from_vec(rows, h, below)?)
        };
        let s = &state0.layers[l];
        let tape = layer_forward(
            &w,
            input,
            steps,
            lanes,
            s.h.data(),
            s.c.as_ref().map(|c| c.data()),
            masks.and_then(|m| m.hidden_mask(l)),
        )?;
        layers.push(tape);
    }

    let top = layers.last().expect("at least one layer");
    let mut head = Matrix::from_vec(rows, h, top.outputs(lanes, h).to_vec())?;
    if let Some(mk) = output_mask(masks, arch.layers) {
        for row in 0..rows {
            for (d, &k) in head.row_mut(row).iter_mut().zip(mk.row(row % lanes)) {
                *d *= k;
            }
        }
    }
    let w_out = params.get(OUT_WEIGHT)?;
    let b_out = params.get(OUT_BIAS)?;
    let mut logits = Matrix::zeros(rows, vocab);
    for row in 0..rows {
        logits.row_mut(row).copy_from_slice(b_out.data());
    }
    gemm_steps(
        steps,
        lanes,
        h,
        vocab,
        T::one(),
        (head.data(), h, 1),
        (w_out.data(), 1, h),
        T::one(),
        (logits.data_mut(), vocab, 1),
    );

    let last = steps * lanes * h;
    let state = State {
        layers: layers
            .iter()
            .map(|lt| LayerState {
                h: Matrix::from_vec(lanes, h, lt.h[last..].to_vec()).expect("state shape"),
                c: (!lt.c.is_empty())
                    .then(|| Matrix::from_vec(lanes, h, lt.c[last..].to_vec()).expect("state shape")),
            })
            .collect(),
    };
    let tape = Tape {
        lanes,
        steps,
        inputs: inputs.to_vec(),
        masks: masks.cloned(),
        state0: state0.clone(),
        embedded,
        layers,
        head_input: head,
        logits,
    };
    Ok((tape, state))
}

fn output_mask<T: Real>(masks: Option<&DropoutMasks<T>>, layers: usize) -> Option<&Matrix<T>> {
    masks.filter(|m| m.output_path).and_then(|m| m.hidden_mask(layers - 1))
}

fn check_targets(targets: &[usize], rows: usize, vocab: usize) -> Result<()> {
    if targets.len() != rows {
        return Err(Error::Dimension(format!(
            "{} targets for a window of {rows} predictions",
            targets.len()
        )));
    }
    if let Some(&y) = targets.iter().find(|&&y| y >= vocab) {
        return Err(Error::Index { index: y, size: vocab });
    }
    Ok(())
}

/// Natural-log cross-entropy of every target under the logits, in row order.
pub fn target_nats<T: Real>(logits: &Matrix<T>, targets: &[usize]) -> Result<Vec<f64>> {
    check_targets(targets, logits.rows(), logits.cols())?;
    Ok(targets
        .iter()
        .enumerate()
        .map(|(row, &y)| {
            let z = logits.row(row);
            let max = z.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let lse = z.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln() + max;
            lse - z[y].as_f64()
        })
        .collect())
}

/// Mean natural-log cross-entropy over the window; the quantity
/// [`backward_sequence`] differentiates.
pub fn window_loss<T: Real>(tape: &Tape<T>, targets: &[usize]) -> Result<f64> {
    let nats = target_nats(&tape.logits, targets)?;
    Ok(nats.iter().sum::<f64>() / nats.len() as f64)
}

/// Gradient of [`window_loss`] with respect to every parameter, plus the
/// gradient with respect to the window's initial state.
pub fn backward_sequence<T: Real>(
    params: &ModelParams<T>,
    tape: &Tape<T>,
    targets: &[usize],
) -> Result<(ModelParams<T>, State<T>)> {
    let arch = *params.arch();
    let vocab = params.vocab();
    let lanes = tape.lanes;
    let steps = tape.steps;
    let rows = lanes * steps;
    let h = arch.hidden;
    check_targets(targets, rows, vocab)?;
    if tape.layers.len() != arch.layers || tape.logits.shape() != (rows, vocab) {
        return Err(Error::Dimension("tape does not match the parameters".into()));
    }
    let mut grads = params.zeros_like();

    // Softmax cross-entropy head.
    let scale = T::lit(1.0 / rows as f64);
    let mut dz = tape.logits.clone();
    for (row, &y) in targets.iter().enumerate() {
        let z = dz.row_mut(row);
        crate::math::softmax_in_place(z);
        z[y] -= T::one();
        for v in z.iter_mut() {
            *v *= scale;
        }
    }
    {
        let dw = grads.get_mut(OUT_WEIGHT)?;
        gemm(
            vocab,
            rows,
            h,
            T::one(),
            (dz.data(), 1, vocab),
            (tape.head_input.data(), h, 1),
            T::zero(),
            (dw.data_mut(), h, 1),
        );
    }
    {
        let db = grads.get_mut(OUT_BIAS)?;
        let acc = db.data_mut();
        for row in 0..rows {
            for (a, &v) in acc.iter_mut().zip(dz.row(row)) {
                *a += v;
            }
        }
    }
    let w_out = params.get(OUT_WEIGHT)?;
    let mut d_h = vec![T::zero(); rows * h];
    gemm(
        rows,
        vocab,
        h,
        T::one(),
        (dz.data(), vocab, 1),
        (w_out.data(), h, 1),
        T::zero(),
        (&mut d_h, h, 1),
    );
    let masks = tape.masks.as_ref();
    if let Some(mk) = output_mask(masks, arch.layers) {
        for row in 0..rows {
            for (d, &k) in d_h[row * h..(row + 1) * h].iter_mut().zip(mk.row(row % lanes)) {
                *d *= k;
            }
        }
    }

    let cell = arch.cell();
    let mut dstate = State::zeros(&arch, lanes);
    let mut d_embedded = None;
    for l in (0..arch.layers).rev() {
        let w = LayerWeights::resolve(params, l)?;
        let g = layer_backward(
            &w,
            &tape.layers[l],
            steps,
            lanes,
            &d_h,
            masks.and_then(|m| m.hidden_mask(l)),
            l > 0 || arch.embed > 0,
        );
        for (blk, dw) in cell.input_blocks().iter().zip(g.d_in) {
            *grads.get_mut(&weight_name(l, blk))? = dw;
        }
        for (gate, db) in cell.biases().iter().zip(g.d_bias) {
            grads.get_mut(&bias_name(l, gate))?.data_mut().copy_from_slice(&db);
        }
        let rec_names = cell.recurrent_matrices();
        let rec_grads = g.d_mh.into_iter().chain(g.d_gate);
        for (blk, d_eff) in rec_names.iter().zip(rec_grads) {
            let name = weight_name(l, blk);
            if arch.weight_norm {
                let gname = gain_name(l, blk);
                let (dv, dg) = weight_norm_backward(params.get(&name)?, params.get(&gname)?.data(), &d_eff);
                *grads.get_mut(&name)? = dv;
                grads.get_mut(&gname)?.data_mut().copy_from_slice(&dg);
            } else {
                *grads.get_mut(&name)? = d_eff;
            }
        }
        dstate.layers[l].h = Matrix::from_vec(lanes, h, g.dh0)?;
        if let Some(dc) = g.dc0 {
            dstate.layers[l].c = Some(Matrix::from_vec(lanes, h, dc)?);
        }
        if l > 0 {
            d_h = g.d_input.expect("dense input gradient").into_data();
        } else {
            d_embedded = g.d_input;
        }
    }

    if let Some(de) = d_embedded {
        let e = arch.embed;
        let emask = masks.and_then(|m| m.embed.as_ref());
        let dw = grads.get_mut(EMBED)?;
        for (row, &x) in tape.inputs.iter().enumerate() {
            let src = de.row(row);
            let dst = dw.row_mut(x);
            match emask {
                Some(mk) => {
                    for ((d, &v), &k) in dst.iter_mut().zip(src).zip(mk.row(row % lanes)) {
                        *d += v * k;
                    }
                }
                None => {
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d += v;
                    }
                }
            }
            debug_assert_eq!(src.len(), e);
        }
    }
    Ok((grads, dstate))
}
