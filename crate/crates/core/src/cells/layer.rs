//! Batched forward and backward passes for one recurrent layer.
//!
//! Buffers are time-major: row `t * lanes + b` holds lane `b` at step `t`.
//! The pre-activation buffer has one `hidden`-wide column block per input
//! block of the cell (see [`CellKind::input_blocks`]); after the forward
//! pass the gate blocks hold activations (`tanh` for the candidate, sigmoid
//! for gates) while the `m` factor block keeps `W_mx x_t`.

use std::borrow::Cow;

use super::arch::{CellKind, LstmVariant};
use super::params::{bias_name, gain_name, weight_name, ModelParams};
use crate::error::{Error, Result};
use crate::math::{gemm, gemm_steps, sigmoid, Matrix, Real, SMALL_ROWS};
use crate::regularization::weight_norm_effective;

/// Input of one layer over a whole window.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerInput<T> {
    /// Column indices, one per row.
    OneHot(Vec<usize>),
    /// `rows x input_dim`.
    Dense(Matrix<T>),
}

impl<T: Real> LayerInput<T> {
    pub fn rows(&self) -> usize {
        match self {
            LayerInput::OneHot(ids) => ids.len(),
            LayerInput::Dense(m) => m.rows(),
        }
    }
}

/// Everything one layer recorded during the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTape<T> {
    pub input: LayerInput<T>,
    /// `rows x (blocks * hidden)`: `W_mx x_t` then gate activations.
    pub act: Vec<T>,
    /// `h_{t-1}` after the hidden dropout mask, `rows x hidden`.
    pub h_tilde: Vec<T>,
    /// `W_mh h~_{t-1}` (multiplicative cells only).
    pub r: Vec<T>,
    /// Intermediate state `m_t` (multiplicative cells only).
    pub m: Vec<T>,
    /// Cell state, `(steps + 1) x lanes x hidden` with the initial state first (gated cells only).
    pub c: Vec<T>,
    /// Hidden state, `(steps + 1) x lanes x hidden` with the initial state first.
    pub h: Vec<T>,
}

impl<T: Real> LayerTape<T> {
    /// Hidden outputs `h_1..h_T` as a `rows x hidden` slice.
    pub fn outputs(&self, lanes: usize, hidden: usize) -> &[T] {
        &self.h[lanes * hidden..]
    }
}

/// Weights of one layer, with weight normalization already applied.
pub(crate) struct LayerWeights<'a, T: Real> {
    pub cell: CellKind,
    pub variant: LstmVariant,
    pub hidden: usize,
    pub input_dim: usize,
    pub w_in: Vec<&'a Matrix<T>>,
    pub bias: Vec<&'a Matrix<T>>,
    pub w_mh: Option<Cow<'a, Matrix<T>>>,
    pub w_gate: Vec<Cow<'a, Matrix<T>>>,
}

impl<'a, T: Real> LayerWeights<'a, T> {
    pub fn resolve(params: &'a ModelParams<T>, layer: usize) -> Result<Self> {
        let arch = params.arch();
        let cell = arch.cell();
        let recurrent = |blk: &str| -> Result<Cow<'a, Matrix<T>>> {
            let name = weight_name(layer, blk);
            let v = params.get(&name)?;
            if arch.weight_norm {
                let g = params.get(&gain_name(layer, blk))?;
                Ok(Cow::Owned(weight_norm_effective(v, g.data(), &name)?))
            } else {
                Ok(Cow::Borrowed(v))
            }
        };
        let w_in = cell
            .input_blocks()
            .iter()
            .map(|b| params.get(&weight_name(layer, b)))
            .collect::<Result<Vec<_>>>()?;
        let bias = cell
            .biases()
            .iter()
            .map(|g| params.get(&bias_name(layer, g)))
            .collect::<Result<Vec<_>>>()?;
        let w_mh = if cell.multiplicative() {
            Some(recurrent("mh")?)
        } else {
            None
        };
        let w_gate = cell
            .gate_matrices()
            .iter()
            .map(|b| recurrent(b))
            .collect::<Result<Vec<_>>>()?;
        Ok(LayerWeights {
            cell,
            variant: arch.variant,
            hidden: arch.hidden,
            input_dim: arch.input_dim(layer, params.vocab()),
            w_in,
            bias,
            w_mh,
            w_gate,
        })
    }

    fn blocks(&self) -> usize {
        self.w_in.len()
    }
}

/// Gradients of one layer in the effective (post weight-norm) parameterization.
pub(crate) struct LayerGrads<T> {
    pub d_in: Vec<Matrix<T>>,
    pub d_bias: Vec<Vec<T>>,
    pub d_mh: Option<Matrix<T>>,
    pub d_gate: Vec<Matrix<T>>,
    /// Gradient on a dense input, `rows x input_dim`.
    pub d_input: Option<Matrix<T>>,
    pub dh0: Vec<T>,
    pub dc0: Option<Vec<T>>,
}

/// Right operand `m^T` for gemm. The packed kernel re-packs it on every call,
/// and a row-contiguous copy packs much faster than a strided gather. Below
/// the small-row threshold gemm never packs, so the original is used as is.
fn transposed_operand<T: Real>(m: &Matrix<T>, rows: usize) -> (Cow<'_, Matrix<T>>, usize, usize) {
    if rows < SMALL_ROWS {
        (Cow::Borrowed(m), 1, m.cols())
    } else {
        (Cow::Owned(m.transpose()), m.rows(), 1)
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_forward<T: Real>(
    w: &LayerWeights<T>,
    input: LayerInput<T>,
    steps: usize,
    lanes: usize,
    h0: &[T],
    c0: Option<&[T]>,
    mask: Option<&Matrix<T>>,
) -> Result<LayerTape<T>> {
    let h = w.hidden;
    let nb = w.blocks();
    let width = nb * h;
    let rows = steps * lanes;
    let off = w.cell.gate_offset();
    let gated = w.cell.gated();
    let mult = w.cell.multiplicative();

    if input.rows() != rows {
        return Err(Error::Dimension(format!("layer input has {} rows, expected {rows}", input.rows())));
    }
    if h0.len() != lanes * h {
        return Err(Error::Dimension("initial hidden state has the wrong size".into()));
    }
    if let Some(m) = mask {
        if m.shape() != (lanes, h) {
            return Err(Error::Dimension(format!(
                "hidden mask is {}x{}, expected {lanes}x{h}",
                m.rows(),
                m.cols()
            )));
        }
    }

    // Input contributions for every step at once.
    let mut act = vec![T::zero(); rows * width];
    match &input {
        LayerInput::OneHot(ids) => {
            let n = w.input_dim;
            for (row, &x) in ids.iter().enumerate() {
                if x >= n {
                    return Err(Error::Index { index: x, size: n });
                }
                for (blk, wm) in w.w_in.iter().enumerate() {
                    let dst = &mut act[row * width + blk * h..row * width + (blk + 1) * h];
                    let src = wm.data();
                    for (j, d) in dst.iter_mut().enumerate() {
                        *d = src[j * n + x];
                    }
                }
            }
        }
        LayerInput::Dense(u) => {
            let d = w.input_dim;
            if u.cols() != d {
                return Err(Error::Dimension(format!("dense input has {} columns, expected {d}", u.cols())));
            }
            for (blk, wm) in w.w_in.iter().enumerate() {
                let (wt, brs, bcs) = transposed_operand(wm, lanes);
                gemm_steps(
                    steps,
                    lanes,
                    d,
                    h,
                    T::one(),
                    (u.data(), d, 1),
                    (wt.data(), brs, bcs),
                    T::zero(),
                    (&mut act[blk * h..], width, 1),
                );
            }
        }
    }
    for row in 0..rows {
        for (g, b) in w.bias.iter().enumerate() {
            let blk = off + g;
            let dst = &mut act[row * width + blk * h..row * width + (blk + 1) * h];
            for (d, &bv) in dst.iter_mut().zip(b.data()) {
                *d += bv;
            }
        }
    }

    let mut h_all = vec![T::zero(); (steps + 1) * lanes * h];
    h_all[..lanes * h].copy_from_slice(h0);
    let mut c_all = if gated {
        let mut c = vec![T::zero(); (steps + 1) * lanes * h];
        match c0 {
            Some(c0) if c0.len() == lanes * h => c[..lanes * h].copy_from_slice(c0),
            Some(_) => return Err(Error::Dimension("initial cell state has the wrong size".into())),
            None => return Err(Error::Dimension("gated cell needs an initial cell state".into())),
        }
        c
    } else {
        Vec::new()
    };
    let mut h_tilde = vec![T::zero(); rows * h];
    let (mut r_all, mut m_all) = if mult {
        (vec![T::zero(); rows * h], vec![T::zero(); rows * h])
    } else {
        (Vec::new(), Vec::new())
    };

    let w_mh_t = w.w_mh.as_ref().map(|m| transposed_operand(m, lanes));
    let w_gate_t: Vec<_> = w.w_gate.iter().map(|m| transposed_operand(m, lanes)).collect();

    for t in 0..steps {
        let rs = t * lanes * h..(t + 1) * lanes * h;
        {
            let hp = &h_all[rs.clone()];
            let ht = &mut h_tilde[rs.clone()];
            match mask {
                Some(m) => {
                    for ((o, &x), &k) in ht.iter_mut().zip(hp).zip(m.data()) {
                        *o = x * k;
                    }
                }
                None => ht.copy_from_slice(hp),
            }
        }
        let act_t = &mut act[t * lanes * width..(t + 1) * lanes * width];
        if mult {
            let (w_mh_t, brs, bcs) = w_mh_t.as_ref().expect("multiplicative cell has W_mh");
            let r_t = &mut r_all[rs.clone()];
            gemm(
                lanes,
                h,
                h,
                T::one(),
                (&h_tilde[rs.clone()], h, 1),
                (w_mh_t.data(), *brs, *bcs),
                T::zero(),
                (r_t, h, 1),
            );
            let m_t = &mut m_all[rs.clone()];
            for b in 0..lanes {
                for j in 0..h {
                    m_t[b * h + j] = act_t[b * width + j] * r_t[b * h + j];
                }
            }
        }
        let src: &[T] = if mult { &m_all[rs.clone()] } else { &h_tilde[rs.clone()] };
        for (g, (wg, brs, bcs)) in w_gate_t.iter().enumerate() {
            gemm(
                lanes,
                h,
                h,
                T::one(),
                (src, h, 1),
                (wg.data(), *brs, *bcs),
                T::one(),
                (&mut act_t[(off + g) * h..], width, 1),
            );
        }

        let (prev, next) = h_all.split_at_mut((t + 1) * lanes * h);
        let _ = prev;
        let h_next = &mut next[..lanes * h];
        if gated {
            let (cp, cn) = c_all.split_at_mut((t + 1) * lanes * h);
            let c_prev = &cp[t * lanes * h..];
            let c_next = &mut cn[..lanes * h];
            for b in 0..lanes {
                let base = b * width + off * h;
                for j in 0..h {
                    let g = act_t[base + j].tanh();
                    let i = sigmoid(act_t[base + h + j]);
                    let o = sigmoid(act_t[base + 2 * h + j]);
                    let f = sigmoid(act_t[base + 3 * h + j]);
                    act_t[base + j] = g;
                    act_t[base + h + j] = i;
                    act_t[base + 2 * h + j] = o;
                    act_t[base + 3 * h + j] = f;
                    let c = f * c_prev[b * h + j] + i * g;
                    c_next[b * h + j] = c;
                    h_next[b * h + j] = match w.variant {
                        LstmVariant::Standard => c.tanh() * o,
                        LstmVariant::GateInsideTanh => (c * o).tanh(),
                    };
                }
            }
        } else {
            for b in 0..lanes {
                let base = b * width + off * h;
                for j in 0..h {
                    let a = act_t[base + j].tanh();
                    act_t[base + j] = a;
                    h_next[b * h + j] = a;
                }
            }
        }
    }

    Ok(LayerTape {
        input,
        act,
        h_tilde,
        r: r_all,
        m: m_all,
        c: c_all,
        h: h_all,
    })
}

/// Backpropagate through one layer.
///
/// `d_out` is the gradient on `h_1..h_T` from everything above the layer.
/// The gradient reaching `h_0`/`c_0` is returned but not propagated further.
pub(crate) fn layer_backward<T: Real>(
    w: &LayerWeights<T>,
    tape: &LayerTape<T>,
    steps: usize,
    lanes: usize,
    d_out: &[T],
    mask: Option<&Matrix<T>>,
    want_input_grad: bool,
) -> LayerGrads<T> {
    let h = w.hidden;
    let nb = w.blocks();
    let width = nb * h;
    let rows = steps * lanes;
    let off = w.cell.gate_offset();
    let gated = w.cell.gated();
    let mult = w.cell.multiplicative();
    let one = T::one();

    let mut da = vec![T::zero(); rows * width];
    let mut dr = if mult { vec![T::zero(); rows * h] } else { Vec::new() };
    let mut dh_carry = vec![T::zero(); lanes * h];
    let mut dc_carry = vec![T::zero(); if gated { lanes * h } else { 0 }];
    let mut dsrc = vec![T::zero(); lanes * h];

    for t in (0..steps).rev() {
        let rs = t * lanes * h..(t + 1) * lanes * h;
        let act_t = &tape.act[t * lanes * width..(t + 1) * lanes * width];
        let da_t = &mut da[t * lanes * width..(t + 1) * lanes * width];
        let d_out_t = &d_out[rs.clone()];
        if gated {
            let c_t = &tape.c[(t + 1) * lanes * h..(t + 2) * lanes * h];
            let c_prev = &tape.c[t * lanes * h..(t + 1) * lanes * h];
            for b in 0..lanes {
                let base = b * width + off * h;
                for j in 0..h {
                    let k = b * h + j;
                    let g = act_t[base + j];
                    let i = act_t[base + h + j];
                    let o = act_t[base + 2 * h + j];
                    let f = act_t[base + 3 * h + j];
                    let c = c_t[k];
                    let dh = d_out_t[k] + dh_carry[k];
                    let (d_o, dc) = match w.variant {
                        LstmVariant::Standard => {
                            let tc = c.tanh();
                            (dh * tc, dc_carry[k] + dh * o * (one - tc * tc))
                        }
                        LstmVariant::GateInsideTanh => {
                            let s = (c * o).tanh();
                            let ds = dh * (one - s * s);
                            (ds * c, dc_carry[k] + ds * o)
                        }
                    };
                    da_t[base + j] = dc * i * (one - g * g);
                    da_t[base + h + j] = dc * g * i * (one - i);
                    da_t[base + 2 * h + j] = d_o * o * (one - o);
                    da_t[base + 3 * h + j] = dc * c_prev[k] * f * (one - f);
                    dc_carry[k] = dc * f;
                }
            }
        } else {
            for b in 0..lanes {
                let base = b * width + off * h;
                for j in 0..h {
                    let k = b * h + j;
                    let a = act_t[base + j];
                    da_t[base + j] = (d_out_t[k] + dh_carry[k]) * (one - a * a);
                }
            }
        }

        // Gradient on the recurrent source (m_t or h~_{t-1}).
        for (g, wg) in w.w_gate.iter().enumerate() {
            gemm(
                lanes,
                h,
                h,
                one,
                (&da_t[(off + g) * h..], width, 1),
                (wg.data(), h, 1),
                if g == 0 { T::zero() } else { one },
                (&mut dsrc, h, 1),
            );
        }
        let dh_tilde: &[T] = if mult {
            let r_t = &tape.r[rs.clone()];
            let dr_t = &mut dr[rs.clone()];
            for b in 0..lanes {
                for j in 0..h {
                    let k = b * h + j;
                    let q = act_t[b * width + j];
                    da_t[b * width + j] = dsrc[k] * r_t[k];
                    dr_t[k] = dsrc[k] * q;
                }
            }
            let w_mh = w.w_mh.as_ref().expect("multiplicative cell has W_mh");
            let mut tmp = vec![T::zero(); lanes * h];
            gemm(lanes, h, h, one, (dr_t, h, 1), (w_mh.data(), h, 1), T::zero(), (&mut tmp, h, 1));
            dsrc.copy_from_slice(&tmp);
            &dsrc
        } else {
            &dsrc
        };
        match mask {
            Some(m) => {
                for ((o, &d), &k) in dh_carry.iter_mut().zip(dh_tilde).zip(m.data()) {
                    *o = d * k;
                }
            }
            None => dh_carry.copy_from_slice(dh_tilde),
        }
    }

    // Weight gradients, accumulated over the whole window in one product each.
    let src_all: &[T] = if mult { &tape.m } else { &tape.h_tilde };
    let d_gate = (0..w.w_gate.len())
        .map(|g| {
            let mut dw = Matrix::zeros(h, h);
            gemm(
                h,
                rows,
                h,
                one,
                (&da[(off + g) * h..], 1, width),
                (src_all, h, 1),
                T::zero(),
                (dw.data_mut(), h, 1),
            );
            dw
        })
        .collect();
    let d_mh = mult.then(|| {
        let mut dw = Matrix::zeros(h, h);
        gemm(h, rows, h, one, (&dr, 1, h), (&tape.h_tilde, h, 1), T::zero(), (dw.data_mut(), h, 1));
        dw
    });
    let d_bias = (0..w.bias.len())
        .map(|g| {
            let blk = off + g;
            let mut acc = vec![T::zero(); h];
            for row in 0..rows {
                for (a, &v) in acc.iter_mut().zip(&da[row * width + blk * h..row * width + (blk + 1) * h]) {
                    *a += v;
                }
            }
            acc
        })
        .collect();

    let d = w.input_dim;
    let mut d_in: Vec<Matrix<T>> = (0..nb).map(|_| Matrix::zeros(h, d)).collect();
    let mut d_input = None;
    match &tape.input {
        LayerInput::OneHot(ids) => {
            for (row, &x) in ids.iter().enumerate() {
                for (blk, dw) in d_in.iter_mut().enumerate() {
                    let src = &da[row * width + blk * h..row * width + (blk + 1) * h];
                    let data = dw.data_mut();
                    for (j, &v) in src.iter().enumerate() {
                        data[j * d + x] += v;
                    }
                }
            }
        }
        LayerInput::Dense(u) => {
            for (blk, dw) in d_in.iter_mut().enumerate() {
                gemm(
                    h,
                    rows,
                    d,
                    one,
                    (&da[blk * h..], 1, width),
                    (u.data(), d, 1),
                    T::zero(),
                    (dw.data_mut(), d, 1),
                );
            }
            if want_input_grad {
                let mut du = Matrix::zeros(rows, d);
                for (blk, wm) in w.w_in.iter().enumerate() {
                    gemm(
                        rows,
                        h,
                        d,
                        one,
                        (&da[blk * h..], width, 1),
                        (wm.data(), d, 1),
                        if blk == 0 { T::zero() } else { one },
                        (du.data_mut(), d, 1),
                    );
                }
                d_input = Some(du);
            }
        }
    }

    LayerGrads {
        d_in,
        d_bias,
        d_mh,
        d_gate,
        d_input,
        dh0: dh_carry,
        dc0: gated.then_some(dc_carry),
    }
}
