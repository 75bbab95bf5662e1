use serde::{Deserialize, Serialize};

use super::arch::{Arch, ArchKind, CellKind};
use crate::error::{Error, Result};
use crate::math::{scaled_orthogonal, uniform_fan_in, Matrix, Real, Rng};

/// Initial forget-gate bias for every gated cell.
pub const FORGET_BIAS_INIT: f64 = 3.0;

pub fn weight_name(layer: usize, block: &str) -> String {
    format!("l{layer}.W_{block}")
}

pub fn bias_name(layer: usize, gate: &str) -> String {
    format!("l{layer}.b_{gate}")
}

pub fn gain_name(layer: usize, block: &str) -> String {
    format!("l{layer}.g_{block}")
}

pub fn tensor_rnn_slice_name(n: usize) -> String {
    format!("l0.W_hh.{n}")
}

pub const EMBED: &str = "W_emb";
pub const OUT_WEIGHT: &str = "W_out";
pub const OUT_BIAS: &str = "b_out";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    Input,
    Recurrent,
    Bias,
    Gain,
    Embedding,
    Output,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub role: TensorRole,
}

/// Ordered list of every tensor an architecture owns.
///
/// Weights are stored `(out x in)` so that a pre-activation is `W x`; the
/// output layer is `W_out` of shape `(vocab x hidden)`. Biases and gains are
/// `1 x hidden` rows.
pub fn schema(arch: &Arch, vocab: usize) -> Result<Vec<TensorSpec>> {
    arch.validate(vocab)?;
    let h = arch.hidden;
    let mut out = Vec::new();
    let mut push = |name: String, rows, cols, role| {
        out.push(TensorSpec { name, rows, cols, role });
    };
    if arch.kind == ArchKind::TensorRnn {
        push(weight_name(0, "hx"), h, vocab, TensorRole::Input);
        for n in 0..vocab {
            push(tensor_rnn_slice_name(n), h, h, TensorRole::Recurrent);
        }
        push(bias_name(0, "h"), 1, h, TensorRole::Bias);
        push(OUT_WEIGHT.into(), vocab, h, TensorRole::Output);
        push(OUT_BIAS.into(), 1, vocab, TensorRole::Bias);
        return Ok(out);
    }
    if arch.embed > 0 {
        push(EMBED.into(), vocab, arch.embed, TensorRole::Embedding);
    }
    let cell = arch.cell();
    for l in 0..arch.layers {
        let d = arch.input_dim(l, vocab);
        for blk in cell.input_blocks() {
            push(weight_name(l, blk), h, d, TensorRole::Input);
        }
        for blk in cell.recurrent_matrices() {
            push(weight_name(l, blk), h, h, TensorRole::Recurrent);
        }
        for g in cell.biases() {
            push(bias_name(l, g), 1, h, TensorRole::Bias);
        }
        if arch.weight_norm {
            for blk in cell.recurrent_matrices() {
                push(gain_name(l, blk), 1, h, TensorRole::Gain);
            }
        }
    }
    push(OUT_WEIGHT.into(), vocab, h, TensorRole::Output);
    push(OUT_BIAS.into(), 1, vocab, TensorRole::Bias);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor<T> {
    pub name: String,
    pub value: Matrix<T>,
}

/// Named parameter tensors of one model. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    arch: Arch,
    vocab: usize,
    tensors: Vec<NamedTensor<T>>,
}

impl<T: Real> ModelParams<T> {
    /// All-zero tensors laid out per the architecture's schema.
    pub fn zeros(arch: &Arch, vocab: usize) -> Result<Self> {
        let tensors = schema(arch, vocab)?
            .into_iter()
            .map(|s| NamedTensor {
                name: s.name,
                value: Matrix::zeros(s.rows, s.cols),
            })
            .collect();
        Ok(ModelParams {
            arch: *arch,
            vocab,
            tensors,
        })
    }

    /// Assemble from named tensors; names and shapes must match the schema.
    pub fn from_tensors(arch: &Arch, vocab: usize, tensors: Vec<NamedTensor<T>>) -> Result<Self> {
        let spec = schema(arch, vocab)?;
        if spec.len() != tensors.len() {
            return Err(Error::ShapeManifest(format!(
                "expected {} tensors for {}, found {}",
                spec.len(),
                arch.kind.name(),
                tensors.len()
            )));
        }
        for (s, t) in spec.iter().zip(&tensors) {
            if s.name != t.name || (s.rows, s.cols) != t.value.shape() {
                return Err(Error::ShapeManifest(format!(
                    "expected {} {}x{}, found {} {}x{}",
                    s.name,
                    s.rows,
                    s.cols,
                    t.name,
                    t.value.rows(),
                    t.value.cols()
                )));
            }
        }
        Ok(ModelParams {
            arch: *arch,
            vocab,
            tensors,
        })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            arch: self.arch,
            vocab: self.vocab,
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor {
                    name: t.name.clone(),
                    value: Matrix::zeros(t.value.rows(), t.value.cols()),
                })
                .collect(),
        }
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn tensors(&self) -> &[NamedTensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [NamedTensor<T>] {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> Vec<NamedTensor<T>> {
        self.tensors
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.tensors
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::Config(format!("{} has no tensor {name}", self.arch.kind.name())))
    }

    pub fn get(&self, name: &str) -> Result<&Matrix<T>> {
        let i = self.index_of(name)?;
        Ok(&self.tensors[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Matrix<T>> {
        let i = self.index_of(name)?;
        Ok(&mut self.tensors[i].value)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors
            .iter()
            .find(|t| !t.value.is_finite())
            .map(|t| t.name.as_str())
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors.iter().map(|t| t.value.squared_norm()).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch,
            vocab: self.vocab,
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor {
                    name: t.name.clone(),
                    value: t.value.cast(),
                })
                .collect(),
        }
    }

    /// Largest absolute elementwise difference against a same-schema model.
    pub fn max_abs_diff(&self, other: &ModelParams<T>) -> f64 {
        self.tensors
            .iter()
            .zip(&other.tensors)
            .map(|(a, b)| a.value.max_abs_diff(&b.value))
            .fold(0.0, f64::max)
    }
}

/// Draw initial parameters.
///
/// Square hidden-to-hidden matrices are `init_scale` times a random
/// orthogonal matrix. Input, embedding and output matrices are uniform in
/// `[-s, s]`, `s = 1/sqrt(fan_in)`, where a one-hot input has fan-in 1 (a
/// single active column). Biases start at zero except the forget gate, which
/// starts at 3. Weight-norm gains start at the row norms of their direction
/// matrices, so the effective weights equal the drawn ones.
pub fn init_params<T: Real>(arch: &Arch, vocab: usize, init_scale: f64, rng: &mut Rng) -> Result<ModelParams<T>> {
    if !(init_scale > 0.0) {
        return Err(Error::Config(format!("init_scale must be positive, got {init_scale}")));
    }
    let spec = schema(arch, vocab)?;
    let mut tensors: Vec<NamedTensor<T>> = Vec::with_capacity(spec.len());
    for s in &spec {
        let value = match s.role {
            TensorRole::Recurrent => scaled_orthogonal(s.rows, s.cols, init_scale, rng)?,
            TensorRole::Input => {
                let one_hot = s.name.starts_with("l0.") && arch.embed == 0;
                uniform_fan_in(s.rows, s.cols, if one_hot { 1 } else { s.cols }, rng)
            }
            // Embedding rows are selected by a one-hot input.
            TensorRole::Embedding => uniform_fan_in(s.rows, s.cols, 1, rng),
            TensorRole::Output => uniform_fan_in(s.rows, s.cols, s.cols, rng),
            TensorRole::Bias => {
                if s.name.ends_with(".b_f") && arch.cell().gated() {
                    Matrix::filled(s.rows, s.cols, T::lit(FORGET_BIAS_INIT))
                } else {
                    Matrix::zeros(s.rows, s.cols)
                }
            }
            // Filled below once the direction matrix exists.
            TensorRole::Gain => Matrix::zeros(s.rows, s.cols),
        };
        tensors.push(NamedTensor {
            name: s.name.clone(),
            value,
        });
    }
    if arch.weight_norm {
        for i in 0..tensors.len() {
            if let Some(block) = tensors[i].name.split_once(".g_").map(|(l, b)| format!("{l}.W_{b}")) {
                let v = &tensors.iter().find(|t| t.name == block).expect("direction tensor").value;
                let norms: Vec<T> = (0..v.rows())
                    .map(|r| v.row(r).iter().map(|&x| x * x).sum::<T>().sqrt())
                    .collect();
                tensors[i].value = Matrix::from_vec(1, norms.len(), norms)?;
            }
        }
    }
    ModelParams::from_tensors(arch, vocab, tensors)
}

/// Closed-form parameter accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub recurrent: u64,
    pub input: u64,
    pub output: u64,
    pub embedding: u64,
    pub bias_and_gain: u64,
    pub total: u64,
}

/// Count parameters without allocating them.
///
/// Recurrent weights per layer: RNN `h^2`, mRNN `2h^2`, LSTM `4h^2`, mLSTM
/// `5h^2`, tensor RNN `N h^2`. Input weights: one `h x d` matrix per
/// input-fed block, `d` being the embedding width, `N`, or `h` above the
/// first stacked layer. Output: `N h`. `bias_and_gain` holds the gate
/// biases, the output bias and any weight-norm gains.
pub fn param_count(arch: &Arch, vocab: usize) -> ParamCount {
    let h = arch.hidden as u64;
    let n = vocab as u64;
    let e = arch.embed as u64;
    let (mut recurrent, mut input, mut bias_and_gain) = (0u64, 0u64, n);
    if arch.kind == ArchKind::TensorRnn {
        recurrent = n * h * h;
        input = n * h;
        bias_and_gain += h;
    } else {
        let cell = arch.cell();
        let rec_per_layer = match cell {
            CellKind::Rnn => 1,
            CellKind::Mrnn => 2,
            CellKind::Lstm => 4,
            CellKind::Mlstm => 5,
        };
        let blocks = cell.input_blocks().len() as u64;
        for l in 0..arch.layers {
            let d = if l > 0 {
                h
            } else if e > 0 {
                e
            } else {
                n
            };
            recurrent += rec_per_layer * h * h;
            input += blocks * d * h;
            bias_and_gain += cell.biases().len() as u64 * h;
            if arch.weight_norm {
                bias_and_gain += rec_per_layer * h;
            }
        }
    }
    let output = n * h;
    let embedding = n * e;
    ParamCount {
        recurrent,
        input,
        output,
        embedding,
        bias_and_gain,
        total: recurrent + input + output + embedding + bias_and_gain,
    }
}
