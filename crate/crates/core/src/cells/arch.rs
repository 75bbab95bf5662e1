use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest vocabulary for which the tensor RNN may be instantiated.
pub const TENSOR_RNN_MAX_VOCAB: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchKind {
    VanillaRnn,
    TensorRnn,
    Mrnn,
    Lstm,
    StackedLstm,
    Mlstm,
}

impl ArchKind {
    pub fn name(self) -> &'static str {
        match self {
            ArchKind::VanillaRnn => "vanilla-rnn",
            ArchKind::TensorRnn => "tensor-rnn",
            ArchKind::Mrnn => "mrnn",
            ArchKind::Lstm => "lstm",
            ArchKind::StackedLstm => "stacked-lstm",
            ArchKind::Mlstm => "mlstm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "vanilla-rnn" | "rnn" => ArchKind::VanillaRnn,
            "tensor-rnn" => ArchKind::TensorRnn,
            "mrnn" => ArchKind::Mrnn,
            "lstm" => ArchKind::Lstm,
            "stacked-lstm" => ArchKind::StackedLstm,
            "mlstm" => ArchKind::Mlstm,
            other => return Err(Error::Config(format!("unknown architecture {other:?}"))),
        })
    }
}

/// Where the output gate sits in the final cell nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LstmVariant {
    /// `h = tanh(c) * o`
    #[default]
    Standard,
    /// `h = tanh(c * o)`
    GateInsideTanh,
}

/// The per-layer recurrent unit an architecture is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Rnn,
    Mrnn,
    Lstm,
    Mlstm,
}

impl CellKind {
    /// Input-fed blocks in pre-activation order. For the multiplicative
    /// cells block 0 is the `W_mx` factor of the intermediate state.
    pub fn input_blocks(self) -> &'static [&'static str] {
        match self {
            CellKind::Rnn => &["hx"],
            CellKind::Mrnn => &["mx", "hx"],
            CellKind::Lstm => &["hx", "ix", "ox", "fx"],
            CellKind::Mlstm => &["mx", "hx", "ix", "ox", "fx"],
        }
    }

    /// Recurrent matrices feeding the gate blocks, aligned with `biases`.
    /// They read `h_{t-1}` for plain cells and `m_t` for multiplicative ones.
    pub fn gate_matrices(self) -> &'static [&'static str] {
        match self {
            CellKind::Rnn => &["hh"],
            CellKind::Mrnn => &["hm"],
            CellKind::Lstm => &["hh", "ih", "oh", "fh"],
            CellKind::Mlstm => &["hm", "im", "om", "fm"],
        }
    }

    pub fn biases(self) -> &'static [&'static str] {
        match self {
            CellKind::Rnn | CellKind::Mrnn => &["h"],
            CellKind::Lstm | CellKind::Mlstm => &["h", "i", "o", "f"],
        }
    }

    /// Whether the cell forms `m_t = (W_mx x_t) * (W_mh h_{t-1})`.
    pub fn multiplicative(self) -> bool {
        matches!(self, CellKind::Mrnn | CellKind::Mlstm)
    }

    pub fn gated(self) -> bool {
        matches!(self, CellKind::Lstm | CellKind::Mlstm)
    }

    /// All square hidden-to-hidden matrices, `mh` first when present.
    pub fn recurrent_matrices(self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.multiplicative() {
            v.push("mh");
        }
        v.extend_from_slice(self.gate_matrices());
        v
    }

    /// Offset of the first gate block inside the pre-activation buffer.
    pub fn gate_offset(self) -> usize {
        usize::from(self.multiplicative())
    }
}

/// Architecture description shared by parameters, tapes and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub kind: ArchKind,
    pub hidden: usize,
    pub layers: usize,
    /// Embedding width; 0 means one-hot input columns.
    pub embed: usize,
    pub variant: LstmVariant,
    /// Weight-normalize the hidden-to-hidden matrices.
    pub weight_norm: bool,
}

impl Arch {
    pub fn new(kind: ArchKind, hidden: usize) -> Self {
        Arch {
            kind,
            hidden,
            layers: if kind == ArchKind::StackedLstm { 2 } else { 1 },
            embed: 0,
            variant: LstmVariant::Standard,
            weight_norm: false,
        }
    }

    pub fn with_embed(mut self, embed: usize) -> Self {
        self.embed = embed;
        self
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.layers = layers;
        self
    }

    pub fn with_variant(mut self, variant: LstmVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_weight_norm(mut self, on: bool) -> Self {
        self.weight_norm = on;
        self
    }

    pub fn cell(&self) -> CellKind {
        match self.kind {
            ArchKind::VanillaRnn | ArchKind::TensorRnn => CellKind::Rnn,
            ArchKind::Mrnn => CellKind::Mrnn,
            ArchKind::Lstm | ArchKind::StackedLstm => CellKind::Lstm,
            ArchKind::Mlstm => CellKind::Mlstm,
        }
    }

    /// Width of the vector entering `layer` (vocabulary size for one-hot).
    pub fn input_dim(&self, layer: usize, vocab: usize) -> usize {
        if layer > 0 {
            self.hidden
        } else if self.embed > 0 {
            self.embed
        } else {
            vocab
        }
    }

    /// Whether `layer` reads one-hot columns rather than a dense vector.
    pub fn one_hot_input(&self, layer: usize) -> bool {
        layer == 0 && self.embed == 0
    }

    pub fn validate(&self, vocab: usize) -> Result<()> {
        if vocab < 2 {
            return Err(Error::Config(format!("vocabulary size must be at least 2, got {vocab}")));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden size must be positive".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("at least one layer is required".into()));
        }
        if self.layers > 1 && self.kind != ArchKind::StackedLstm {
            return Err(Error::Config(format!(
                "{} is single-layer; only stacked-lstm takes layers > 1",
                self.kind.name()
            )));
        }
        if self.kind == ArchKind::TensorRnn {
            if vocab > TENSOR_RNN_MAX_VOCAB {
                return Err(Error::Config(format!(
                    "tensor-rnn needs vocab <= {TENSOR_RNN_MAX_VOCAB}, got {vocab}"
                )));
            }
            if self.embed > 0 || self.weight_norm {
                return Err(Error::Config("tensor-rnn supports neither embeddings nor weight norm".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layers_only_for_stacked() {
        assert!(Arch::new(ArchKind::Mlstm, 4).with_layers(2).validate(5).is_err());
        assert!(Arch::new(ArchKind::StackedLstm, 4).validate(5).is_ok());
        assert_eq!(Arch::new(ArchKind::StackedLstm, 4).layers, 2);
    }

    #[test]
    fn tensor_rnn_vocab_limit() {
        assert!(Arch::new(ArchKind::TensorRnn, 4).validate(64).is_ok());
        assert!(Arch::new(ArchKind::TensorRnn, 4).validate(65).is_err());
    }

    #[test]
    fn arch_json_names() {
        let a = Arch::new(ArchKind::Mlstm, 8).with_variant(LstmVariant::GateInsideTanh);
        let s = serde_json::to_string(&a).unwrap();
        assert!(s.contains("\"mlstm\"") && s.contains("\"gate-inside-tanh\""));
        for k in [
            ArchKind::VanillaRnn,
            ArchKind::TensorRnn,
            ArchKind::Mrnn,
            ArchKind::Lstm,
            ArchKind::StackedLstm,
            ArchKind::Mlstm,
        ] {
            assert_eq!(ArchKind::parse(k.name()).unwrap(), k);
        }
    }
}
