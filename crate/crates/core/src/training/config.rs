use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cells::{Arch, ArchKind, LstmVariant};
use crate::data::SplitSpec;
use crate::error::{Error, Result};
use crate::math::Precision;
use crate::optim::{OptimizerKind, Schedule};
use crate::regularization::DropoutConfig;

/// Everything that defines a training run. Read from JSON; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub arch: ArchKind,
    pub hidden: usize,
    /// Defaults to 2 for `stacked-lstm` and 1 otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    pub embed: usize,
    pub lstm_variant: LstmVariant,
    pub weight_norm: bool,
    pub dropout_hidden: f64,
    pub dropout_embed: f64,
    pub dropout_output_path: bool,
    pub optimizer: OptimizerKind,
    pub lr_start: f64,
    pub lr_min: f64,
    pub ell_start: f64,
    pub ell_end: f64,
    /// Schedule length; defaults to `epochs` passes over the training split.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<u64>,
    pub batch_lanes: usize,
    pub window: usize,
    pub epochs: usize,
    /// Training targets between validation passes.
    pub eval_interval: u64,
    /// Evaluations without improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    pub seed: u64,
    pub init_scale: f64,
    pub precision: Precision,
    pub split: SplitSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            arch: ArchKind::Mlstm,
            hidden: 128,
            layers: None,
            embed: 0,
            lstm_variant: LstmVariant::Standard,
            weight_norm: false,
            dropout_hidden: 0.0,
            dropout_embed: 0.0,
            dropout_output_path: true,
            optimizer: OptimizerKind::Adam,
            lr_start: 0.001,
            lr_min: 0.0001,
            ell_start: 1e-3,
            ell_end: 1e-5,
            total_steps: None,
            batch_lanes: 32,
            window: 200,
            epochs: 1,
            eval_interval: 1_000_000,
            patience: 0,
            seed: 0,
            init_scale: 0.7,
            precision: Precision::Training,
            split: SplitSpec::default(),
        }
    }
}

/// Config keys with a one-line description each, for `--help`.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("arch", "vanilla-rnn | mrnn | lstm | stacked-lstm | mlstm"),
    ("hidden", "hidden units per layer"),
    ("layers", "layer count (stacked-lstm only; default 2)"),
    ("embed", "embedding width; 0 feeds one-hot bytes"),
    ("lstm_variant", "standard | gate-inside-tanh"),
    ("weight_norm", "weight-normalize recurrent matrices (bool)"),
    ("dropout_hidden", "variational dropout rate on hidden state"),
    ("dropout_embed", "variational dropout rate on embeddings"),
    ("dropout_output_path", "also mask the top hidden state fed to the output layer (bool)"),
    ("optimizer", "adam | rmsprop-normalized"),
    ("lr_start", "Adam learning rate at step 0"),
    ("lr_min", "Adam learning rate at the last step (linear decay)"),
    ("ell_start", "normalized RMSprop update length at step 0"),
    ("ell_end", "normalized RMSprop update length at the last step (exponential decay)"),
    ("total_steps", "schedule length in updates (default: epochs x windows per epoch)"),
    ("batch_lanes", "parallel contiguous lanes per window"),
    ("window", "truncated BPTT length"),
    ("epochs", "passes over the training split"),
    ("eval_interval", "training targets between validation passes"),
    ("patience", "non-improving validations before stopping; 0 disables"),
    ("seed", "seed for initialization and dropout masks"),
    ("init_scale", "scale of the orthogonal recurrent initialization"),
    ("precision", "training (f32) | verification (f64)"),
    ("split", "train/valid/test fractions, e.g. [0.9, 0.05, 0.05]"),
];

/// Shipped configurations, by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("hutter-unreg", include_str!("../../../../presets/hutter-unreg.json")),
    ("hutter-wn-vd", include_str!("../../../../presets/hutter-wn-vd.json")),
    ("hutter-large", include_str!("../../../../presets/hutter-large.json")),
    ("text8-small", include_str!("../../../../presets/text8-small.json")),
    ("wikitext2-byte", include_str!("../../../../presets/wikitext2-byte.json")),
];

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?;
        Self::from_json(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn arch_spec(&self) -> Arch {
        let layers = self
            .layers
            .unwrap_or(if self.arch == ArchKind::StackedLstm { 2 } else { 1 });
        Arch::new(self.arch, self.hidden)
            .with_layers(layers)
            .with_embed(self.embed)
            .with_variant(self.lstm_variant)
            .with_weight_norm(self.weight_norm)
    }

    pub fn dropout(&self) -> DropoutConfig {
        DropoutConfig {
            hidden: self.dropout_hidden,
            embed: self.dropout_embed,
            output_path: self.dropout_output_path,
        }
    }

    /// Schedule for `total` updates (overridden by `total_steps` when set).
    pub fn schedule(&self, total: u64) -> Result<Schedule> {
        let total = self.total_steps.unwrap_or(total);
        match self.optimizer {
            OptimizerKind::Adam => Schedule::linear(self.lr_start, self.lr_min, total),
            OptimizerKind::RmspropNormalized => Schedule::exponential(self.ell_start, self.ell_end, total),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.arch == ArchKind::TensorRnn {
            return Err(Error::Config(
                "the tensor RNN is an equivalence oracle and cannot be trained".into(),
            ));
        }
        let arch = self.arch_spec();
        if arch.layers > 1 && arch.kind != ArchKind::StackedLstm {
            return Err(Error::Config(format!("{} takes exactly one layer", arch.kind.name())));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden must be positive".into()));
        }
        if self.batch_lanes == 0 || self.window == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_lanes, window and epochs must be positive".into()));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("eval_interval must be positive".into()));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config(format!("init_scale must be positive, got {}", self.init_scale)));
        }
        if self.embed == 0 && self.dropout_embed > 0.0 {
            return Err(Error::Config("dropout_embed needs an embedding (embed > 0)".into()));
        }
        self.dropout().validate()?;
        self.split.validate()?;
        self.schedule(1)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json(r#"{"arch": "mlstm", "hiden": 10}"#).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("hiden")), "{err}");
    }

    #[test]
    fn partial_config_uses_defaults() {
        let c = RunConfig::from_json(r#"{"arch": "stacked-lstm", "hidden": 10}"#).unwrap();
        assert_eq!(c.arch_spec().layers, 2);
        assert_eq!(c.window, 200);
    }

    #[test]
    fn json_roundtrip() {
        let c = RunConfig {
            total_steps: Some(77),
            ..RunConfig::preset("hutter-large").unwrap()
        };
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn presets_parse_and_validate() {
        for (name, _) in PRESETS {
            RunConfig::preset(name).unwrap();
        }
    }

    #[test]
    fn every_field_is_documented() {
        let v = serde_json::to_value(RunConfig {
            layers: Some(1),
            total_steps: Some(1),
            ..Default::default()
        })
        .unwrap();
        for key in v.as_object().unwrap().keys() {
            assert!(CONFIG_KEYS.iter().any(|(k, _)| k == key), "{key}");
        }
        assert_eq!(v.as_object().unwrap().len(), CONFIG_KEYS.len());
    }

    #[test]
    fn tensor_rnn_is_not_trainable() {
        assert!(RunConfig::from_json(r#"{"arch": "tensor-rnn", "hidden": 4}"#).is_err());
    }
}
