//! Parameter update rules and their schedules.

mod adam;
mod rmsprop;
mod schedule;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamHyper, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use rmsprop::{rmsprop_normalized_step, RmsHyper, RmsNormState, RMS_DECAY, RMS_EPS};
pub use schedule::{schedule_value, Schedule};

use crate::cells::{ModelParams, NamedTensor};
use crate::error::{Error, Result};
use crate::math::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    RmspropNormalized,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::RmspropNormalized => "rmsprop-normalized",
        }
    }
}

/// Outcome of one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// False when the update was skipped.
    pub applied: bool,
    /// Learning rate (Adam) or update length (normalized RMSprop) used.
    pub rate: f64,
    /// Euclidean norm of the applied update.
    pub update_norm: f64,
}

pub(crate) fn check_shapes<T: Real>(params: &ModelParams<T>, grads: &ModelParams<T>) -> Result<()> {
    let same = params.tensors().len() == grads.tensors().len()
        && params
            .tensors()
            .iter()
            .zip(grads.tensors())
            .all(|(p, g)| p.name == g.name && p.value.shape() == g.value.shape());
    if same {
        Ok(())
    } else {
        Err(Error::Dimension("gradients are not shaped like the parameters".into()))
    }
}

/// Scalar part of an optimizer's state; tensors are stored separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerScalars {
    pub kind: OptimizerKind,
    pub step: u64,
    pub schedule: Schedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam: Option<AdamHyper>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rms: Option<RmsHyper>,
}

/// Either update rule behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer<T> {
    Adam(AdamState<T>),
    RmsNorm(RmsNormState<T>),
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, params: &ModelParams<T>, schedule: Schedule) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(params, schedule)),
            OptimizerKind::RmspropNormalized => Optimizer::RmsNorm(RmsNormState::new(params, schedule)),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            Optimizer::Adam(_) => OptimizerKind::Adam,
            Optimizer::RmsNorm(_) => OptimizerKind::RmspropNormalized,
        }
    }

    pub fn step_count(&self) -> u64 {
        match self {
            Optimizer::Adam(s) => s.step,
            Optimizer::RmsNorm(s) => s.step,
        }
    }

    /// Schedule value for the next update.
    pub fn rate(&self) -> f64 {
        match self {
            Optimizer::Adam(s) => s.lr(),
            Optimizer::RmsNorm(s) => s.ell(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>) -> Result<StepReport> {
        match self {
            Optimizer::Adam(s) => adam_step(params, grads, s),
            Optimizer::RmsNorm(s) => rmsprop_normalized_step(params, grads, s),
        }
    }

    pub fn scalars(&self) -> OptimizerScalars {
        match self {
            Optimizer::Adam(s) => OptimizerScalars {
                kind: OptimizerKind::Adam,
                step: s.step,
                schedule: s.schedule,
                adam: Some(s.hyper),
                rms: None,
            },
            Optimizer::RmsNorm(s) => OptimizerScalars {
                kind: OptimizerKind::RmspropNormalized,
                step: s.step,
                schedule: s.schedule,
                adam: None,
                rms: Some(s.hyper),
            },
        }
    }

    /// State tensors, named `<slot>/<parameter>`.
    pub fn tensors(&self) -> Vec<NamedTensor<T>> {
        let slots: Vec<(&str, &ModelParams<T>)> = match self {
            Optimizer::Adam(s) => vec![("adam.m", &s.m), ("adam.v", &s.v)],
            Optimizer::RmsNorm(s) => vec![("rms.acc", &s.acc)],
        };
        slots
            .into_iter()
            .flat_map(|(slot, p)| {
                p.tensors().iter().map(move |t| NamedTensor {
                    name: format!("{slot}/{}", t.name),
                    value: t.value.clone(),
                })
            })
            .collect()
    }

    /// Rebuild from [`Optimizer::scalars`] and [`Optimizer::tensors`].
    pub fn restore(
        scalars: &OptimizerScalars,
        params: &ModelParams<T>,
        tensors: Vec<NamedTensor<T>>,
    ) -> Result<Self> {
        let take = |slot: &str, tensors: &[NamedTensor<T>]| -> Result<ModelParams<T>> {
            let prefix = format!("{slot}/");
            let picked: Vec<NamedTensor<T>> = tensors
                .iter()
                .filter_map(|t| {
                    t.name.strip_prefix(&prefix).map(|n| NamedTensor {
                        name: n.to_string(),
                        value: t.value.clone(),
                    })
                })
                .collect();
            ModelParams::from_tensors(params.arch(), params.vocab(), picked)
        };
        Ok(match scalars.kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState {
                hyper: scalars.adam.unwrap_or_default(),
                schedule: scalars.schedule,
                step: scalars.step,
                m: take("adam.m", &tensors)?,
                v: take("adam.v", &tensors)?,
            }),
            OptimizerKind::RmspropNormalized => Optimizer::RmsNorm(RmsNormState {
                hyper: scalars.rms.unwrap_or_default(),
                schedule: scalars.schedule,
                step: scalars.step,
                acc: take("rms.acc", &tensors)?,
            }),
        })
    }
}
