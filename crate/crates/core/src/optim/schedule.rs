use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step-indexed value schedule, clamped to its final value after `total` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Schedule {
    /// `start + (end - start) * t / total`.
    Linear { start: f64, end: f64, total: u64 },
    /// `start * (end / start)^(t / total)`.
    Exponential { start: f64, end: f64, total: u64 },
}

impl Schedule {
    pub fn linear(start: f64, end: f64, total: u64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) || start < end || end < 0.0 {
            return Err(Error::Config(format!(
                "linear schedule needs start >= end >= 0, got {start} -> {end}"
            )));
        }
        Ok(Schedule::Linear { start, end, total })
    }

    pub fn exponential(start: f64, end: f64, total: u64) -> Result<Self> {
        if !(start > 0.0 && end > 0.0 && start.is_finite() && end.is_finite()) {
            return Err(Error::Config(format!(
                "exponential schedule needs positive endpoints, got {start} -> {end}"
            )));
        }
        Ok(Schedule::Exponential { start, end, total })
    }

    pub fn total(&self) -> u64 {
        match *self {
            Schedule::Linear { total, .. } | Schedule::Exponential { total, .. } => total,
        }
    }

    pub fn with_total(self, total: u64) -> Self {
        match self {
            Schedule::Linear { start, end, .. } => Schedule::Linear { start, end, total },
            Schedule::Exponential { start, end, .. } => Schedule::Exponential { start, end, total },
        }
    }

    /// Value at step `t`; exact at both endpoints.
    pub fn value(&self, t: u64) -> f64 {
        match *self {
            Schedule::Linear { start, end, total } => {
                if t >= total {
                    end
                } else if t == 0 {
                    start
                } else {
                    start + (end - start) * (t as f64 / total as f64)
                }
            }
            Schedule::Exponential { start, end, total } => {
                if t >= total {
                    end
                } else if t == 0 {
                    start
                } else {
                    start * (end / start).powf(t as f64 / total as f64)
                }
            }
        }
    }
}

/// Free-function form of [`Schedule::value`].
pub fn schedule_value(schedule: &Schedule, t: u64) -> f64 {
    schedule.value(t)
}
