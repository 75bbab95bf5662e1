use serde::{Deserialize, Serialize};

use super::schedule::Schedule;
use super::{check_shapes, StepReport};
use crate::cells::ModelParams;
use crate::error::Result;
use crate::math::Real;

pub const RMS_DECAY: f64 = 0.9;
pub const RMS_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsHyper {
    pub decay: f64,
    pub eps: f64,
}

impl Default for RmsHyper {
    fn default() -> Self {
        RmsHyper {
            decay: RMS_DECAY,
            eps: RMS_EPS,
        }
    }
}

/// RMSprop whose whole update vector is rescaled to a scheduled length.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsNormState<T> {
    pub hyper: RmsHyper,
    pub schedule: Schedule,
    pub step: u64,
    /// Running mean of squared gradients.
    pub acc: ModelParams<T>,
}

impl<T: Real> RmsNormState<T> {
    pub fn new(params: &ModelParams<T>, schedule: Schedule) -> Self {
        RmsNormState {
            hyper: RmsHyper::default(),
            schedule,
            step: 0,
            acc: params.zeros_like(),
        }
    }

    /// Update length at the current step.
    pub fn ell(&self) -> f64 {
        self.schedule.value(self.step)
    }
}

/// Normalized RMSprop: `v* = g / sqrt(acc + eps)`, then the update is
/// `v* * ell_t / |v*|` with the norm taken over every parameter at once.
///
/// When `v*` is identically zero the parameters are left alone and a
/// warning is logged; the accumulators and step counter still advance.
pub fn rmsprop_normalized_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut RmsNormState<T>,
) -> Result<StepReport> {
    check_shapes(params, grads)?;
    let ell = state.ell();
    let RmsHyper { decay, eps } = state.hyper;
    let (rho, orho, eps_t) = (T::lit(decay), T::lit(1.0 - decay), T::lit(eps));
    let mut dirs: Vec<Vec<T>> = Vec::with_capacity(params.tensors().len());
    let mut sq = 0.0f64;
    for (g, a) in grads.tensors().iter().zip(state.acc.tensors_mut()) {
        let d: Vec<T> = g
            .value
            .data()
            .iter()
            .zip(a.value.data_mut())
            .map(|(&gi, ai)| {
                *ai = rho * *ai + orho * gi * gi;
                gi / (*ai + eps_t).sqrt()
            })
            .collect();
        sq += d.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
        dirs.push(d);
    }
    state.step += 1;
    let norm = sq.sqrt();
    if norm == 0.0 || !norm.is_finite() {
        log::warn!(
            "normalized RMSprop step {}: raw update norm is {norm}; update skipped",
            state.step - 1
        );
        return Ok(StepReport {
            applied: false,
            rate: ell,
            update_norm: 0.0,
        });
    }
    let scale = T::lit(ell / norm);
    let mut applied_sq = 0.0f64;
    for (p, d) in params.tensors_mut().iter_mut().zip(dirs) {
        for (pi, di) in p.value.data_mut().iter_mut().zip(d) {
            let u = scale * di;
            *pi -= u;
            applied_sq += u.as_f64() * u.as_f64();
        }
    }
    Ok(StepReport {
        applied: true,
        rate: ell,
        update_norm: applied_sq.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{Arch, ArchKind};
    use crate::math::Rng;

    fn two_scalars() -> ModelParams<f64> {
        // vanilla RNN with h=1, N=2 has 7 scalars; only the first two are used.
        ModelParams::zeros(&Arch::new(ArchKind::VanillaRnn, 1), 2).unwrap()
    }

    #[test]
    fn three_four_five() {
        let mut p = two_scalars();
        let mut st = RmsNormState::new(&p, Schedule::exponential(1.0, 1.0, 10).unwrap());
        // Frozen unit accumulators make v* equal the gradient.
        st.hyper = RmsHyper { decay: 1.0, eps: 0.0 };
        for t in st.acc.tensors_mut() {
            t.value.fill(1.0);
        }
        let mut g = two_scalars();
        g.tensors_mut()[0].value.data_mut().copy_from_slice(&[3.0, 4.0]);
        let r = rmsprop_normalized_step(&mut p, &g, &mut st).unwrap();
        let d = p.tensors()[0].value.data();
        assert!((d[0] + 0.6).abs() < 1e-15);
        assert!((d[1] + 0.8).abs() < 1e-15);
        assert!((r.update_norm - 1.0).abs() < 1e-15);
    }

    #[test]
    fn update_norm_is_ell_at_every_step() {
        let arch = Arch::new(ArchKind::Mlstm, 4);
        let mut rng = Rng::new(3);
        let mut p: ModelParams<f64> = crate::cells::init_params(&arch, 5, 0.7, &mut rng).unwrap();
        let sched = Schedule::exponential(1e-3, 1e-5, 50).unwrap();
        let mut st = RmsNormState::new(&p, sched);
        for t in 0..60u64 {
            let mut g = p.zeros_like();
            for tensor in g.tensors_mut() {
                for v in tensor.value.data_mut() {
                    *v = rng.normal() * 10f64.powi((t % 5) as i32 - 2);
                }
            }
            let before = p.clone();
            let r = rmsprop_normalized_step(&mut p, &g, &mut st).unwrap();
            let moved = before.max_abs_diff(&p);
            assert!(moved > 0.0);
            let mut sq = 0.0;
            for (a, b) in before.tensors().iter().zip(p.tensors()) {
                for (x, y) in a.value.data().iter().zip(b.value.data()) {
                    sq += (x - y) * (x - y);
                }
            }
            assert!((sq.sqrt() - sched.value(t)).abs() < 1e-12);
            assert_eq!(r.rate, sched.value(t));
        }
    }

    #[test]
    fn zero_gradient_skips() {
        let mut p = two_scalars();
        let g = two_scalars();
        let mut st = RmsNormState::new(&p, Schedule::exponential(1e-3, 1e-5, 10).unwrap());
        let r = rmsprop_normalized_step(&mut p, &g, &mut st).unwrap();
        assert!(!r.applied);
        assert_eq!(p, two_scalars());
        assert_eq!(st.step, 1);
    }
}
