use serde::{Deserialize, Serialize};

use super::schedule::Schedule;
use super::{check_shapes, StepReport};
use crate::cells::ModelParams;
use crate::error::Result;
use crate::math::Real;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// Adam with a linearly decaying learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub hyper: AdamHyper,
    pub schedule: Schedule,
    /// Updates applied so far.
    pub step: u64,
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParams<T>, schedule: Schedule) -> Self {
        AdamState {
            hyper: AdamHyper::default(),
            schedule,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.schedule.value(self.step)
    }
}

/// One bias-corrected Adam update at the scheduled learning rate.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut AdamState<T>,
) -> Result<StepReport> {
    check_shapes(params, grads)?;
    let lr = state.lr();
    let AdamHyper { beta1, beta2, eps } = state.hyper;
    let t = (state.step + 1) as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (T::lit(beta1), T::lit(beta2));
    let (ob1, ob2) = (T::lit(1.0 - beta1), T::lit(1.0 - beta2));
    let (ic1, ic2) = (T::lit(1.0 / c1), T::lit(1.0 / c2));
    let (lr_t, eps_t) = (T::lit(lr), T::lit(eps));
    let mut sq = 0.0f64;
    for (((p, g), m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
    {
        for (((pi, &gi), mi), vi) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(g.value.data())
            .zip(m.value.data_mut())
            .zip(v.value.data_mut())
        {
            *mi = b1 * *mi + ob1 * gi;
            *vi = b2 * *vi + ob2 * gi * gi;
            let mhat = *mi * ic1;
            let vhat = *vi * ic2;
            let u = lr_t * mhat / (vhat.sqrt() + eps_t);
            *pi -= u;
            sq += u.as_f64() * u.as_f64();
        }
    }
    state.step += 1;
    Ok(StepReport {
        applied: true,
        rate: lr,
        update_norm: sq.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{Arch, ArchKind, ModelParams};

    fn scalar_params(v: f64) -> ModelParams<f64> {
        let arch = Arch::new(ArchKind::VanillaRnn, 1);
        let mut p = ModelParams::zeros(&arch, 2).unwrap();
        for t in p.tensors_mut() {
            t.value.fill(v);
        }
        p
    }

    #[test]
    fn scalar_trace_matches_reference() {
        let mut p = scalar_params(0.5);
        let g = scalar_params(1.0);
        let sched = Schedule::linear(0.001, 0.0001, 10).unwrap();
        let mut st = AdamState::new(&p, sched);
        // Straight-line reference for one coordinate.
        let (mut theta, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for t in 0..10u64 {
            adam_step(&mut p, &g, &mut st).unwrap();
            let lr = 0.001 + (0.0001 - 0.001) * t as f64 / 10.0;
            m = 0.9 * m + 0.1;
            v = 0.999 * v + 0.001;
            let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
            theta -= lr * mh / (vh.sqrt() + 1e-8);
            assert!((p.tensors()[0].value.data()[0] - theta).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_gradient_moves_by_lr_against_its_sign() {
        let mut p = scalar_params(0.0);
        let mut g = scalar_params(0.0);
        g.tensors_mut()[0].value.fill(-2.5);
        g.tensors_mut()[1].value.fill(0.7);
        let mut st = AdamState::new(&p, Schedule::linear(0.001, 0.001, 100).unwrap());
        for _ in 0..200 {
            let before = p.clone();
            adam_step(&mut p, &g, &mut st).unwrap();
            let d0 = p.tensors()[0].value.data()[0] - before.tensors()[0].value.data()[0];
            let d1 = p.tensors()[1].value.data()[0] - before.tensors()[1].value.data()[0];
            assert!((d0 - 0.001).abs() < 1e-8);
            assert!((d1 + 0.001).abs() < 1e-8);
        }
    }

    #[test]
    fn learning_rate_endpoints() {
        let p = scalar_params(0.0);
        let mut st = AdamState::new(&p, Schedule::linear(0.001, 0.00005, 40).unwrap());
        assert_eq!(st.lr(), 0.001);
        st.step = 40;
        assert_eq!(st.lr(), 0.00005);
    }
}
