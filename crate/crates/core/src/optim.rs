//! Nadam with a momentum schedule, and per-tensor gradient clipping.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClipConfig {
    /// Maximum L2 norm of each gradient tensor.
    pub tau: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig { tau: 1.0 }
    }
}

/// Rescales every gradient tensor whose L2 norm exceeds `tau` down to `tau`.
pub fn clip_by_norm(mut grads: Gradients, c: &ClipConfig) -> Gradients {
    for (_, g) in grads.iter_mut() {
        let n = g.norm();
        if n > c.tau {
            let s = c.tau / n;
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    grads
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NadamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Momentum schedule decay ψ.
    pub schedule_decay: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        NadamConfig {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule_decay: 0.004,
        }
    }
}

impl NadamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.schedule_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }

    /// μ_t = β1·(1 − ½·0.96^(t·ψ)).
    pub fn momentum(&self, t: u64) -> f64 {
        self.beta1 * (1.0 - 0.5 * 0.96f64.powf(t as f64 * self.schedule_decay))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NadamState {
    pub step: u64,
    /// Running product of the momentum schedule.
    pub m_schedule: f64,
    pub m: IndexMap<String, Tensor>,
    pub v: IndexMap<String, Tensor>,
}

impl Default for NadamState {
    fn default() -> Self {
        NadamState {
            step: 0,
            m_schedule: 1.0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }
}

impl NadamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One Nadam update of every parameter that has a gradient. Nothing is
/// modified if any gradient is non-finite.
pub fn nadam_step(params: &mut ParamStore, grads: &Gradients, state: &mut NadamState, c: &NadamConfig) -> Result<()> {
    for (name, g) in grads.iter() {
        if g.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
        match params.get(name) {
            Some(p) if p.shape() == g.shape() => {}
            Some(p) => {
                return Err(Error::Config(format!(
                    "gradient for `{name}` has shape {:?}, parameter has {:?}",
                    g.shape(),
                    p.shape()
                )))
            }
            None => return Err(Error::Config(format!("gradient for unknown parameter `{name}`"))),
        }
    }

    let t = state.step + 1;
    let mu_t = c.momentum(t);
    let mu_next = c.momentum(t + 1);
    let sched_new = state.m_schedule * mu_t;
    let sched_next = sched_new * mu_next;
    let v_corr = 1.0 - c.beta2.powf(t as f64);

    for (name, g) in grads.iter() {
        let p = params.get_mut(name).expect("checked above");
        let m = state
            .m
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(g.shape()))
            .data_mut();
        let v = state
            .v
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(g.shape()))
            .data_mut();
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let g_hat = gi / (1.0 - sched_new);
            *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
            let m_hat = *mi / (1.0 - sched_next);
            *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
            let v_hat = *vi / v_corr;
            let m_bar = (1.0 - mu_t) * g_hat + mu_next * m_hat;
            *pi -= c.lr * m_bar / (v_hat.sqrt() + c.eps);
        }
    }
    state.step = t;
    state.m_schedule = sched_new;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(p: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::vector(vec![p]).unwrap());
        s
    }

    fn grad(g: f64) -> Gradients {
        let mut gr = Gradients::new();
        gr.insert("p", Tensor::vector(vec![g]).unwrap());
        gr
    }

    #[test]
    fn clip_examples() {
        let mut g = Gradients::new();
        g.insert("a", Tensor::vector(vec![3.0, 0.0]).unwrap());
        g.insert("b", Tensor::vector(vec![0.2]).unwrap());
        let c = clip_by_norm(g, &ClipConfig::default());
        assert_eq!(c.get("a").unwrap().data(), &[1.0, 0.0]);
        assert_eq!(c.get("b").unwrap().data(), &[0.2]);
        let mut h = Gradients::new();
        h.insert("x", Tensor::vector(vec![2.0, 0.0]).unwrap());
        assert_eq!(clip_by_norm(h, &ClipConfig::default()).get("x").unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_store(1.5);
        let mut st = NadamState::new();
        nadam_step(&mut p, &grad(0.0), &mut st, &NadamConfig::default()).unwrap();
        assert_eq!(p.get("p").unwrap().data(), &[1.5]);
    }

    #[test]
    fn first_step_matches_hand_value() {
        let mut p = scalar_store(1.0);
        let mut st = NadamState::new();
        nadam_step(&mut p, &grad(1.0), &mut st, &NadamConfig::default()).unwrap();
        // evaluated at 30 digits outside this crate
        let want = 0.997_887_096_464_418_258_89;
        assert!((p.get("p").unwrap().data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn minimizes_square() {
        // the default rate moves at most ~0.002 per step, too slow to cover 5 units in 2000 steps
        let c = NadamConfig {
            lr: 0.01,
            ..Default::default()
        };
        let mut p = scalar_store(5.0);
        let mut st = NadamState::new();
        let mut last = 5.0f64;
        for _ in 0..2000 {
            let x = p.get("p").unwrap().data()[0];
            nadam_step(&mut p, &grad(2.0 * x), &mut st, &c).unwrap();
            let now = p.get("p").unwrap().data()[0].abs();
            assert!(now <= last);
            last = now;
        }
        assert!(last < 0.1);
    }

    #[test]
    fn no_momentum_is_rmsprop_like() {
        let c = NadamConfig {
            beta1: 0.0,
            ..Default::default()
        };
        let mut p = scalar_store(1.0);
        let mut st = NadamState::new();
        nadam_step(&mut p, &grad(0.5), &mut st, &c).unwrap();
        nadam_step(&mut p, &grad(-0.25), &mut st, &c).unwrap();
        let v1 = 0.001 * 0.25;
        let v2 = 0.999 * v1 + 0.001 * 0.0625;
        let mut want = 1.0 - 0.002 * 0.5 / ((v1 / 0.001f64).sqrt() + 1e-8);
        want -= 0.002 * -0.25 / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((p.get("p").unwrap().data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_param() {
        let mut p = scalar_store(1.0);
        let mut g = Gradients::new();
        g.insert("p", Tensor::from_parts(vec![1], vec![f64::NAN]));
        match nadam_step(&mut p, &g, &mut NadamState::new(), &NadamConfig::default()) {
            Err(Error::NonFiniteGradient(n)) => assert_eq!(n, "p"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p.get("p").unwrap().data(), &[1.0]);
    }
}
