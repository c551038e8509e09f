//! Adam with bias correction over the model's tensor set.

use super::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: ModelParams,
    v: ModelParams,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update, in place. Deterministic; tensors are walked in the
/// model's fixed order.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    cfg: &AdamConfig,
) {
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let mut p_tensors = params.named_tensors_mut();
    let g_tensors = grads.named_tensors();
    let mut m_tensors = state.m.named_tensors_mut();
    let mut v_tensors = state.v.named_tensors_mut();
    debug_assert_eq!(p_tensors.len(), g_tensors.len());
    for i in 0..p_tensors.len() {
        debug_assert_eq!(p_tensors[i].0, g_tensors[i].0);
        let p = p_tensors[i].1.as_slice_mut().expect("standard layout");
        let g = g_tensors[i].1.as_slice().expect("standard layout");
        let m = m_tensors[i].1.as_slice_mut().expect("standard layout");
        let v = v_tensors[i].1.as_slice_mut().expect("standard layout");
        for k in 0..p.len() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{SizeProfile, Variant};

    fn model(seed: u64) -> ModelParams {
        ModelParams::init(Variant::M1, SizeProfile::Desk, 8, seed)
    }

    fn constant_grads(p: &ModelParams, value: f64) -> ModelParams {
        let mut g = p.zeros_like();
        for (_, mut t) in g.named_tensors_mut() {
            t.fill(value);
        }
        g
    }

    #[test]
    fn first_step_moves_each_coordinate_by_lr_scaled_sign() {
        // closed form at t=1: delta = lr * g / (|g| + eps)
        let mut p = model(1);
        let before = p.clone();
        let cfg = AdamConfig { lr: 1e-3, ..AdamConfig::default() };
        let mut state = AdamState::new(&p);
        let g = constant_grads(&p, 0.25);
        adam_step(&mut p, &g, &mut state, &cfg);
        let expected = cfg.lr * 0.25 / (0.25 + cfg.eps);
        for ((_, a), (_, b)) in before.named_tensors().iter().zip(p.named_tensors().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                let delta = x - y;
                assert!((delta - expected).abs() < 1e-15);
                assert!(delta.abs() <= cfg.lr * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_fixed_but_advances_state() {
        let mut p = model(2);
        let before = p.clone();
        let mut state = AdamState::new(&p);
        let g = constant_grads(&p, 0.0);
        adam_step(&mut p, &g, &mut state, &AdamConfig::default());
        assert_eq!(p, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn updates_are_deterministic() {
        let run = || {
            let mut p = model(3);
            let mut state = AdamState::new(&p);
            let cfg = AdamConfig::default();
            for i in 0..5 {
                let g = constant_grads(&p, 0.1 * (i as f64 + 1.0));
                adam_step(&mut p, &g, &mut state, &cfg);
            }
            p
        };
        assert_eq!(run(), run());
    }
}
