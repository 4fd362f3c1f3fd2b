//! Adam with bias correction, applied slice by slice.

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-15 }
    }
}

/// One Adam update of `params` in place. `step` is the 1-based count of
/// updates this parameter group has received, including this one.
pub fn adam_update<T: Real>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    step: u32,
    lr: f64,
    cfg: &AdamConfig,
) {
    debug_assert!(step >= 1);
    debug_assert!(params.len() == grads.len() && m.len() == grads.len() && v.len() == grads.len());
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let one = T::one();
    let c1 = 1.0 - num_traits::Float::powi(cfg.beta1, step as i32);
    let c2 = 1.0 - num_traits::Float::powi(cfg.beta2, step as i32);
    let step_size = T::lit(lr / c1);
    let inv_c2 = T::lit(1.0 / c2);
    let eps = T::lit(cfg.eps);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        params[i] -= step_size * m[i] / ((v[i] * inv_c2).sqrt() + eps);
    }
}

/// `init * (final/init)^t` for `t = min(iter/max_iter, 1)`.
pub fn exp_decay(init: f64, final_: f64, iter: u32, max_iter: u32) -> f64 {
    if max_iter == 0 {
        return final_;
    }
    let t = (iter as f64 / max_iter as f64).clamp(0.0, 1.0);
    num_traits::Float::exp(num_traits::Float::ln(init) * (1.0 - t) + num_traits::Float::ln(final_) * t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = [1.0f64, -2.0];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        adam_update(&mut p, &[3.0, -0.5], &mut m, &mut v, 1, 0.1, &AdamConfig::default());
        assert!((p[0] - 0.9).abs() < 1e-9);
        assert!((p[1] + 1.9).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut p = [0.5f64];
        let (mut m, mut v) = ([0.2], [0.04]);
        adam_update(&mut p, &[0.0], &mut m, &mut v, 5, 0.0, &AdamConfig::default());
        assert_eq!(p[0], 0.5);
        assert!((m[0] - 0.18).abs() < 1e-12);
        assert!((v[0] - 0.03996).abs() < 1e-12);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let cfg = AdamConfig::default();
        let mut p = [0.0f64];
        let (mut m, mut v) = ([0.0], [0.0]);
        for t in 1..=200 {
            let before = p[0];
            adam_update(&mut p, &[-4.0], &mut m, &mut v, t, 0.01, &cfg);
            assert!(((p[0] - before) - 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn decay_endpoints() {
        assert!((exp_decay(1.6e-4, 1.6e-6, 0, 100) - 1.6e-4).abs() < 1e-15);
        assert!((exp_decay(1.6e-4, 1.6e-6, 100, 100) - 1.6e-6).abs() < 1e-15);
        assert!((exp_decay(1.6e-4, 1.6e-6, 50, 100) - 1.6e-5).abs() < 1e-12);
    }
}
