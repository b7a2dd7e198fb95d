use serde::{Deserialize, Serialize};

/// Adam moment coefficients and step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update in place. `step` counts from 1.
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    cfg: &AdamConfig,
) {
    assert!(step >= 1, "adam steps count from 1");
    assert!(param.len() == grad.len() && m.len() == grad.len() && v.len() == grad.len());
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_leaves_param() {
        let mut p = vec![0.3, -1.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        adam_update(&mut p, &[0.0, 0.0], &mut m, &mut v, 1, &AdamConfig::default());
        assert_eq!(p, vec![0.3, -1.0]);
    }

    #[test]
    fn first_step_magnitude_is_about_lr() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.0];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        adam_update(&mut p, &[1.0], &mut m, &mut v, 1, &cfg);
        let delta = p[0].abs();
        // closed form: lr * 1 / (1 + eps)
        assert!((delta - cfg.learning_rate / (1.0 + cfg.eps)).abs() < 1e-18);
        assert!(delta > 0.99 * cfg.learning_rate && delta <= cfg.learning_rate);
    }

    proptest! {
        #[test]
        fn first_step_descends(g in prop_oneof![-1e3f64..-1e-6, 1e-6f64..1e3]) {
            let mut p = vec![0.0];
            let (mut m, mut v) = (vec![0.0], vec![0.0]);
            adam_update(&mut p, &[g], &mut m, &mut v, 1, &AdamConfig::default());
            prop_assert!(p[0] * g < 0.0);
        }
    }
}
