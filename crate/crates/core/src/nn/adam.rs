use serde::{Deserialize, Serialize};

use super::{ParamStore, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update over every parameter, then zero the
/// gradients.
///
/// Fails without touching anything if some gradient was never populated.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, cfg: &AdamConfig) -> Result<()> {
    if let Some(p) = store.iter().find(|p| !p.grad_ready) {
        return Err(Error::MissingGradient(p.name.clone()));
    }
    let t = store.bump_step() as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - cfg.beta1), T::from_f64(1.0 - cfg.beta2));
    let step = T::from_f64(cfg.lr / bc1);
    let inv_bc2 = T::from_f64(1.0 / bc2);
    let eps = T::from_f64(cfg.eps);
    for p in store.iter_mut() {
        let m = p.m.data_mut();
        let v = p.v.data_mut();
        let g = p.grad.data();
        let w = p.value.data_mut();
        for i in 0..w.len() {
            m[i] = b1 * m[i] + one_b1 * g[i];
            v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
            w[i] -= step * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
        }
        p.grad.fill(T::zero());
        p.grad_ready = false;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn scalar_store(w: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(w)).unwrap();
        s
    }

    #[test]
    fn uninitialized_gradients_are_rejected() {
        let mut s = scalar_store(1.0);
        assert!(matches!(adam_step(&mut s, &AdamConfig::default()), Err(Error::MissingGradient(_))));
        assert_eq!(s.step_count(), 0);
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut s = scalar_store(0.75);
        for _ in 0..50 {
            s.zero_grads();
            adam_step(&mut s, &AdamConfig::default()).unwrap();
        }
        assert_eq!(s.get("w").unwrap().item(), 0.75);
        assert_eq!(s.step_count(), 50);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(0.0);
        s.set_grad("w", Tensor::scalar(1.0)).unwrap();
        let cfg = AdamConfig { lr: 0.1, ..Default::default() };
        adam_step(&mut s, &cfg).unwrap();
        assert!((s.get("w").unwrap().item() + 0.1).abs() < 1e-7);
        // gradients are cleared afterwards
        assert_eq!(s.grad("w").unwrap().item(), 0.0);
    }

    #[test]
    fn minimizes_square() {
        // Scalar reference run: w ends at 0.22445 after 100 steps.
        let mut s = scalar_store(1.0);
        let cfg = AdamConfig { lr: 1e-2, ..Default::default() };
        for _ in 0..100 {
            let w = s.get("w").unwrap().item();
            s.set_grad("w", Tensor::scalar(2.0 * w)).unwrap();
            adam_step(&mut s, &cfg).unwrap();
        }
        let w = s.get("w").unwrap().item();
        assert!(w.abs() < 0.5);
        assert!((w - 0.2244460452318788).abs() < 1e-9, "{w}");
    }
}
