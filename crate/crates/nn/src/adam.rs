use yoas_core::Scalar;

use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiplies the learning rate once per epoch when set.
    pub decay: Option<f64>,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, decay: None }
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        match self.decay {
            Some(d) => self.lr * d.powi(epoch as i32),
            None => self.lr,
        }
    }
}

/// Moment estimates for one parameter set.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u32,
}

impl Adam {
    pub fn new<T: Scalar>(cfg: AdamConfig, ps: &ParamSet<T>) -> Self {
        let m: Vec<Vec<f64>> = ps.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        Self { cfg, v: m.clone(), m, t: 0 }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    /// Applies one update using the accumulated gradients, then clears them.
    pub fn step<T: Scalar>(&mut self, ps: &mut ParamSet<T>, epoch: usize) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.cfg;
        let lr = self.cfg.lr_at_epoch(epoch);
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in ps.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (x, g)) in p.value.data_mut().iter_mut().zip(&p.grad).enumerate() {
                let g = g.f64();
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let upd = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                *x = T::of(x.f64() - upd);
            }
        }
        ps.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn set(vals: &[f64], grads: &[f64]) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        ps.add("p", Tensor::from_f64(&[vals.len()], vals).unwrap());
        ps.grad_mut(0).copy_from_slice(grads);
        ps
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut ps = set(&[1.0, 1.0, 1.0], &[0.3, -20.0, 1e-3]);
        let mut opt = Adam::new(AdamConfig::with_lr(0.01), &ps);
        opt.step(&mut ps, 0);
        let d = ps.value(0).data();
        assert!((d[0] - 0.99).abs() < 1e-6);
        assert!((d[1] - 1.01).abs() < 1e-6);
        assert!((d[2] - 0.99).abs() < 1e-5);
        assert_eq!(ps.grad(0), &[0.0; 3]);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut ps = set(&[0.5, -2.0], &[0.0, 0.0]);
        let mut opt = Adam::new(AdamConfig::with_lr(0.1), &ps);
        for _ in 0..3 {
            opt.step(&mut ps, 0);
        }
        assert_eq!(ps.value(0).data(), &[0.5, -2.0]);
    }

    #[test]
    fn decay_applies_per_epoch() {
        let cfg = AdamConfig { decay: Some(0.95), ..AdamConfig::with_lr(1e-4) };
        assert!((cfg.lr_at_epoch(0) - 1e-4).abs() < 1e-18);
        assert!((cfg.lr_at_epoch(2) - 1e-4 * 0.9025).abs() < 1e-15);
        let mut ps = set(&[0.0], &[1.0]);
        let mut opt = Adam::new(cfg, &ps);
        opt.step(&mut ps, 3);
        assert!((ps.value(0).data()[0] + 1e-4 * 0.95f64.powi(3)).abs() < 1e-9);
    }
}
