use alloc::format;
use alloc::vec::Vec;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::math;

/// AdamW with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamW {
    pub fn new(lr: f64, betas: (f64, f64), eps: f64, weight_decay: f64) -> Result<Self> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be non-negative, got {lr}")));
        }
        if !in_unit(betas.0) || !in_unit(betas.1) {
            return Err(Error::invalid(format!("betas must lie in (0, 1), got {betas:?}")));
        }
        if !(eps > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        Ok(Self {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    /// Defaults used throughout training: betas (0.9, 0.999), eps 1e-8.
    pub fn with_lr(lr: f64, weight_decay: f64) -> Result<Self> {
        Self::new(lr, (0.9, 0.999), 1e-8, weight_decay)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients stored in `params`. A non-finite
    /// gradient aborts the step before anything is modified.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if let Some((_, p)) = params.iter().find(|(_, p)| !p.grad.is_finite()) {
            return Err(Error::NonFinite {
                op: format!("gradient of {}", p.name),
            });
        }
        if self.first.len() != params.len() {
            self.first = params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - math::powi(self.beta1, t);
        let bc2 = 1.0 - math::powi(self.beta2, t);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (i, p) in params.params_mut().iter_mut().enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (j, (w, g)) in p.value.data_mut().iter_mut().zip(p.grad.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w = *w * decay - self.lr * mhat / (math::sqrt(vhat) + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn store(value: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::scalar(value)).unwrap();
        s.grad_mut(id).data_mut()[0] = grad;
        s
    }

    #[test]
    fn single_step_reference_arithmetic() {
        // m̂ = 1, v̂ = 1 after bias correction: p = 1 - 0.1 * 1 / (1 + 1e-8)
        let mut s = store(1.0, 1.0);
        let mut opt = AdamW::new(0.1, (0.9, 0.999), 1e-8, 0.0).unwrap();
        opt.step(&mut s).unwrap();
        let p = s.value(s.id("p").unwrap()).item();
        assert!((p - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((p - 0.9).abs() < 1e-8);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = store(2.5, 0.0);
        let mut opt = AdamW::with_lr(0.1, 0.0).unwrap();
        opt.step(&mut s).unwrap();
        assert_eq!(s.value(s.id("p").unwrap()).item(), 2.5);
    }

    #[test]
    fn decoupled_decay_shrinks_by_lr_times_wd() {
        let mut s = store(2.0, 0.0);
        let mut opt = AdamW::with_lr(0.1, 0.5).unwrap();
        opt.step(&mut s).unwrap();
        assert!((s.value(s.id("p").unwrap()).item() - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_hyperparameters_and_gradients() {
        assert!(AdamW::new(0.1, (0.9, 0.999), 0.0, 0.0).is_err());
        assert!(AdamW::new(0.1, (1.0, 0.999), 1e-8, 0.0).is_err());
        let mut s = store(1.0, 0.0);
        s.grad_mut(s.id("p").unwrap()).data_mut()[0] = f64::NAN;
        let mut opt = AdamW::with_lr(0.1, 0.0).unwrap();
        assert!(opt.step(&mut s).is_err());
        assert_eq!(s.value(s.id("p").unwrap()).item(), 1.0);
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::vector(vec![0.3, -1.2, 4.0])).unwrap();
        s.grad_mut(id).data_mut().copy_from_slice(&[1.0, -2.0, 0.5]);
        let mut opt = AdamW::with_lr(0.0, 0.01).unwrap();
        for _ in 0..3 {
            opt.step(&mut s).unwrap();
        }
        assert_eq!(s.value(id).data(), &[0.3, -1.2, 4.0]);
    }
}
