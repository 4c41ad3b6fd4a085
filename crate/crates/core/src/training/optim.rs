use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Linear warmup from zero, then continuous exponential decay
/// `peak · rate^((step − warmup) / decay_steps)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: u64,
    pub decay_rate: f64,
    pub decay_steps: u64,
}

impl LrSchedule {
    pub fn lr_at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.peak * step as f64 / self.warmup_steps as f64;
        }
        let k = (step - self.warmup_steps) as f64 / self.decay_steps.max(1) as f64;
        self.peak * self.decay_rate.powf(k)
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// Applies one update; leaves everything untouched if any gradient
    /// entry is non-finite.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        for (g, m) in grads.iter().zip(&self.m) {
            if g.shape() != m.shape() {
                return Err(Error::shape("adam", g.shape(), m.shape()));
            }
        }
        if !grads.iter().all(Tensor::is_finite) {
            return Err(Error::NonFinite("gradient"));
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.tensors_mut()[i].data_mut();
            for k in 0..g.len() {
                let gk = g.data()[k];
                m[k] = b1 * m[k] + (1.0 - b1) * gk;
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p[k] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> LrSchedule {
        LrSchedule {
            peak: 1e-3,
            warmup_steps: 5000,
            decay_rate: 0.9,
            decay_steps: 5000,
        }
    }

    #[test]
    fn schedule_examples() {
        let s = sched();
        assert!((s.lr_at(2500) - 5e-4).abs() < 1e-18);
        assert_eq!(s.lr_at(5000), 1e-3);
        assert!((s.lr_at(10_000) - 9e-4).abs() < 1e-18);
        assert_eq!(s.lr_at(0), 0.0);
        let no_warmup = LrSchedule { warmup_steps: 0, decay_steps: 1000, ..s };
        assert_eq!(no_warmup.lr_at(0), 1e-3);
        assert!((no_warmup.lr_at(2000) - 8.1e-4).abs() < 1e-18);
    }

    #[test]
    fn schedule_is_continuous_at_warmup() {
        let s = sched();
        assert!((s.lr_at(4999) - s.lr_at(5000)).abs() <= 1e-3 / 5000.0 + 1e-18);
        assert!(s.lr_at(5001) < s.lr_at(5000));
    }

    fn one_param(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::column(&[v])).unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -1e-3, 250.0] {
            let mut p = one_param(0.0);
            let mut adam = Adam::new(&p);
            adam.step(&mut p, &[Tensor::column(&[g])], 0.01).unwrap();
            let d = p.get(0).item();
            assert!(d.signum() == -g.signum());
            assert!(d.abs() <= 0.01 && d.abs() >= 0.999 * 0.01, "{d}");
        }
    }

    #[test]
    fn zero_gradient_changes_nothing() {
        let mut p = one_param(1.5);
        let mut adam = Adam::new(&p);
        adam.step(&mut p, &[Tensor::column(&[0.0])], 0.1).unwrap();
        assert_eq!(p.get(0).item(), 1.5);
    }

    #[test]
    fn quadratic_converges() {
        let mut p = one_param(0.0);
        let mut adam = Adam::new(&p);
        for _ in 0..100 {
            let w = p.get(0).item();
            adam.step(&mut p, &[Tensor::column(&[2.0 * (w - 3.0)])], 0.1).unwrap();
        }
        assert!((p.get(0).item() - 3.0).abs() < 0.5);
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut p = one_param(1.0);
        let mut adam = Adam::new(&p);
        let r = adam.step(&mut p, &[Tensor::column(&[f64::NAN])], 0.1);
        assert!(matches!(r, Err(Error::NonFinite(_))));
        assert_eq!(p.get(0).item(), 1.0);
        assert_eq!(adam.t, 0);
    }
}
