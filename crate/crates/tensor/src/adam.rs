//! Adam with bias correction.

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Self::with_betas(store, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let m: Vec<Tensor> = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// Restore optimizer state (e.g. from a checkpoint).
    pub fn restore(&mut self, step: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(TensorError::Invalid("moment count does not match parameters".into()));
        }
        for ((new_m, new_v), old) in m.iter().zip(&v).zip(&self.m) {
            if new_m.shape() != old.shape() || new_v.shape() != old.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_restore",
                    lhs: old.shape().to_vec(),
                    rhs: new_m.shape().to_vec(),
                });
            }
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// Apply one update from the accumulated gradients, then zero them.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(TensorError::Invalid(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        if let Some(p) = store.iter().find(|p| !p.grad.all_finite()) {
            return Err(TensorError::NonFiniteGradient(p.name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * g[i];
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        store.zero_grad();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", Tensor::scalar(x)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = scalar_store(2.5);
        let mut adam = AdamState::new(&s, 1e-3);
        for _ in 0..5 {
            adam.step(&mut s).unwrap();
        }
        assert_eq!(s.iter().next().unwrap().value.item(), 2.5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the first update is lr·g/(|g|+ε).
        let mut s = scalar_store(0.0);
        let mut adam = AdamState::new(&s, 1e-3);
        s.iter_mut().next().unwrap().grad = Tensor::scalar(1.0);
        adam.step(&mut s).unwrap();
        let x = s.iter().next().unwrap().value.item();
        let expected = -1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((x - expected).abs() < 1e-15, "{x} vs {expected}");
        // constant gradient keeps the step at lr
        for _ in 0..9 {
            s.iter_mut().next().unwrap().grad = Tensor::scalar(1.0);
            adam.step(&mut s).unwrap();
        }
        let x10 = s.iter().next().unwrap().value.item();
        assert!((x10 + 10.0e-3).abs() < 1e-9);
        assert_eq!(adam.steps(), 10);
    }

    #[test]
    fn gradients_zeroed_after_step() {
        let mut s = scalar_store(1.0);
        let mut adam = AdamState::new(&s, 1e-2);
        s.iter_mut().next().unwrap().grad = Tensor::scalar(3.0);
        adam.step(&mut s).unwrap();
        assert_eq!(s.iter().next().unwrap().grad.item(), 0.0);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut s = scalar_store(1.0);
        let mut adam = AdamState::new(&s, 1e-2);
        s.iter_mut().next().unwrap().grad = Tensor::scalar(f64::NAN);
        assert!(matches!(adam.step(&mut s), Err(TensorError::NonFiniteGradient(_))));
    }
}
