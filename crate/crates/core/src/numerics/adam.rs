use super::{Gradients, NumericsError, ParamStore, Result};

/// Adam with bias correction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn new(lr: f64) -> Result<Self> {
        Self {
            lr,
            ..Self::default()
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(NumericsError::Contract(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !beta_ok(self.beta1) || !beta_ok(self.beta2) {
            return Err(NumericsError::Contract(
                "Adam betas must lie in [0, 1)".into(),
            ));
        }
        if !(self.eps > 0.0) {
            return Err(NumericsError::Contract("Adam eps must be positive".into()));
        }
        Ok(self)
    }

    /// Applies one update per parameter that has a gradient slot and consumes
    /// the gradients. Parameters without a slot are left untouched.
    pub fn step(&self, store: &mut ParamStore, grads: Gradients) {
        for (id, grad) in grads.iter() {
            let param = store.get_mut(id);
            param.step += 1;
            let t = param.step as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let values = param.value.data_mut();
            let m = &mut param.first_moment;
            let v = &mut param.second_moment;
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let mut grads = Gradients::new();
        grads.slot_mut(id, 3);
        Adam::default().step(&mut store, grads);
        let p = store.get(id);
        assert_eq!(p.value.data(), &[1.0, -2.0, 0.5]);
        assert_eq!(p.first_moment, vec![0.0; 3]);
        assert_eq!(p.second_moment, vec![0.0; 3]);
        assert_eq!(p.step, 1);
    }

    #[test]
    fn missing_gradient_is_untouched() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(1.0));
        let b = store.add("b", Tensor::scalar(1.0));
        let mut grads = Gradients::new();
        grads.accumulate(b, &[1.0]);
        Adam::default().step(&mut store, grads);
        assert_eq!(store.tensor(a).data(), &[1.0]);
        assert_eq!(store.get(a).step, 0);
        assert!(store.tensor(b).data()[0] < 1.0);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        let mut grads = Gradients::new();
        grads.accumulate(id, &[3.0, -0.25]);
        let adam = Adam::new(1e-3).unwrap();
        adam.step(&mut store, grads);
        let w = store.tensor(id).data();
        assert!((w[0] + 1e-3 * 3.0 / (3.0 + 1e-8)).abs() < 1e-15);
        assert!((w[1] - 1e-3 * 0.25 / (0.25 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn minimizes_convex_bowl() {
        let mut store = ParamStore::new();
        let id = store.add("theta", Tensor::scalar(1.0));
        let adam = Adam::new(1e-2).unwrap();
        for _ in 0..2000 {
            let theta = store.tensor(id).data()[0];
            let mut grads = Gradients::new();
            grads.accumulate(id, &[2.0 * theta]);
            adam.step(&mut store, grads);
        }
        assert!(store.tensor(id).data()[0].abs() < 1e-2);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(Adam::new(0.0).is_err());
        assert!(Adam {
            beta1: 1.0,
            ..Adam::default()
        }
        .validated()
        .is_err());
        assert!(Adam {
            eps: 0.0,
            ..Adam::default()
        }
        .validated()
        .is_err());
    }
}
