use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};

use super::TrainError;

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Applies the accumulated gradients. Nothing is modified when any
    /// gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), TrainError> {
        if let Some(p) = store.params().iter().find(|p| !p.grad.is_finite()) {
            return Err(TrainError::NonFiniteGradient(p.name.clone()));
        }
        if self.first.len() != store.len() {
            self.first = store.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        let (lr, decay) = (self.learning_rate, 1.0 - self.learning_rate * self.weight_decay);
        for ((p, m), v) in store.params_mut().iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let g = p.grad.data();
            let w = p.value.data_mut();
            for k in 0..w.len() {
                let mk = &mut m.data_mut()[k];
                *mk = self.beta1 * *mk + (1.0 - self.beta1) * g[k];
                let vk = &mut v.data_mut()[k];
                *vk = self.beta2 * *vk + (1.0 - self.beta2) * g[k] * g[k];
                let update = (*mk / c1) / ((*vk / c2).sqrt() + self.eps);
                w[k] = w[k] * decay - lr * update;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![w])).unwrap();
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let mut s = store(0.7);
        let mut opt = AdamW::new(0.1, 0.0);
        for _ in 0..5 {
            opt.step(&mut s).unwrap();
        }
        assert_eq!(s.params()[0].value.data(), &[0.7]);
    }

    #[test]
    fn descends_on_a_parabola() {
        let mut s = store(1.0);
        let mut opt = AdamW::new(0.1, 0.01);
        s.params_mut()[0].grad = Tensor::vector(vec![2.0]);
        opt.step(&mut s).unwrap();
        let w = s.params()[0].value.data()[0];
        assert!(w < 1.0);
        // first Adam step moves by lr; decay adds lr * wd * w
        assert!((w - (1.0 * (1.0 - 0.001) - 0.1)).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut s = store(1.0);
        s.add("bad", Tensor::vector(vec![0.0, 1.0])).unwrap();
        s.params_mut()[1].grad = Tensor::vector(vec![0.0, f64::NAN]);
        let err = AdamW::new(0.1, 0.0).step(&mut s).unwrap_err();
        assert!(matches!(err, TrainError::NonFiniteGradient(ref n) if n == "bad"));
        assert_eq!(s.params()[0].value.data(), &[1.0]);
    }

    #[test]
    fn trajectories_are_reproducible() {
        let run = || {
            let mut s = store(1.3);
            let mut opt = AdamW::new(0.05, 0.01);
            let mut path = Vec::new();
            for _ in 0..20 {
                let w = s.params()[0].value.data()[0];
                s.params_mut()[0].grad = Tensor::vector(vec![2.0 * w]);
                opt.step(&mut s).unwrap();
                path.push(s.params()[0].value.data()[0].to_bits());
            }
            path
        };
        assert_eq!(run(), run());
    }
}
