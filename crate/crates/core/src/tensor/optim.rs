use std::collections::HashMap;

use super::graph::Gradients;
use super::nn::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Step decay: the rate is multiplied by `factor` at each milestone
/// (fractions of the total step budget).
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub milestones: Vec<f64>,
    pub factor: f64,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        Self { base, milestones: Vec::new(), factor: 1.0 }
    }

    /// `base`, decayed x0.1 at 50% and 75% of training.
    pub fn two_step(base: f64) -> Self {
        Self { base, milestones: vec![0.5, 0.75], factor: 0.1 }
    }

    pub fn rate(&self, step: usize, total: usize) -> f64 {
        let progress = step as f64 / total.max(1) as f64;
        let decays = self.milestones.iter().filter(|&&m| progress >= m).count();
        self.base * self.factor.powi(decays as i32)
    }
}

/// Stochastic gradient descent with classical momentum:
/// `v = momentum * v + g; p -= lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: HashMap<ParamId, Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(Self { lr, momentum, weight_decay: 0.0, velocity: HashMap::new() })
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for (id, g) in grads.iter() {
            if g.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for `{}`; aborting training",
                    store.name(id)
                )));
            }
        }
        for (id, g) in grads.iter() {
            if !store.is_trainable(id) {
                continue;
            }
            let p = store.get_mut(id).data_mut();
            let v = self.velocity.entry(id).or_insert_with(|| vec![0.0; p.len()]);
            for ((pv, vv), gv) in p.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                let grad = gv + self.weight_decay * *pv;
                *vv = self.momentum * *vv + grad;
                *pv -= self.lr * *vv;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Graph, Tensor};

    fn quadratic_grads(store: &ParamStore, id: ParamId) -> Gradients {
        let mut g = Graph::new();
        let w = g.param(store, id).unwrap();
        let three = g.input(Tensor::scalar(3.0)).unwrap();
        let d = g.sub(w, three).unwrap();
        let sq = g.mul(d, d).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new(&[2], vec![1.0, -2.0]).unwrap());
        let mut g = Graph::new();
        let w = g.param(&store, id).unwrap();
        let z = g.scale(w, 0.0).unwrap();
        let loss = g.sum(z).unwrap();
        let grads = g.backward(loss).unwrap();
        Sgd::new(0.5, 0.9).unwrap().step(&mut store, &grads).unwrap();
        assert_eq!(store.get(id).data(), &[1.0, -2.0]);
    }

    #[test]
    fn unit_rate_subtracts_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(0.0));
        let grads = quadratic_grads(&store, id);
        Sgd::new(1.0, 0.0).unwrap().step(&mut store, &grads).unwrap();
        assert_eq!(store.get(id).item(), 6.0);
    }

    #[test]
    fn quadratic_contracts_like_closed_form() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(0.0));
        let mut opt = Sgd::new(0.1, 0.0).unwrap();
        let mut prev = 0.0;
        for t in 1..=10 {
            let grads = quadratic_grads(&store, id);
            opt.step(&mut store, &grads).unwrap();
            let w = store.get(id).item();
            // e_t = e_0 (1 - 2 lr)^t
            let expect = 3.0 - 3.0 * 0.8f64.powi(t);
            assert!((w - expect).abs() < 1e-12);
            assert!(w > prev && w < 3.0);
            prev = w;
        }
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(Sgd::new(0.0, 0.9).is_err());
        assert!(Sgd::new(0.1, 1.0).is_err());
    }

    #[test]
    fn schedule_decays_twice() {
        let s = LrSchedule::two_step(1e-2);
        assert_eq!(s.rate(0, 100), 1e-2);
        assert!((s.rate(50, 100) - 1e-3).abs() < 1e-15);
        assert!((s.rate(99, 100) - 1e-4).abs() < 1e-15);
    }
}
