use std::collections::HashMap;

use crate::autograd::Tensor;
use crate::network::ParamStore;
use crate::{Error, Result};

/// Adam with bias correction and a constant learning rate.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: HashMap<String, (Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update; parameters without a gradient are left unchanged.
    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &HashMap<String, Tensor<f32>>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let names: Vec<String> = params.names().to_vec();
        for name in names {
            let Some(g) = grads.get(&name) else { continue };
            let p = params.get_mut(&name).unwrap();
            if p.shape() != g.shape() {
                return Err(Error::shape(p.shape(), g.shape()));
            }
            let n = g.numel();
            let (m, v) = self
                .moments
                .entry(name)
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
            let (lr, eps) = (self.lr, self.eps);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mh = *mi as f64 / c1;
                let vh = *vi as f64 / c2;
                *w -= (lr * mh / (vh.sqrt() + eps)) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::default();
        store.insert("w", Tensor::new(vec![3], vec![1.0f32, 1.0, 1.0]).unwrap());
        let mut grads = HashMap::new();
        grads.insert("w".to_string(), Tensor::new(vec![3], vec![2.0f32, -0.5, 0.0]).unwrap());
        let mut adam = Adam::new(0.01);
        adam.step(&mut store, &grads).unwrap();
        let w = store.get("w").unwrap().data();
        assert!((w[0] - 0.99).abs() < 1e-6);
        assert!((w[1] - 1.01).abs() < 1e-6);
        assert_eq!(w[2], 1.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::default();
        store.insert("w", Tensor::new(vec![2], vec![3.0f32, -2.0]).unwrap());
        let mut adam = Adam::new(0.05);
        for _ in 0..2000 {
            let g = store.get("w").unwrap().map(|v| 2.0 * (v - 0.5));
            let mut grads = HashMap::new();
            grads.insert("w".to_string(), g);
            adam.step(&mut store, &grads).unwrap();
        }
        assert!(store.get("w").unwrap().data().iter().all(|v| (v - 0.5).abs() < 1e-2));
    }
}
