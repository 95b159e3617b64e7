use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::RealTensor;

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<RealTensor>,
    v: Vec<RealTensor>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<RealTensor> = params.tensors().iter().map(|t| RealTensor::zeros(t.shape())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[RealTensor]) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::shape("adam", &[grads.len()], &[self.m.len()]));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let g = grads[i].data();
            if g.len() != p.numel() {
                return Err(Error::shape("adam", grads[i].shape(), p.shape()));
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.push("w", RealTensor::from_vec(vec![v]));
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = store(0.7);
        let mut opt = Adam::new(&p, 1e-3);
        for _ in 0..3 {
            opt.step(&mut p, &[RealTensor::from_vec(vec![0.0])]).unwrap();
        }
        assert_eq!(p.tensors()[0].data()[0], 0.7);
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        for g in [0.5, -2.0, 1e-9] {
            let mut p = store(1.0);
            let mut opt = Adam::new(&p, 1e-3);
            opt.step(&mut p, &[RealTensor::from_vec(vec![g])]).unwrap();
            // m^ = g, v^ = g^2 after bias correction.
            let want = 1.0 - 1e-3 * g / (g.abs() + 1e-8);
            assert!((p.tensors()[0].data()[0] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = store(3.0);
        let mut opt = Adam::new(&p, 0.05);
        for _ in 0..2000 {
            let w = p.tensors()[0].data()[0];
            opt.step(&mut p, &[RealTensor::from_vec(vec![2.0 * (w - 1.0)])]).unwrap();
        }
        assert!((p.tensors()[0].data()[0] - 1.0).abs() < 1e-3);
    }
}
