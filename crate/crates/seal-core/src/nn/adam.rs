//! Adam with standard bias correction (beta1 0.9, beta2 0.999, eps 1e-8).

use ndarray::Array2;

use crate::nn::params::ParamSet;

#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = |p: &ParamSet| {
            p.tensors
                .iter()
                .map(|t| Array2::zeros(t.dim()))
                .collect::<Vec<_>>()
        };
        AdamState {
            m: zeros(params),
            v: zeros(params),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected update over every parameter tensor.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Array2<f64>], lr: f64) {
        assert_eq!(grads.len(), params.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .tensors
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(&mut self.v))
        {
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            for ((p, &m), &v) in p.iter_mut().zip(m.iter()).zip(v.iter()) {
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
