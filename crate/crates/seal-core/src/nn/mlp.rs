//! Small dense MLPs: ReLU hidden layers, identity output, He-style init.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SealError};
use crate::nn::params::ParamSet;
use crate::nn::tape::{NodeId, Tape};

/// Default hidden widths.
pub const DEFAULT_HIDDEN: [usize; 2] = [128, 128];

/// A multi-layer perceptron whose parameters live in an external [`ParamSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    /// Parameter ids: weight, bias per layer, in order.
    pub weights: Vec<usize>,
    pub biases: Vec<usize>,
}

impl Mlp {
    /// Allocate a fresh MLP with fan-in-scaled normal weights and zero biases.
    pub fn new(
        input: usize,
        hidden: &[usize],
        output: usize,
        params: &mut ParamSet,
        rng: &mut impl Rng,
    ) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for win in sizes.windows(2) {
            let (fan_in, fan_out) = (win[0], win[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("valid normal");
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| normal.sample(rng));
            weights.push(params.add(w));
            biases.push(params.add(Array2::zeros((1, fan_out))));
        }
        Mlp {
            sizes,
            weights,
            biases,
        }
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Tape forward pass on a (batch x input) node; returns the logits node.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: NodeId) -> NodeId {
        let n_layers = self.weights.len();
        let mut h = x;
        for i in 0..n_layers {
            let w = tape.param(params, self.weights[i]);
            let b = tape.param(params, self.biases[i]);
            h = tape.linear(h, w, b);
            if i + 1 < n_layers {
                h = tape.relu(h);
            }
        }
        h
    }

    /// Tape-free batched inference.
    pub fn infer_batch(&self, params: &ParamSet, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_size() {
            return Err(SealError::ShapeMismatch {
                expected: self.input_size(),
                got: x.ncols(),
                context: "mlp input".into(),
            });
        }
        let n_layers = self.weights.len();
        let mut h = x.clone();
        for i in 0..n_layers {
            let w = &params.tensors[self.weights[i]];
            let b = &params.tensors[self.biases[i]];
            h = h.dot(w) + b;
            if i + 1 < n_layers {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(h)
    }

    /// Single-sample inference.
    pub fn infer(&self, params: &ParamSet, x: &[f64]) -> Result<Vec<f64>> {
        let row = Array2::from_shape_vec((1, x.len()), x.to_vec())
            .map_err(|_| SealError::ShapeMismatch {
                expected: self.input_size(),
                got: x.len(),
                context: "mlp input".into(),
            })?;
        Ok(self.infer_batch(params, &row)?.row(0).to_vec())
    }
}

/// Index of the largest component, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
