//! Flat parameter storage shared by a model's networks.

use ndarray::Array2;

/// All trainable tensors of one model, addressed by index. Adam state and
/// checkpoints mirror this layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    pub tensors: Vec<Array2<f64>>,
}

impl ParamSet {
    pub fn add(&mut self, t: Array2<f64>) -> usize {
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar parameter count.
    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(ndarray::Array2::len).sum()
    }
}
