//! Uniform access to trainable tensors.
//!
//! Optimisers, serialisation and the gradient checker all walk parameters
//! through [`Parameters`], which yields every tensor as a flat `f64` slice in
//! a fixed declaration order.

use crate::tensor::ConvKernel;

pub trait Parameters {
    fn tensors(&self) -> Vec<(String, &[f64])>;

    /// Same order and names as [`Parameters::tensors`].
    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])>;

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    fn fill(&mut self, value: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = value);
        }
    }

    fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Plain list of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorList(pub Vec<(String, Vec<f64>)>);

impl Parameters for TensorList {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        self.0.iter().map(|(n, t)| (n.clone(), t.as_slice())).collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        self.0
            .iter_mut()
            .map(|(n, t)| (n.clone(), t.as_mut_slice()))
            .collect()
    }
}

pub(crate) fn push_conv<'a>(out: &mut Vec<(String, &'a [f64])>, prefix: &str, k: &'a ConvKernel) {
    out.push((format!("{prefix}.weight"), &k.weight));
    out.push((format!("{prefix}.bias"), &k.bias));
}

pub(crate) fn push_conv_mut<'a>(
    out: &mut Vec<(String, &'a mut [f64])>,
    prefix: &str,
    k: &'a mut ConvKernel,
) {
    out.push((format!("{prefix}.weight"), &mut k.weight));
    out.push((format!("{prefix}.bias"), &mut k.bias));
}
