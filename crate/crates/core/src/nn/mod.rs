//! Layers and losses on top of the autodiff engine.
//!
//! Layers own plain [`Tensor`] parameters. To run a layer inside a graph it is
//! first bound with `bind`, which registers its parameters as graph leaves in
//! the same order as `params()` lists them.

mod attention;
mod conv;
mod dense;

pub use attention::{attention_apply, AttentionBlock, AttentionMaps, AttentionVars, DEFAULT_REDUCTION};
pub use conv::{conv2d, ConvLayer, ConvVars};
pub use dense::{Dense, DenseVars};

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Read and write access to a module's parameters in declaration order.
pub trait Parameters {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }
}

/// He-normal initialisation for a layer with `fan_in` inputs.
pub(crate) fn he_normal(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape")
}

/// Batch-mean softmax cross-entropy of `(N, K)` or `(K)` logits.
pub fn softmax_cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    g.softmax_cross_entropy(logits, labels)
}

/// Per-channel mean over the spatial axes: `(C, H, W) -> (C)`, `(N, C, H, W) -> (N, C)`.
pub fn global_avg_pool(g: &mut Graph, feature: Var) -> Result<Var> {
    let shape = g.shape(feature).to_vec();
    let (n, c, hw) = match shape.as_slice() {
        [c, h, w] => (None, *c, h * w),
        [n, c, h, w] => (Some(*n), *c, h * w),
        s => return Err(crate::Error::shape("global_avg_pool", &[s])),
    };
    let rows = n.unwrap_or(1) * c;
    let flat = g.reshape(feature, &[rows, hw])?;
    let pooled = g.mean_axis(flat, 1)?;
    match n {
        Some(n) => g.reshape(pooled, &[n, c]),
        None => g.reshape(pooled, &[c]),
    }
}
