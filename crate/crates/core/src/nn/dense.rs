use super::{he_normal, Parameters};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;

/// Fully connected layer `y = x W + b` with `W` of shape `(in, out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct DenseVars {
    pub weight: Var,
    pub bias: Var,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Dense { weight: he_normal(&[inputs, outputs], inputs, rng), bias: Tensor::zeros(&[outputs]) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn bind(&self, g: &mut Graph) -> DenseVars {
        DenseVars { weight: g.param(&self.weight), bias: g.param(&self.bias) }
    }

    /// `(N, in) -> (N, out)`.
    pub fn forward(&self, g: &mut Graph, vars: DenseVars, x: Var) -> Result<Var> {
        let [n, d] = *g.shape(x) else {
            return Err(Error::shape("dense", &[g.shape(x)]));
        };
        if d != self.inputs() {
            return Err(Error::shape("dense", &[g.shape(x), self.weight.shape()]));
        }
        let y = g.matmul(x, vars.weight)?;
        let b = g.reshape(vars.bias, &[1, self.outputs()])?;
        let b = g.expand(b, &[n, self.outputs()])?;
        g.add(y, b)
    }
}

impl Parameters for Dense {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}
