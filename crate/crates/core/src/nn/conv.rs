use super::{he_normal, Parameters};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;

/// A 2-D convolution with an odd square kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Var,
}

impl ConvLayer {
    /// He-initialised weights, zero bias.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = he_normal(&[out_channels, in_channels, kernel, kernel], in_channels * kernel * kernel, rng);
        Self::from_parts(weight, Tensor::zeros(&[out_channels]), stride, padding)
    }

    pub fn from_parts(weight: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        let [o, _, k, k2] = *weight.shape() else {
            return Err(Error::shape("conv_layer", &[weight.shape()]));
        };
        if k != k2 || k % 2 == 0 {
            return Err(Error::invalid("conv_layer", format!("kernel must be square and odd, got {k}x{k2}")));
        }
        if bias.shape() != [o] {
            return Err(Error::shape("conv_layer", &[weight.shape(), bias.shape()]));
        }
        if stride == 0 {
            return Err(Error::invalid("conv_layer", "stride must be positive"));
        }
        Ok(ConvLayer { weight, bias, stride, padding })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    /// Output extent for an input extent: `floor((size + 2p - k) / s) + 1`.
    pub fn output_size(&self, size: usize) -> Result<usize> {
        let padded = size + 2 * self.padding;
        if padded < self.kernel() {
            return Err(Error::invalid("conv_layer", format!("input size {size} smaller than kernel")));
        }
        Ok((padded - self.kernel()) / self.stride + 1)
    }

    pub fn bind(&self, g: &mut Graph) -> ConvVars {
        ConvVars { weight: g.param(&self.weight), bias: g.param(&self.bias) }
    }

    /// Cross-correlation plus bias of `(C, H, W)` or `(N, C, H, W)` input.
    pub fn forward(&self, g: &mut Graph, vars: ConvVars, input: Var) -> Result<Var> {
        let shape = g.shape(input);
        let channels = if shape.len() >= 3 { shape[shape.len() - 3] } else { 0 };
        if channels != self.in_channels() {
            return Err(Error::shape("conv2d", &[shape, self.weight.shape()]));
        }
        g.conv2d(input, vars.weight, vars.bias, self.stride, self.padding)
    }
}

impl Parameters for ConvLayer {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Convenience for one-off evaluation of a layer outside of a model.
pub fn conv2d(g: &mut Graph, input: Var, layer: &ConvLayer) -> Result<Var> {
    let vars = layer.bind(g);
    layer.forward(g, vars, input)
}
