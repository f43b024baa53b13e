use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{AttentionBlock, AttentionMaps, AttentionVars, ConvLayer, ConvVars, Parameters, DEFAULT_REDUCTION};
use crate::tensor::Tensor;
use rand::Rng;

use super::InputShape;

/// The convolutional stem shared by all branches: two stride-2 3×3
/// convolutions with ReLU, `C → 8 → 16` channels, spatial size divided by 4.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedBase {
    pub layers: Vec<ConvLayer>,
    input: InputShape,
}

impl SharedBase {
    pub const CHANNELS: [usize; 2] = [8, 16];

    pub fn new(input: InputShape, rng: &mut impl Rng) -> Result<Self> {
        if !input.height.is_multiple_of(4) || !input.width.is_multiple_of(4) || input.height == 0 || input.width == 0 {
            return Err(Error::invalid("shared_base", format!("input {}x{} is not a multiple of 4", input.height, input.width)));
        }
        let mut layers = Vec::new();
        let mut c = input.channels;
        for &out in &Self::CHANNELS {
            layers.push(ConvLayer::new(c, out, 3, 2, 1, rng)?);
            c = out;
        }
        Ok(SharedBase { layers, input })
    }

    pub fn input_shape(&self) -> InputShape {
        self.input
    }

    /// `(C, H, W)` of the base output.
    pub fn output_shape(&self) -> (usize, usize, usize) {
        (Self::CHANNELS[1], self.input.height / 4, self.input.width / 4)
    }

    pub fn bind(&self, g: &mut Graph) -> Vec<ConvVars> {
        self.layers.iter().map(|l| l.bind(g)).collect()
    }

    pub fn forward(&self, g: &mut Graph, vars: &[ConvVars], batch: Var) -> Result<Var> {
        let expected = [self.input.channels, self.input.height, self.input.width];
        let shape = g.shape(batch);
        if shape.len() != 4 || shape[1..] != expected {
            return Err(Error::invalid("model input", format!("expected (N, {expected:?}), got {shape:?}")));
        }
        let mut x = batch;
        for (layer, v) in self.layers.iter().zip(vars) {
            let y = layer.forward(g, *v, x)?;
            x = g.relu(y)?;
        }
        Ok(x)
    }
}

impl Parameters for SharedBase {
    fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// A stack of stride-1 3×3 convolutions, each followed by ReLU and, when
/// enabled, an attention block.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStack {
    pub convs: Vec<ConvLayer>,
    pub attention: Option<Vec<AttentionBlock>>,
}

#[derive(Clone, Debug)]
pub struct StackVars {
    convs: Vec<ConvVars>,
    attention: Option<Vec<AttentionVars>>,
}

/// Per-layer outputs of a [`ConvStack`].
#[derive(Clone, Debug)]
pub struct StackOutput {
    /// Output of each layer (after attention when enabled).
    pub features: Vec<Var>,
    /// Attention maps of each layer; empty when attention is disabled.
    pub maps: Vec<AttentionMaps>,
}

impl StackOutput {
    pub fn last(&self) -> Var {
        *self.features.last().expect("stacks have at least one layer")
    }
}

impl ConvStack {
    pub fn new(in_channels: usize, channels: &[usize], spatial: (usize, usize), attention: bool, rng: &mut impl Rng) -> Result<Self> {
        let mut convs = Vec::new();
        let mut blocks = Vec::new();
        let mut c = in_channels;
        for &out in channels {
            convs.push(ConvLayer::new(c, out, 3, 1, 1, rng)?);
            if attention {
                blocks.push(AttentionBlock::new(out, DEFAULT_REDUCTION, spatial, rng)?);
            }
            c = out;
        }
        Ok(ConvStack { convs, attention: attention.then_some(blocks) })
    }

    pub fn out_channels(&self) -> usize {
        self.convs.last().map(|c| c.out_channels()).unwrap_or(0)
    }

    pub fn bind(&self, g: &mut Graph) -> StackVars {
        let mut convs = Vec::new();
        let mut attention = self.attention.as_ref().map(|_| Vec::new());
        for (i, conv) in self.convs.iter().enumerate() {
            convs.push(conv.bind(g));
            if let (Some(blocks), Some(vars)) = (&self.attention, attention.as_mut()) {
                vars.push(blocks[i].bind(g));
            }
        }
        StackVars { convs, attention }
    }

    pub fn forward(&self, g: &mut Graph, vars: &StackVars, input: Var) -> Result<StackOutput> {
        let mut x = input;
        let mut out = StackOutput { features: Vec::new(), maps: Vec::new() };
        for (i, conv) in self.convs.iter().enumerate() {
            let y = conv.forward(g, vars.convs[i], x)?;
            x = g.relu(y)?;
            if let (Some(blocks), Some(bv)) = (&self.attention, &vars.attention) {
                let (refined, maps) = blocks[i].forward(g, &bv[i], x)?;
                x = refined;
                out.maps.push(maps);
            }
            out.features.push(x);
        }
        Ok(out)
    }
}

impl Parameters for ConvStack {
    fn params(&self) -> Vec<&Tensor> {
        let mut p = Vec::new();
        for (i, conv) in self.convs.iter().enumerate() {
            p.extend(conv.params());
            if let Some(blocks) = &self.attention {
                p.extend(blocks[i].params());
            }
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = Vec::new();
        let mut blocks = self.attention.as_mut().map(|b| b.iter_mut());
        for conv in self.convs.iter_mut() {
            p.extend(conv.params_mut());
            if let Some(block) = blocks.as_mut().and_then(|b| b.next()) {
                p.extend(block.params_mut());
            }
        }
        p
    }
}
