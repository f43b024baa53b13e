use super::patch::{patchify, unpatchify};
use super::stack::{ConvStack, SharedBase, StackVars};
use super::{component_seed, InputShape};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, AttentionMaps, ConvVars, Dense, DenseVars, Parameters};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const LOCAL_PATCHES: usize = 4;

const BRANCH_CHANNELS: [usize; 2] = [16, 32];

/// Global/local two-branch model.
///
/// The global branch sees the whole backbone map. The local branch cuts it
/// into 2×2 patches and runs a separate conv stack on each; the processed
/// patches are stitched back together before pooling. Each branch has its own
/// classifier head.
#[derive(Clone, Debug, PartialEq)]
pub struct DualBranchModel {
    pub backbone: SharedBase,
    pub global: ConvStack,
    pub local: Vec<ConvStack>,
    pub global_head: Dense,
    pub local_head: Dense,
    class_count: usize,
    lambda: f64,
    attention: bool,
}

#[derive(Clone, Debug)]
pub struct DualVars {
    backbone: Vec<ConvVars>,
    global: StackVars,
    local: Vec<StackVars>,
    global_head: DenseVars,
    local_head: DenseVars,
}

/// Result of [`DualBranchModel::forward`].
#[derive(Clone, Debug)]
pub struct DualOutput {
    pub global_logits: Var,
    pub local_logits: Var,
    /// Local-branch outputs per patch `(N, C, H/2, W/2)`, before pooling.
    pub patch_features: [Var; LOCAL_PATCHES],
    /// Globally pooled `(N, C)` features: `[global, concatenated local]`.
    pub branch_pooled: [Var; 2],
    pub global_maps: Vec<AttentionMaps>,
}

impl DualBranchModel {
    pub fn new(input: InputShape, class_count: usize, lambda: f64, attention: bool, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::invalid("dual_branch", format!("lambda {lambda} outside [0, 1]")));
        }
        if class_count < 2 {
            return Err(Error::invalid("dual_branch", "need at least two classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(component_seed(seed, 0));
        let backbone = SharedBase::new(input, &mut rng)?;
        let (c, h, w) = backbone.output_shape();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid("dual_branch", format!("backbone map {h}x{w} cannot be split into 2x2 patches")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(component_seed(seed, 1));
        let global = ConvStack::new(c, &BRANCH_CHANNELS, (h, w), attention, &mut rng)?;
        let local = (0..LOCAL_PATCHES)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(component_seed(seed, 2 + i as u64));
                ConvStack::new(c, &BRANCH_CHANNELS, (h / 2, w / 2), attention, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(component_seed(seed, 2 + LOCAL_PATCHES as u64));
        let global_head = Dense::new(global.out_channels(), class_count, &mut rng);
        let local_head = Dense::new(global.out_channels(), class_count, &mut rng);
        Ok(DualBranchModel { backbone, global, local, global_head, local_head, class_count, lambda, attention })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn attention(&self) -> bool {
        self.attention
    }

    pub fn input_shape(&self) -> InputShape {
        self.backbone.input_shape()
    }

    pub fn bind(&self, g: &mut Graph) -> DualVars {
        DualVars {
            backbone: self.backbone.bind(g),
            global: self.global.bind(g),
            local: self.local.iter().map(|s| s.bind(g)).collect(),
            global_head: self.global_head.bind(g),
            local_head: self.local_head.bind(g),
        }
    }

    pub fn forward(&self, g: &mut Graph, vars: &DualVars, batch: Var) -> Result<DualOutput> {
        let base = self.backbone.forward(g, &vars.backbone, batch)?;
        let global = self.global.forward(g, &vars.global, base)?;

        let patches = patchify(g, base)?;
        let mut patch_features = [base; LOCAL_PATCHES];
        for (i, (stack, sv)) in self.local.iter().zip(&vars.local).enumerate() {
            patch_features[i] = stack.forward(g, sv, patches[i])?.last();
        }
        let stitched = unpatchify(g, &patch_features)?;

        let pooled_global = global_avg_pool(g, global.last())?;
        let pooled_local = global_avg_pool(g, stitched)?;
        Ok(DualOutput {
            global_logits: self.global_head.forward(g, vars.global_head, pooled_global)?,
            local_logits: self.local_head.forward(g, vars.local_head, pooled_local)?,
            patch_features,
            branch_pooled: [pooled_global, pooled_local],
            global_maps: global.maps,
        })
    }

    /// Class with the largest `λ·p_local + (1−λ)·p_global`.
    pub fn predict(&self, local_logits: &[f64], global_logits: &[f64]) -> usize {
        let lse_l = crate::autodiff::log_sum_exp(local_logits);
        let lse_g = crate::autodiff::log_sum_exp(global_logits);
        let mut best = (0, f64::NEG_INFINITY);
        for (c, (zl, zg)) in local_logits.iter().zip(global_logits).enumerate() {
            let p = self.lambda * (zl - lse_l).exp() + (1.0 - self.lambda) * (zg - lse_g).exp();
            if p > best.1 {
                best = (c, p);
            }
        }
        best.0
    }
}

impl Parameters for DualBranchModel {
    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.backbone.params();
        p.extend(self.global.params());
        self.local.iter().for_each(|s| p.extend(s.params()));
        p.extend(self.global_head.params());
        p.extend(self.local_head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.backbone.params_mut();
        p.extend(self.global.params_mut());
        self.local.iter_mut().for_each(|s| p.extend(s.params_mut()));
        p.extend(self.global_head.params_mut());
        p.extend(self.local_head.params_mut());
        p
    }
}
