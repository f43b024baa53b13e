use super::stack::{ConvStack, SharedBase, StackOutput, StackVars};
use super::{component_seed, InputShape};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, ConvVars, Dense, DenseVars, Parameters};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Channel plan of every ensemble branch.
pub const BRANCH_CHANNELS: [usize; 2] = [16, 32];

/// One ensemble member: a conv stack over the base output and a linear head
/// over its globally pooled last feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleBranch {
    pub branch_id: usize,
    pub stack: ConvStack,
    pub head: Dense,
}

impl EnsembleBranch {
    fn new(branch_id: usize, base_out: (usize, usize, usize), class_count: usize, attention: bool, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(component_seed(seed, branch_id as u64 + 1));
        let (c, h, w) = base_out;
        let stack = ConvStack::new(c, &BRANCH_CHANNELS, (h, w), attention, &mut rng)?;
        let head = Dense::new(stack.out_channels(), class_count, &mut rng);
        Ok(EnsembleBranch { branch_id, stack, head })
    }
}

impl Parameters for EnsembleBranch {
    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.stack.params();
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.stack.params_mut();
        p.extend(self.head.params_mut());
        p
    }
}

/// Shared base plus a growing list of identically shaped branches.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleModel {
    pub base: SharedBase,
    pub branches: Vec<EnsembleBranch>,
    class_count: usize,
    branch_max: usize,
    attention: bool,
    seed: u64,
}

#[derive(Clone, Debug)]
pub struct EnsembleVars {
    base: Vec<ConvVars>,
    branches: Vec<(StackVars, DenseVars)>,
}

/// Result of [`EnsembleModel::forward`].
#[derive(Clone, Debug)]
pub struct EnsembleOutput {
    /// `(N, K)` logits per branch.
    pub logits: Vec<Var>,
    /// Per-branch, per-layer features and attention maps.
    pub branches: Vec<StackOutput>,
}

impl EnsembleOutput {
    /// Last-layer attention maps of every branch (empty if attention is off).
    pub fn last_maps(&self) -> Vec<crate::nn::AttentionMaps> {
        self.branches.iter().filter_map(|b| b.maps.last().copied()).collect()
    }
}

impl EnsembleModel {
    /// A model with one branch. The base is drawn from `seed`, branch `b` from `(seed, b)`.
    pub fn new(input: InputShape, class_count: usize, branch_max: usize, attention: bool, seed: u64) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::invalid("ensemble", "need at least two classes"));
        }
        if branch_max == 0 {
            return Err(Error::invalid("ensemble", "branch_max must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(component_seed(seed, 0));
        let base = SharedBase::new(input, &mut rng)?;
        let mut model = EnsembleModel { base, branches: Vec::new(), class_count, branch_max, attention, seed };
        model.add_branch()?;
        Ok(model)
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub fn branch_max(&self) -> usize {
        self.branch_max
    }

    pub fn attention(&self) -> bool {
        self.attention
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_shape(&self) -> InputShape {
        self.base.input_shape()
    }

    /// Appends a freshly initialised branch. Existing parameters are not touched.
    pub fn add_branch(&mut self) -> Result<()> {
        if self.branches.len() >= self.branch_max {
            return Err(Error::Capacity(self.branch_max));
        }
        let id = self.branches.len();
        let branch = EnsembleBranch::new(id, self.base.output_shape(), self.class_count, self.attention, self.seed)?;
        self.branches.push(branch);
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph) -> EnsembleVars {
        let base = self.base.bind(g);
        let branches = self.branches.iter().map(|b| (b.stack.bind(g), b.head.bind(g))).collect();
        EnsembleVars { base, branches }
    }

    /// Runs the base once and every branch on its output. `batch` is `(N, C, H, W)`.
    pub fn forward(&self, g: &mut Graph, vars: &EnsembleVars, batch: Var) -> Result<EnsembleOutput> {
        let shared = self.base.forward(g, &vars.base, batch)?;
        let mut out = EnsembleOutput { logits: Vec::new(), branches: Vec::new() };
        for (branch, (sv, hv)) in self.branches.iter().zip(&vars.branches) {
            let stack = branch.stack.forward(g, sv, shared)?;
            let pooled = global_avg_pool(g, stack.last())?;
            out.logits.push(branch.head.forward(g, *hv, pooled)?);
            out.branches.push(stack);
        }
        Ok(out)
    }
}

impl Parameters for EnsembleModel {
    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.base.params();
        self.branches.iter().for_each(|b| p.extend(b.params()));
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.base.params_mut();
        self.branches.iter_mut().for_each(|b| p.extend(b.params_mut()));
        p
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let lse = crate::autodiff::log_sum_exp(row);
    row.iter().map(|z| (z - lse).exp()).collect()
}

/// Majority vote over per-branch logits for one sample.
///
/// Each branch votes for its argmax. Ties between equally voted classes go to
/// the class with the larger summed softmax probability over all branches,
/// then to the lowest class index.
pub fn ensemble_predict(branch_logits: &[&[f64]]) -> usize {
    let k = branch_logits.first().map(|l| l.len()).unwrap_or(0);
    let mut votes = vec![0usize; k];
    for logits in branch_logits {
        votes[argmax(logits)] += 1;
    }
    let top = votes.iter().copied().max().unwrap_or(0);
    let tied: Vec<usize> = (0..k).filter(|&c| votes[c] == top).collect();
    if tied.len() == 1 {
        return tied[0];
    }
    let mut mass = vec![0.0; k];
    for logits in branch_logits {
        softmax(logits).iter().zip(mass.iter_mut()).for_each(|(p, m)| *m += p);
    }
    let mut best = tied[0];
    for &c in &tied[1..] {
        if mass[c] > mass[best] {
            best = c;
        }
    }
    best
}
