//! The gradient-check suite: every differentiable op of the layers and the
//! diversity measure against central differences, plus the three composite
//! losses through a tiny end-to-end model.

use crate::arch::{patchify, unpatchify, DualBranchModel, EnsembleModel, InputShape, Model};
use crate::autodiff::{grad_check, relative_error, Graph, Var};
use crate::data::Batch;
use crate::diversity::{
    channel_pool, diversity_grad, pairwise_similarity, similarity_node, spatial_pool, PoolKind, PooledFeature,
    Pooling, SimilarityConfig,
};
use crate::error::Result;
use crate::linalg;
use crate::nn::{attention_apply, conv2d, global_avg_pool, AttentionBlock, ConvLayer, Dense, Parameters};
use crate::tensor::Tensor;
use crate::train::{combined_loss, forward_loss, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

pub const OP_THRESHOLD: f64 = 1e-5;
pub const COMPOSITE_THRESHOLD: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckGroup {
    NnOps,
    Diversity,
    Composite,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub group: CheckGroup,
    pub max_rel_error: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    /// Random inputs per op check.
    pub trials: u64,
    /// Random directions per composite loss.
    pub directions: u64,
    /// Test hook: perturbs the adjugate used by the `diversity_grad` check.
    pub corrupt_adjugate: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { trials: 5, directions: 4, corrupt_adjugate: false }
    }
}

/// Distinct values spread over `[-1, 1]` and kept away from 0, so kinks and
/// ties are far from every coordinate.
fn spread(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64 * 2.0 - 1.0).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    let vals = vals.into_iter().map(|v| {
        let v = v + rng.random_range(-0.2..0.2) / n as f64;
        if v.abs() < 0.05 {
            v + 0.1
        } else {
            v
        }
    });
    Tensor::new(shape.to_vec(), vals.collect()).expect("shape")
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Scalarises `y` with fixed positive weights.
fn probe(g: &mut Graph, y: Var) -> Result<Var> {
    let n = g.value(y).len();
    let w = Tensor::new(g.shape(y).to_vec(), (0..n).map(|i| 0.3 + ((i * 7919) % 13) as f64 / 10.0).collect())?;
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    g.sum(p)
}

type OpCase = (&'static str, CheckGroup, Vec<usize>, Box<dyn Fn(&mut Graph, Var, u64) -> Result<Var>>);

fn op_cases() -> Vec<OpCase> {
    use CheckGroup::{Diversity, NnOps};
    let seeded = |seed: u64| ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    vec![
        ("conv2d", NnOps, vec![2, 2, 5, 5], Box::new(move |g, x, s| {
            let layer = ConvLayer::new(2, 3, 3, 1, 1, &mut seeded(s))?;
            conv2d(g, x, &layer)
        })),
        ("conv2d_stride2", NnOps, vec![1, 2, 6, 6], Box::new(move |g, x, s| {
            let layer = ConvLayer::new(2, 3, 3, 2, 1, &mut seeded(s))?;
            conv2d(g, x, &layer)
        })),
        ("dense", NnOps, vec![3, 4], Box::new(move |g, x, s| {
            let dense = Dense::new(4, 5, &mut seeded(s));
            let vars = dense.bind(g);
            dense.forward(g, vars, x)
        })),
        ("relu", NnOps, vec![8], Box::new(|g, x, _| g.relu(x))),
        ("sigmoid", NnOps, vec![8], Box::new(|g, x, _| g.sigmoid(x))),
        ("softmax_cross_entropy", NnOps, vec![3, 5], Box::new(|g, x, _| g.softmax_cross_entropy(x, &[4, 0, 2]))),
        ("global_avg_pool", NnOps, vec![2, 3, 4, 4], Box::new(|g, x, _| global_avg_pool(g, x))),
        ("attention", NnOps, vec![2, 4, 4, 4], Box::new(move |g, x, s| {
            let block = AttentionBlock::new(4, 4, (4, 4), &mut seeded(s))?;
            Ok(attention_apply(g, x, &block)?.0)
        })),
        ("patchify", NnOps, vec![1, 2, 4, 4], Box::new(|g, x, _| {
            let p = patchify(g, x)?;
            let mut scaled = p;
            for (i, v) in p.iter().enumerate() {
                scaled[i] = g.scale(*v, 1.0 + i as f64)?;
            }
            unpatchify(g, &scaled)
        })),
        ("spatial_pool_mean", Diversity, vec![2, 3, 4, 4], Box::new(|g, x, _| spatial_pool(g, x, Pooling::Mean))),
        ("spatial_pool_max", Diversity, vec![2, 3, 4, 4], Box::new(|g, x, _| spatial_pool(g, x, Pooling::Max))),
        ("channel_pool_mean", Diversity, vec![2, 3, 4, 4], Box::new(|g, x, _| channel_pool(g, x, Pooling::Mean))),
        ("channel_pool_max", Diversity, vec![2, 3, 4, 4], Box::new(|g, x, _| channel_pool(g, x, Pooling::Max))),
        ("rbf_similarity", Diversity, vec![3, 1, 2, 3], Box::new(move |g, x, s| similarity_of(g, x, s, false))),
        ("rbf_similarity_normalized", Diversity, vec![3, 1, 2, 3], Box::new(move |g, x, s| similarity_of(g, x, s, true))),
        ("determinant", Diversity, vec![3, 3], Box::new(|g, x, _| g.det(x))),
        ("normalize_rows", Diversity, vec![3, 4], Box::new(|g, x, _| g.normalize_rows(x))),
    ]
}

/// `x` is one learner's pooled batch; two fixed learners join it.
fn similarity_of(g: &mut Graph, x: Var, seed: u64, normalize: bool) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51A1);
    let shape = g.shape(x).to_vec();
    let mut pooled = vec![PooledFeature { learner: 0, kind: PoolKind::Spatial, values: x }];
    for learner in 1..3 {
        let v = g.constant(uniform(&shape, &mut rng));
        pooled.push(PooledFeature { learner, kind: PoolKind::Spatial, values: v });
    }
    let s = similarity_node(g, &pooled, &SimilarityConfig::new(0.4, shape[0])?, normalize)?;
    crate::diversity::diversity_node(g, s)
}

fn check_ops(opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (name, group, shape, op) in op_cases() {
        let mut worst = 0.0f64;
        for trial in 0..opts.trials {
            let x = spread(&shape, &mut ChaCha8Rng::seed_from_u64(trial));
            let f = |g: &mut Graph, x: Var| {
                let y = op(g, x, trial)?;
                probe(g, y)
            };
            worst = worst.max(grad_check(f, &x, 1e-5)?);
        }
        out.push(result(name, group, worst, OP_THRESHOLD));
    }
    Ok(out)
}

/// The closed-form determinant gradient against central differences of `det`.
fn check_diversity_grad(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for trial in 0..opts.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(0xD37 + trial);
        let size = 2 + (trial as usize % 4);
        let pooled: Vec<Tensor> = (0..size).map(|_| uniform(&[4, 1, 3, 3], &mut rng)).collect();
        let s = pairwise_similarity(&pooled, &SimilarityConfig::new(0.15, 4)?)?;
        let mut grad = diversity_grad(&s);
        if opts.corrupt_adjugate {
            grad[1] *= -1.0;
            grad[0] += 0.5;
        }
        let eps = 1e-6;
        for i in 0..size * size {
            let mut plus = s.entries().to_vec();
            let mut minus = plus.clone();
            plus[i] += eps;
            minus[i] -= eps;
            let numeric = (linalg::det(&plus, size) - linalg::det(&minus, size)) / (2.0 * eps);
            worst = worst.max(relative_error(grad[i], numeric));
        }
    }
    Ok(result("diversity_grad", CheckGroup::Diversity, worst, OP_THRESHOLD))
}

#[derive(Clone, Copy)]
enum Composite {
    Combined,
    Ensemble,
    DualBranch,
}

fn composite_loss(which: Composite, model: &Model, batch: &Batch, cfg: &TrainConfig) -> Result<(Graph, Var)> {
    let mut g = Graph::new();
    let terms = forward_loss(model, &mut g, batch.images.clone(), &batch.labels, cfg)?;
    let loss = match which {
        Composite::Combined => {
            let cls = g.softmax_cross_entropy(terms.logits[0], &batch.labels)?;
            combined_loss(&mut g, cls, terms.d_ch, terms.d_sp, cfg.diversity_weight)?.0
        }
        Composite::Ensemble | Composite::DualBranch => terms.loss,
    };
    Ok((g, loss))
}

/// Directional derivative along random directions over a random subset of
/// the parameter tensors.
fn check_composite(name: &'static str, which: Composite, opts: &VerifyOptions) -> Result<CheckResult> {
    let input = InputShape { channels: 1, height: 8, width: 8 };
    let mut model = match which {
        Composite::DualBranch => Model::Dual(DualBranchModel::new(input, 3, 0.6, true, 21)?),
        _ => {
            let mut m = EnsembleModel::new(input, 3, 2, true, 11)?;
            m.add_branch()?;
            Model::Ensemble(m)
        }
    };
    // random inputs and jittered parameters keep every ReLU and max away from ties at exactly zero
    let mut rng = ChaCha8Rng::seed_from_u64(0xBA7C);
    for p in model.params_mut() {
        p.data_mut().iter_mut().for_each(|v| *v += 0.05 * rng.sample::<f64, _>(StandardNormal));
    }
    let images = Tensor::new(vec![4, 1, 8, 8], (0..256).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let batch = Batch { images, labels: vec![0, 1, 2, 1] };
    let cfg = TrainConfig { diversity: crate::diversity::DiversityConfig::default(), ..TrainConfig::default() };

    let analytic = {
        let (mut g, loss) = composite_loss(which, &model, &batch, &cfg)?;
        g.backward(loss)?;
        g.param_grads()
    };
    let mut worst = 0.0f64;
    for d in 0..opts.directions {
        let mut rng = ChaCha8Rng::seed_from_u64(0xD1E + d);
        let count = model.params().len();
        let chosen: Vec<bool> = (0..count).map(|_| rng.random_bool(0.5)).collect();
        let dir: Vec<Vec<f64>> = model
            .params()
            .iter()
            .zip(&chosen)
            .map(|(p, &on)| (0..p.len()).map(|_| if on { rng.sample(StandardNormal) } else { 0.0 }).collect())
            .collect();
        let norm = dir.iter().flatten().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let exact: f64 = analytic.iter().flatten().zip(dir.iter().flatten()).map(|(g, u)| g * u / norm).sum();

        let eps = 1e-6;
        let at = |sign: f64| -> Result<f64> {
            let mut shifted = model.clone();
            for (p, u) in shifted.params_mut().into_iter().zip(&dir) {
                p.data_mut().iter_mut().zip(u).for_each(|(v, du)| *v += sign * eps * du / norm);
            }
            let (g, loss) = composite_loss(which, &shifted, &batch, &cfg)?;
            Ok(g.value(loss).item())
        };
        let numeric = (at(1.0)? - at(-1.0)?) / (2.0 * eps);
        worst = worst.max(relative_error(exact, numeric));
    }
    Ok(result(name, CheckGroup::Composite, worst, COMPOSITE_THRESHOLD))
}

fn result(name: &str, group: CheckGroup, err: f64, threshold: f64) -> CheckResult {
    CheckResult { name: name.to_string(), group, max_rel_error: err, threshold, passed: err < threshold }
}

/// Runs every check. A failing check is reported, not returned as an error.
pub fn gradcheck_suite(opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    let mut out = check_ops(opts)?;
    out.push(check_diversity_grad(opts)?);
    out.push(check_composite("combined_loss", Composite::Combined, opts)?);
    out.push(check_composite("esr_loss", Composite::Ensemble, opts)?);
    out.push(check_composite("manet_loss", Composite::DualBranch, opts)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let results = gradcheck_suite(&VerifyOptions::default()).unwrap();
        for r in &results {
            assert!(r.passed, "{} failed with {}", r.name, r.max_rel_error);
        }
        assert!(results.iter().any(|r| r.group == CheckGroup::Composite));
    }

    #[test]
    fn corrupted_adjugate_is_caught() {
        let opts = VerifyOptions { corrupt_adjugate: true, trials: 1, ..Default::default() };
        let r = check_diversity_grad(&opts).unwrap();
        assert!(!r.passed);
        assert_eq!(r.name, "diversity_grad");
    }
}
