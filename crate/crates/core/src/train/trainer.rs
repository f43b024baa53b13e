use super::loss::{esr_loss, manet_loss, LossBreakdown};
use super::optim::OptimizerState;
use crate::arch::{ensemble_predict, Model};
use crate::autodiff::{Graph, Var};
use crate::data::{batches, Dataset, Split};
use crate::diversity::{pooled_diversity_node, DiversityConfig, PoolKind};
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, Parameters};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const EVAL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub diversity_spatial: bool,
    pub diversity_channel: bool,
    pub diversity_weight: f64,
    pub diversity: DiversityConfig,
    /// Average ensemble diversity over every layer instead of the last one.
    pub all_layers: bool,
    /// Ensembles gain a branch every this many epochs.
    pub branch_add_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            diversity_spatial: true,
            diversity_channel: true,
            diversity_weight: 1.0,
            diversity: DiversityConfig::default(),
            all_layers: false,
            branch_add_epochs: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, train_len: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if self.batch_size == 0 || self.batch_size > train_len {
            return Err(Error::config("batch_size", format!("{} outside [1, {train_len}]", self.batch_size)));
        }
        if !(self.diversity_weight >= 0.0 && self.diversity_weight.is_finite()) {
            return Err(Error::config("diversity_weight", format!("must be non-negative, got {}", self.diversity_weight)));
        }
        if self.branch_add_epochs == 0 {
            return Err(Error::config("branch_add_epochs", "must be positive"));
        }
        OptimizerState::new(self.learning_rate, self.momentum).map(|_| ())
    }

    fn any_diversity(&self) -> bool {
        self.diversity_spatial || self.diversity_channel
    }
}

/// Whether an ensemble of `branches` gains a branch at the start of `epoch`.
pub fn grows_at(epoch: usize, every: usize, branches: usize, branch_max: usize) -> bool {
    epoch > 0 && every > 0 && epoch.is_multiple_of(every) && branches < branch_max
}

/// Graph nodes of one forward pass through the loss.
#[derive(Clone, Debug)]
pub struct StepTerms {
    pub loss: Var,
    pub breakdown: LossBreakdown,
    pub d_sp: Option<Var>,
    pub d_ch: Option<Var>,
    pub d_branch: Option<Var>,
    /// Per-branch logits for ensembles, `[local, global]` for dual-branch models.
    pub logits: Vec<Var>,
    pub predictions: Vec<usize>,
}

fn rows(t: &Tensor) -> Vec<&[f64]> {
    let k = *t.shape().last().expect("logits have a class axis");
    t.data().chunks(k).collect()
}

fn layer_diversity(g: &mut Graph, per_layer: &[(Vec<Var>, Vec<Var>)], cfg: &TrainConfig) -> Result<(Option<Var>, Option<Var>)> {
    let mut sp = Vec::new();
    let mut ch = Vec::new();
    for (spatial, channel) in per_layer {
        if cfg.diversity_spatial {
            sp.push(pooled_diversity_node(g, spatial, PoolKind::Spatial, &cfg.diversity)?);
        }
        if cfg.diversity_channel {
            ch.push(pooled_diversity_node(g, channel, PoolKind::Channel, &cfg.diversity)?);
        }
    }
    let mut mean = |terms: Vec<Var>| -> Result<Option<Var>> {
        if terms.len() <= 1 {
            return Ok(terms.first().copied());
        }
        let n = terms.len() as f64;
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = g.add(acc, t)?;
        }
        g.scale(acc, 1.0 / n).map(Some)
    };
    Ok((mean(sp)?, mean(ch)?))
}

/// Binds `model` into `g`, runs `images` through it and records the loss.
pub fn forward_loss(model: &Model, g: &mut Graph, images: Tensor, labels: &[usize], cfg: &TrainConfig) -> Result<StepTerms> {
    let x = g.constant(images);
    match model {
        Model::Ensemble(m) => {
            let vars = m.bind(g);
            let out = m.forward(g, &vars, x)?;
            let losses = out.logits.iter().map(|&z| softmax_cross_entropy(g, z, labels)).collect::<Result<Vec<_>>>()?;
            let (d_sp, d_ch) = if cfg.any_diversity() {
                let depth = out.branches[0].features.len();
                let layers: Vec<usize> = if cfg.all_layers { (0..depth).collect() } else { vec![depth - 1] };
                let taps: Vec<(Vec<Var>, Vec<Var>)> = layers
                    .iter()
                    .map(|&l| {
                        if m.attention() {
                            (
                                out.branches.iter().map(|b| b.maps[l].spatial).collect(),
                                out.branches.iter().map(|b| b.maps[l].channel).collect(),
                            )
                        } else {
                            let f: Vec<Var> = out.branches.iter().map(|b| b.features[l]).collect();
                            (f.clone(), f)
                        }
                    })
                    .collect();
                layer_diversity(g, &taps, cfg)?
            } else {
                (None, None)
            };
            let (loss, breakdown) = esr_loss(g, &losses, d_ch, d_sp, cfg.diversity_weight)?;
            let logits: Vec<&Tensor> = out.logits.iter().map(|&z| g.value(z)).collect();
            let per_branch: Vec<Vec<&[f64]>> = logits.iter().map(|t| rows(t)).collect();
            let predictions = (0..labels.len())
                .map(|i| ensemble_predict(&per_branch.iter().map(|b| b[i]).collect::<Vec<_>>()))
                .collect();
            Ok(StepTerms { loss, breakdown, d_sp, d_ch, d_branch: None, logits: out.logits, predictions })
        }
        Model::Dual(m) => {
            let vars = m.bind(g);
            let out = m.forward(g, &vars, x)?;
            let l_local = softmax_cross_entropy(g, out.local_logits, labels)?;
            let l_global = softmax_cross_entropy(g, out.global_logits, labels)?;
            let (d_sp, d_ch) = layer_diversity(g, &[(out.patch_features.to_vec(), out.patch_features.to_vec())], cfg)?;
            let d_branch = if cfg.any_diversity() {
                let n = labels.len();
                let pooled = out
                    .branch_pooled
                    .iter()
                    .map(|&v| {
                        let c = g.shape(v)[1];
                        g.reshape(v, &[n, c, 1, 1])
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(pooled_diversity_node(g, &pooled, PoolKind::Channel, &cfg.diversity)?)
            } else {
                None
            };
            let (loss, breakdown) =
                manet_loss(g, l_local, l_global, d_branch, d_sp, d_ch, m.lambda(), cfg.diversity_weight)?;
            let local = rows(g.value(out.local_logits));
            let global = rows(g.value(out.global_logits));
            let predictions = local.iter().zip(&global).map(|(l, gl)| m.predict(l, gl)).collect();
            Ok(StepTerms { loss, breakdown, d_sp, d_ch, d_branch, logits: vec![out.local_logits, out.global_logits], predictions })
        }
    }
}

/// Metrics of one epoch. Loss and diversity values are means over its batches.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub branch_count: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    pub loss_total: f64,
    pub loss_cls: f64,
    pub d_sp: Option<f64>,
    pub d_ch: Option<f64>,
    pub d_branch: Option<f64>,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,branch_count,train_acc,test_acc,loss_total,loss_cls,d_sp,d_ch,d_branch";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.branch_count,
            self.train_acc,
            self.test_acc,
            self.loss_total,
            self.loss_cls,
            opt(self.d_sp),
            opt(self.d_ch),
            opt(self.d_branch)
        )
    }
}

/// Accuracy of a model on a dataset.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    /// Majority vote for ensembles, λ-fused prediction for dual-branch models.
    pub accuracy: f64,
    pub per_class: Vec<f64>,
    pub branch_accuracy: Option<Vec<f64>>,
    pub vote_accuracy: Option<f64>,
    pub samples: usize,
}

fn argmax(row: &[f64]) -> usize {
    (0..row.len()).fold(0, |best, i| if row[i] > row[best] { i } else { best })
}

pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<EvalReport> {
    let input = model.input_shape();
    if (dataset.height(), dataset.width()) != (input.height, input.width) || dataset.class_count() != model.class_count() {
        return Err(Error::FamilyMismatch(format!(
            "dataset of {}x{} images with {} classes does not fit a model for {}x{} and {} classes",
            dataset.height(),
            dataset.width(),
            dataset.class_count(),
            input.height,
            input.width,
            model.class_count()
        )));
    }
    let k = model.class_count();
    let branches = match model {
        Model::Ensemble(m) => m.branch_count(),
        Model::Dual(_) => 0,
    };
    let mut correct = 0usize;
    let mut branch_correct = vec![0usize; branches];
    let mut class_total = vec![0usize; k];
    let mut class_correct = vec![0usize; k];
    for batch in dataset.chunks(EVAL_BATCH) {
        let mut g = Graph::no_grad();
        let x = g.constant(batch.images);
        let predictions: Vec<usize> = match model {
            Model::Ensemble(m) => {
                let vars = m.bind(&mut g);
                let out = m.forward(&mut g, &vars, x)?;
                let per_branch: Vec<Vec<&[f64]>> = out.logits.iter().map(|&z| rows(g.value(z))).collect();
                for (b, logits) in per_branch.iter().enumerate() {
                    branch_correct[b] += logits.iter().zip(&batch.labels).filter(|(r, &y)| argmax(r) == y).count();
                }
                (0..batch.labels.len())
                    .map(|i| ensemble_predict(&per_branch.iter().map(|b| b[i]).collect::<Vec<_>>()))
                    .collect()
            }
            Model::Dual(m) => {
                let vars = m.bind(&mut g);
                let out = m.forward(&mut g, &vars, x)?;
                let local = rows(g.value(out.local_logits));
                let global = rows(g.value(out.global_logits));
                local.iter().zip(&global).map(|(l, gl)| m.predict(l, gl)).collect()
            }
        };
        for (&p, &y) in predictions.iter().zip(&batch.labels) {
            class_total[y] += 1;
            if p == y {
                correct += 1;
                class_correct[y] += 1;
            }
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let n = dataset.len();
    let accuracy = frac(correct, n);
    Ok(EvalReport {
        accuracy,
        per_class: class_correct.iter().zip(&class_total).map(|(&c, &t)| frac(c, t)).collect(),
        branch_accuracy: (branches > 0).then(|| branch_correct.iter().map(|&c| frac(c, n)).collect()),
        vote_accuracy: (branches > 0).then_some(accuracy),
        samples: n,
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub records: Vec<EpochRecord>,
}

/// Mini-batch SGD over a train/test split.
#[derive(Debug)]
pub struct Trainer<'a> {
    model: Model,
    split: &'a Split,
    cfg: TrainConfig,
    optimizer: OptimizerState,
    shuffle: ChaCha8Rng,
    records: Vec<EpochRecord>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: Model, split: &'a Split, cfg: TrainConfig) -> Result<Self> {
        cfg.validate(split.train.len())?;
        let optimizer = OptimizerState::new(cfg.learning_rate, cfg.momentum)?;
        let shuffle = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5348_5546_464C_4531);
        Ok(Trainer { model, split, cfg, optimizer, shuffle, records: Vec::new() })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    /// Adds an ensemble branch if the schedule calls for one at `epoch`.
    pub fn grow(&mut self, epoch: usize) -> Result<bool> {
        match &mut self.model {
            Model::Ensemble(m) if grows_at(epoch, self.cfg.branch_add_epochs, m.branch_count(), m.branch_max()) => {
                m.add_branch()?;
                Ok(true)
            }
            _ => Ok(false),
        }
    }

    /// One pass over the training split followed by a test evaluation.
    pub fn run_epoch(&mut self, epoch: usize) -> Result<EpochRecord> {
        let order_seed = self.shuffle.random::<u64>();
        let mut count = 0usize;
        let mut correct = 0usize;
        let mut sums = [0.0f64; 2];
        let mut d_sums = [(0.0f64, 0usize); 3];
        for (b, batch) in batches(&self.split.train, self.cfg.batch_size, order_seed)?.enumerate() {
            let mut g = Graph::new();
            let terms = forward_loss(&self.model, &mut g, batch.images, &batch.labels, &self.cfg)?;
            if !terms.breakdown.is_finite() {
                return Err(Error::NonFinite { epoch, batch: b, parts: terms.breakdown.to_string() });
            }
            g.backward(terms.loss)?;
            let grads = g.param_grads();
            self.optimizer.step(&mut self.model.params_mut(), &grads)?;

            let bd = &terms.breakdown;
            count += batch.labels.len();
            correct += terms.predictions.iter().zip(&batch.labels).filter(|(p, y)| p == y).count();
            sums[0] += bd.total;
            sums[1] += bd.classification;
            for (slot, v) in d_sums.iter_mut().zip([bd.d_sp, bd.d_ch, bd.d_branch]) {
                if let Some(v) = v {
                    slot.0 += v;
                    slot.1 += 1;
                }
            }
        }
        let steps = self.split.train.len().div_ceil(self.cfg.batch_size) as f64;
        let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
        let record = EpochRecord {
            epoch,
            branch_count: match &self.model {
                Model::Ensemble(m) => m.branch_count(),
                Model::Dual(_) => 1,
            },
            train_acc: correct as f64 / count as f64,
            test_acc: evaluate(&self.model, &self.split.test)?.accuracy,
            loss_total: sums[0] / steps,
            loss_cls: sums[1] / steps,
            d_sp: mean(d_sums[0]),
            d_ch: mean(d_sums[1]),
            d_branch: mean(d_sums[2]),
        };
        self.records.push(record.clone());
        Ok(record)
    }

    /// Runs every epoch, growing the ensemble on schedule.
    pub fn fit(self) -> Result<TrainOutcome> {
        self.fit_with(|_| ())
    }

    /// Like [`Trainer::fit`], calling `on_epoch` after each epoch.
    pub fn fit_with(mut self, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
        for epoch in 0..self.cfg.epochs {
            self.grow(epoch)?;
            let record = self.run_epoch(epoch)?;
            on_epoch(&record);
        }
        Ok(TrainOutcome { model: self.model, records: self.records })
    }
}

/// Flattened pooled lengths `P` seen by the diversity terms, used to resolve `γ = auto`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PooledLengths {
    pub spatial: usize,
    pub channel: usize,
    pub branch: Option<usize>,
}

pub fn pooled_lengths(model: &Model) -> Result<PooledLengths> {
    let input = model.input_shape();
    let mut g = Graph::no_grad();
    let x = g.constant(Tensor::zeros(&[1, input.channels, input.height, input.width]));
    let (last, branch) = match model {
        Model::Ensemble(m) => {
            let vars = m.bind(&mut g);
            (m.forward(&mut g, &vars, x)?.branches[0].last(), None)
        }
        Model::Dual(m) => {
            let vars = m.bind(&mut g);
            let out = m.forward(&mut g, &vars, x)?;
            (out.patch_features[0], Some(g.shape(out.branch_pooled[0])[1]))
        }
    };
    let [_, c, h, w] = *g.shape(last) else { unreachable!("feature maps are 4-d") };
    Ok(PooledLengths { spatial: h * w, channel: c, branch })
}
