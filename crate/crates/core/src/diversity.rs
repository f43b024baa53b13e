//! Feature diversity of a set of learners.
//!
//! Each learner's feature map `(C, H, W)` is pooled either across channels
//! (spatial pooling, giving `1 × H × W`) or across positions (channel pooling,
//! giving `C × 1 × 1`). For learners `l`, `k` the similarity is the RBF kernel
//! averaged over the `N` samples of a batch,
//!
//! ```text
//! S[l][k] = (1/N) Σ_i exp(-γ ‖φ_l(x_i) − φ_k(x_i)‖²)
//! ```
//!
//! and the diversity of the whole set is `det(S)`: 0 when two learners
//! coincide, approaching 1 as all learners separate.
//!
//! Everything here exists twice. The `*_node` functions record onto a
//! [`Graph`] so the diversity can be trained; the plain functions work on
//! values and serve as independently checkable references.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Which pooling produced a pooled feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    /// Pooled across channels: `1 × H × W`.
    Spatial,
    /// Pooled across positions: `C × 1 × 1`.
    Channel,
}

/// What a [`DiversityScore`] measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Spatial,
    Channel,
    Branch,
}

/// Reduction used by the pooling step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

/// RBF bandwidth: a fixed value, or `1/P` with `P` the flattened pooled length.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Gamma {
    #[default]
    Auto,
    Fixed(f64),
}

impl Gamma {
    pub fn resolve(self, pooled_len: usize) -> f64 {
        match self {
            Gamma::Auto => 1.0 / pooled_len as f64,
            Gamma::Fixed(v) => v,
        }
    }
}

impl Serialize for Gamma {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Gamma::Auto => s.serialize_str("auto"),
            Gamma::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Gamma {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Text(t) if t == "auto" => Ok(Gamma::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected \"auto\" or a number, got {t:?}"))),
            Raw::Number(v) => Ok(Gamma::Fixed(v)),
        }
    }
}

/// Parameters of the averaged RBF similarity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityConfig {
    pub gamma: f64,
    /// Number of samples `N` the similarity is averaged over.
    pub sample_count: usize,
}

impl SimilarityConfig {
    pub fn new(gamma: f64, sample_count: usize) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid("similarity", format!("gamma must be positive, got {gamma}")));
        }
        if sample_count == 0 {
            return Err(Error::invalid("similarity", "sample count must be at least 1"));
        }
        Ok(SimilarityConfig { gamma, sample_count })
    }
}

/// How a model computes its diversity terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DiversityConfig {
    pub gamma: Gamma,
    pub pooling: Pooling,
    /// Scale each pooled feature to unit norm before measuring distances.
    pub normalize: bool,
}

/// Pooled features of one learner over a batch, shape `(N, 1, H, W)` or `(N, C, 1, 1)`.
#[derive(Clone, Copy, Debug)]
pub struct PooledFeature {
    pub learner: usize,
    pub kind: PoolKind,
    pub values: Var,
}

/// Symmetric `L × L` similarity matrix with unit diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl SimilarityMatrix {
    /// Wraps row-major entries, checking symmetry and the unit diagonal.
    pub fn from_entries(size: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != size * size {
            return Err(Error::invalid("similarity", format!("{} entries for size {size}", entries.len())));
        }
        for l in 0..size {
            if entries[l * size + l] != 1.0 {
                return Err(Error::invalid("similarity", format!("diagonal entry {l} is not 1")));
            }
            for k in 0..l {
                if entries[l * size + k] != entries[k * size + l] {
                    return Err(Error::invalid("similarity", format!("entries ({l},{k}) and ({k},{l}) differ")));
                }
            }
        }
        Ok(SimilarityMatrix { size, entries })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, l: usize, k: usize) -> f64 {
        self.entries[l * self.size + k]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

/// `det(S)` tagged with the dimension it was measured on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityScore {
    pub value: f64,
    pub dimension: Dimension,
}

// ---------------------------------------------------------------------------
// value-level reference functions

/// Averaged RBF similarity of per-learner pooled features.
///
/// `pooled[l]` holds learner `l`'s features for all samples, leading axis `N`.
pub fn pairwise_similarity(pooled: &[Tensor], config: &SimilarityConfig) -> Result<SimilarityMatrix> {
    let first = pooled.first().ok_or_else(|| Error::invalid("similarity", "no learners"))?;
    for t in pooled {
        if t.shape() != first.shape() {
            return Err(Error::shape("similarity", &[first.shape(), t.shape()]));
        }
    }
    let n = first.shape()[0];
    if n != config.sample_count {
        return Err(Error::invalid("similarity", format!("{n} samples, expected {}", config.sample_count)));
    }
    let p = first.len() / n;
    let size = pooled.len();
    let mut entries = vec![1.0; size * size];
    for l in 0..size {
        for k in l + 1..size {
            let (a, b) = (pooled[l].data(), pooled[k].data());
            let mut acc = 0.0;
            for i in 0..n {
                let d2: f64 = (i * p..(i + 1) * p).map(|j| (a[j] - b[j]) * (a[j] - b[j])).sum();
                acc += (-config.gamma * d2).exp();
            }
            let s = acc / n as f64;
            entries[l * size + k] = s;
            entries[k * size + l] = s;
        }
    }
    Ok(SimilarityMatrix { size, entries })
}

/// `det(S)` by LU with partial pivoting; an exactly singular `S` scores 0.
pub fn diversity(s: &SimilarityMatrix, dimension: Dimension) -> DiversityScore {
    DiversityScore { value: linalg::det(&s.entries, s.size), dimension }
}

/// `∂det(S)/∂S`, the cofactor matrix (`adj(S)ᵀ`), row-major.
///
/// Built from minors rather than `det(S)·S⁻ᵀ`, so it is exact at singular `S`.
pub fn diversity_grad(s: &SimilarityMatrix) -> Vec<f64> {
    linalg::cofactor_matrix(&s.entries, s.size)
}

// ---------------------------------------------------------------------------
// graph operations

/// Reduces the channel axis: `(C, H, W) -> (1, H, W)`, `(N, C, H, W) -> (N, 1, H, W)`.
pub fn spatial_pool(g: &mut Graph, feature: Var, pooling: Pooling) -> Result<Var> {
    let axis = match g.shape(feature).len() {
        3 => 0,
        4 => 1,
        _ => return Err(Error::shape("spatial_pool", &[g.shape(feature)])),
    };
    match pooling {
        Pooling::Mean => g.mean_axis(feature, axis),
        Pooling::Max => g.max_axis(feature, axis),
    }
}

/// Reduces the spatial axes: `(C, H, W) -> (C, 1, 1)`, `(N, C, H, W) -> (N, C, 1, 1)`.
pub fn channel_pool(g: &mut Graph, feature: Var, pooling: Pooling) -> Result<Var> {
    let shape = g.shape(feature).to_vec();
    let (lead, c, hw): (Vec<usize>, usize, usize) = match shape.as_slice() {
        [c, h, w] => (vec![], *c, h * w),
        [n, c, h, w] => (vec![*n], *c, h * w),
        s => return Err(Error::shape("channel_pool", &[s])),
    };
    let rows = lead.iter().product::<usize>() * c;
    let flat = g.reshape(feature, &[rows, hw])?;
    let pooled = match pooling {
        Pooling::Mean => g.mean_axis(flat, 1)?,
        Pooling::Max => g.max_axis(flat, 1)?,
    };
    let mut out = lead;
    out.extend([c, 1, 1]);
    g.reshape(pooled, &out)
}

fn check_kind(g: &Graph, f: &PooledFeature) -> Result<()> {
    let ok = matches!(
        (f.kind, g.shape(f.values)),
        (PoolKind::Spatial, [_, 1, _, _]) | (PoolKind::Channel, [_, _, 1, 1])
    );
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(
            "similarity",
            format!("learner {} has shape {:?}, not a {:?} pooled feature", f.learner, g.shape(f.values), f.kind),
        ))
    }
}

/// Records the `L × L` similarity matrix of `pooled` onto the graph.
///
/// The diagonal is the constant 1; each off-diagonal value is computed once
/// and placed at both `(l, k)` and `(k, l)`.
pub fn similarity_node(g: &mut Graph, pooled: &[PooledFeature], config: &SimilarityConfig, normalize: bool) -> Result<Var> {
    let first = pooled.first().ok_or_else(|| Error::invalid("similarity", "no learners"))?;
    let shape = g.shape(first.values).to_vec();
    for f in pooled {
        check_kind(g, f)?;
        if f.kind != first.kind {
            return Err(Error::invalid("similarity", "learners mix spatial and channel features"));
        }
        if g.shape(f.values) != shape.as_slice() {
            return Err(Error::shape("similarity", &[&shape, g.shape(f.values)]));
        }
    }
    let n = shape[0];
    if n != config.sample_count {
        return Err(Error::invalid("similarity", format!("{n} samples, expected {}", config.sample_count)));
    }
    let p = shape[1..].iter().product::<usize>();

    let mut rows = Vec::with_capacity(pooled.len());
    for f in pooled {
        let r = g.reshape(f.values, &[n, p])?;
        rows.push(if normalize { g.normalize_rows(r)? } else { r });
    }
    let size = pooled.len();
    let one = g.constant(Tensor::vector(vec![1.0]));
    let mut cells = vec![one; size * size];
    for l in 0..size {
        for k in l + 1..size {
            let d = g.sub(rows[l], rows[k])?;
            let d2 = g.mul(d, d)?;
            let d2 = g.sum_axis(d2, 1)?;
            let z = g.scale(d2, -config.gamma)?;
            let e = g.exp(z)?;
            let s = g.mean(e)?;
            cells[l * size + k] = s;
            cells[k * size + l] = s;
        }
    }
    let flat = g.concat(&cells, 0)?;
    g.reshape(flat, &[size, size])
}

/// Records `det(S)`.
pub fn diversity_node(g: &mut Graph, similarity: Var) -> Result<Var> {
    g.det(similarity)
}

/// Reads a recorded similarity matrix back as a value.
pub fn similarity_value(g: &Graph, similarity: Var) -> Result<SimilarityMatrix> {
    let size = g.shape(similarity)[0];
    SimilarityMatrix::from_entries(size, g.value(similarity).data().to_vec())
}

/// Pools every input of `inputs` with `kind` and records `det(S)` over them.
///
/// `inputs` are per-learner `(N, C, H, W)` batches.
pub fn pooled_diversity_node(g: &mut Graph, inputs: &[Var], kind: PoolKind, config: &DiversityConfig) -> Result<Var> {
    let mut pooled = Vec::with_capacity(inputs.len());
    for (learner, &x) in inputs.iter().enumerate() {
        let values = match kind {
            PoolKind::Spatial => spatial_pool(g, x, config.pooling)?,
            PoolKind::Channel => channel_pool(g, x, config.pooling)?,
        };
        pooled.push(PooledFeature { learner, kind, values });
    }
    let first = g.shape(pooled[0].values).to_vec();
    let sim = SimilarityConfig::new(config.gamma.resolve(first[1..].iter().product()), first[0])?;
    let s = similarity_node(g, &pooled, &sim, config.normalize)?;
    diversity_node(g, s)
}

/// Spatial and channel diversity of per-learner feature batches `(N, C, H, W)`.
#[derive(Clone, Copy, Debug)]
pub struct DiversityPair {
    pub spatial: Var,
    pub channel: Var,
}

pub fn diversity_from_features(g: &mut Graph, features: &[Var], config: &DiversityConfig) -> Result<DiversityPair> {
    Ok(DiversityPair {
        spatial: pooled_diversity_node(g, features, PoolKind::Spatial, config)?,
        channel: pooled_diversity_node(g, features, PoolKind::Channel, config)?,
    })
}
