//! Synthetic class-conditional images, the DVDS file format, and batching.
//!
//! Every class has a fixed template made of Gaussian bumps. A sample is its
//! class template plus pixel noise, optionally with a zeroed square pasted
//! over it, clamped to `[0, 1]`.

mod format;

pub use format::{load_dataset, read_dataset, save_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const IMAGE_SIZE: usize = 32;

const TEMPLATE_SEED: u64 = 0x7E3A_91C5_0D2B_44F1;
const BUMP_WIDTH: f64 = 2.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub class_count: usize,
    pub samples_per_class: usize,
    pub noise_sigma: f64,
    pub occlusion_prob: f64,
    pub occlusion_size: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            class_count: 8,
            samples_per_class: 100,
            noise_sigma: 0.15,
            occlusion_prob: 0.3,
            occlusion_size: 8,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::config("class_count", "need at least 2 classes"));
        }
        if self.samples_per_class == 0 {
            return Err(Error::config("samples_per_class", "must be positive"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::config("noise_sigma", format!("{} is not a non-negative real", self.noise_sigma)));
        }
        if !(0.0..=1.0).contains(&self.occlusion_prob) {
            return Err(Error::config("occlusion_prob", format!("{} outside [0, 1]", self.occlusion_prob)));
        }
        if self.occlusion_size >= IMAGE_SIZE {
            return Err(Error::config("occlusion_size", format!("{} must be below {IMAGE_SIZE}", self.occlusion_size)));
        }
        Ok(())
    }
}

/// Labelled single-channel images, stored as `f64` with `f32` precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    class_count: usize,
    height: usize,
    width: usize,
    labels: Vec<usize>,
    images: Vec<f64>,
}

impl Dataset {
    pub fn new(class_count: usize, height: usize, width: usize, labels: Vec<usize>, images: Vec<f64>) -> Result<Self> {
        if images.len() != labels.len() * height * width {
            return Err(Error::invalid(
                "dataset",
                format!("{} pixels for {} images of {height}x{width}", images.len(), labels.len()),
            ));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::LabelOutOfRange { label, classes: class_count });
        }
        Ok(Dataset { class_count, height, width, labels, images })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn images(&self) -> &[f64] {
        &self.images
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let px = self.height * self.width;
        &self.images[i * px..(i + 1) * px]
    }

    /// Stacks the given samples into an `(n, 1, H, W)` tensor.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        let mut data = Vec::with_capacity(indices.len() * self.height * self.width);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let images = Tensor::new(vec![indices.len(), 1, self.height, self.width], data).expect("sizes agree");
        Batch { images, labels: indices.iter().map(|&i| self.labels[i]).collect() }
    }

    /// The whole dataset in storage order, in chunks of `batch_size`.
    pub fn chunks(&self, batch_size: usize) -> impl Iterator<Item = Batch> + '_ {
        let idx: Vec<usize> = (0..self.len()).collect();
        let size = batch_size.max(1);
        (0..self.len().div_ceil(size)).map(move |b| self.gather(&idx[b * size..((b + 1) * size).min(idx.len())]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

/// Noise-free template of class `k`: `k + 1` bumps at class-specific positions.
pub fn class_template(k: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(TEMPLATE_SEED ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let centres: Vec<(f64, f64)> =
        (0..=k).map(|_| (rng.random_range(4.0..28.0), rng.random_range(4.0..28.0))).collect();
    let mut img = vec![0.0; IMAGE_SIZE * IMAGE_SIZE];
    for (i, px) in img.iter_mut().enumerate() {
        let (y, x) = ((i / IMAGE_SIZE) as f64, (i % IMAGE_SIZE) as f64);
        let v: f64 = centres
            .iter()
            .map(|(cy, cx)| (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * BUMP_WIDTH * BUMP_WIDTH)).exp())
            .sum();
        *px = v.min(1.0) as f32 as f64;
    }
    img
}

pub fn generate(config: &GeneratorConfig) -> Result<Split> {
    config.validate()?;
    let templates: Vec<Vec<f64>> = (0..config.class_count).map(class_template).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_sigma).map_err(|e| Error::config("noise_sigma", e.to_string()))?;
    let (mut train, mut test) = ((Vec::new(), Vec::new()), (Vec::new(), Vec::new()));
    for j in 0..config.samples_per_class {
        for (k, template) in templates.iter().enumerate() {
            let mut img = template.clone();
            if config.noise_sigma > 0.0 {
                img.iter_mut().for_each(|p| *p += noise.sample(&mut rng));
            }
            if config.occlusion_size > 0 && rng.random_bool(config.occlusion_prob) {
                let top = rng.random_range(0..=IMAGE_SIZE - config.occlusion_size);
                let left = rng.random_range(0..=IMAGE_SIZE - config.occlusion_size);
                for y in top..top + config.occlusion_size {
                    img[y * IMAGE_SIZE + left..y * IMAGE_SIZE + left + config.occlusion_size].fill(0.0);
                }
            }
            img.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0) as f32 as f64);
            let (labels, images) = if j % 5 == 4 { &mut test } else { &mut train };
            labels.push(k);
            images.extend(img);
        }
    }
    Ok(Split {
        train: Dataset::new(config.class_count, IMAGE_SIZE, IMAGE_SIZE, train.0, train.1)?,
        test: Dataset::new(config.class_count, IMAGE_SIZE, IMAGE_SIZE, test.0, test.1)?,
    })
}

/// A seeded shuffle of the dataset cut into batches; the last may be short.
pub fn batches(dataset: &Dataset, batch_size: usize, shuffle_seed: u64) -> Result<impl Iterator<Item = Batch> + '_> {
    if batch_size == 0 || batch_size > dataset.len() {
        return Err(Error::invalid(
            "batches",
            format!("batch size {batch_size} outside [1, {}]", dataset.len()),
        ));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    let count = order.len().div_ceil(batch_size);
    Ok((0..count).map(move |b| dataset.gather(&order[b * batch_size..((b + 1) * batch_size).min(order.len())])))
}
