//! Determinant-based feature diversity for convolutional classifiers.
//!
//! The crate bundles a small reverse-mode autodiff engine, the neural network
//! layers built on it, the diversity measure (averaged RBF similarities of
//! pooled feature maps, scored by the determinant of the similarity matrix),
//! two model families that use it, a training loop, and a synthetic dataset.

pub mod arch;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod diversity;
pub mod error;
pub mod linalg;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod verify;

pub use autodiff::{grad_check, Graph, Op, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;

pub use arch::{InputShape, Model, ModelFamily};
pub use config::ExperimentConfig;
pub use data::{Batch, Dataset, GeneratorConfig, Split};
pub use diversity::{DiversityConfig, Gamma, PoolKind, Pooling};
pub use train::{EpochRecord, EvalReport, LossBreakdown, TrainConfig, Trainer};
