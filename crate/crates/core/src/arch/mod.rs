//! Model families: a shared-base ensemble with per-layer attention, and a
//! dual-branch global/local model that splits its backbone map into patches.

mod checkpoint;
mod dual;
mod ensemble;
mod patch;
mod stack;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dual::{DualBranchModel, DualOutput, DualVars, LOCAL_PATCHES};
pub use ensemble::{ensemble_predict, EnsembleBranch, EnsembleModel, EnsembleOutput, EnsembleVars};
pub use patch::{patchify, unpatchify};
pub use stack::{ConvStack, SharedBase, StackOutput};

use crate::nn::Parameters;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Channel/size plan of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for InputShape {
    fn default() -> Self {
        InputShape { channels: 1, height: 32, width: 32 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Ensemble,
    DualBranch,
}

/// Either model family.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Ensemble(EnsembleModel),
    Dual(DualBranchModel),
}

impl Model {
    pub fn family(&self) -> ModelFamily {
        match self {
            Model::Ensemble(_) => ModelFamily::Ensemble,
            Model::Dual(_) => ModelFamily::DualBranch,
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            Model::Ensemble(m) => m.class_count(),
            Model::Dual(m) => m.class_count(),
        }
    }

    pub fn input_shape(&self) -> InputShape {
        match self {
            Model::Ensemble(m) => m.input_shape(),
            Model::Dual(m) => m.input_shape(),
        }
    }
}

impl Parameters for Model {
    fn params(&self) -> Vec<&Tensor> {
        match self {
            Model::Ensemble(m) => m.params(),
            Model::Dual(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Model::Ensemble(m) => m.params_mut(),
            Model::Dual(m) => m.params_mut(),
        }
    }
}

/// Derives an independent RNG seed for component `index` of a run.
pub(crate) fn component_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
