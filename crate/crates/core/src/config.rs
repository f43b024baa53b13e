//! Experiment configuration documents.

use crate::arch::{DualBranchModel, EnsembleModel, InputShape, Model, ModelFamily};
use crate::diversity::{DiversityConfig, Gamma, Pooling};
use crate::error::{Error, Result};
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

pub const DEFAULT_LAMBDA: f64 = 0.6;
pub const DEFAULT_BRANCH_MAX: usize = 3;
pub const DEFAULT_BRANCH_ADD_EPOCHS: usize = 2;

/// One training run. Missing fields take their defaults; unknown fields are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model_family: ModelFamily,
    pub class_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branch_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branch_add_epochs: Option<usize>,
    pub attention_enabled: bool,
    pub diversity_spatial: bool,
    pub diversity_channel: bool,
    pub diversity_weight: f64,
    pub gamma: Gamma,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Directory holding `train.dvds` and `test.dvds`.
    pub dataset_path: PathBuf,
    pub output_dir: PathBuf,
    pub pooling: Pooling,
    pub normalize_features: bool,
    pub diversity_all_layers: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model_family: ModelFamily::Ensemble,
            class_count: 8,
            branch_max: None,
            branch_add_epochs: None,
            attention_enabled: true,
            diversity_spatial: true,
            diversity_channel: true,
            diversity_weight: 1.0,
            gamma: Gamma::Auto,
            lambda: None,
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
            dataset_path: PathBuf::from("data"),
            output_dir: PathBuf::from("runs"),
            pooling: Pooling::Mean,
            normalize_features: false,
            diversity_all_layers: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.starts_with("unknown field") || msg.starts_with("missing field"))
                .unwrap_or("config");
            Error::config(field, msg.clone())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let ensemble = self.model_family == ModelFamily::Ensemble;
        if self.class_count < 2 {
            return Err(Error::config("class_count", "need at least 2 classes"));
        }
        if !ensemble {
            if self.branch_max.is_some() {
                return Err(Error::config("branch_max", "only valid for the ensemble family"));
            }
            if self.branch_add_epochs.is_some() {
                return Err(Error::config("branch_add_epochs", "only valid for the ensemble family"));
            }
            if self.diversity_all_layers {
                return Err(Error::config("diversity_all_layers", "only valid for the ensemble family"));
            }
        } else if self.lambda.is_some() {
            return Err(Error::config("lambda", "only valid for the dual_branch family"));
        }
        if self.branch_max == Some(0) {
            return Err(Error::config("branch_max", "must be at least 1"));
        }
        if self.branch_add_epochs == Some(0) {
            return Err(Error::config("branch_add_epochs", "must be at least 1"));
        }
        if let Some(l) = self.lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::config("lambda", format!("{l} outside [0, 1]")));
            }
        }
        if let Gamma::Fixed(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::config("gamma", format!("must be positive or \"auto\", got {g}")));
            }
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.diversity_weight >= 0.0 && self.diversity_weight.is_finite()) {
            return Err(Error::config("diversity_weight", format!("must be non-negative, got {}", self.diversity_weight)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", format!("must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", format!("{} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }

    pub fn branch_max(&self) -> usize {
        self.branch_max.unwrap_or(DEFAULT_BRANCH_MAX)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(DEFAULT_LAMBDA)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            diversity_spatial: self.diversity_spatial,
            diversity_channel: self.diversity_channel,
            diversity_weight: self.diversity_weight,
            diversity: DiversityConfig { gamma: self.gamma, pooling: self.pooling, normalize: self.normalize_features },
            all_layers: self.diversity_all_layers,
            branch_add_epochs: self.branch_add_epochs.unwrap_or(DEFAULT_BRANCH_ADD_EPOCHS),
            seed: self.seed,
        }
    }

    /// A freshly initialised model for this config, seeded from `seed`.
    pub fn build_model(&self, input: InputShape) -> Result<Model> {
        Ok(match self.model_family {
            ModelFamily::Ensemble => Model::Ensemble(EnsembleModel::new(
                input,
                self.class_count,
                self.branch_max(),
                self.attention_enabled,
                self.seed,
            )?),
            ModelFamily::DualBranch => Model::Dual(DualBranchModel::new(
                input,
                self.class_count,
                self.lambda(),
                self.attention_enabled,
                self.seed,
            )?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(text: &str) -> String {
        match ExperimentConfig::from_json(text) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn defaults_and_round_trip() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert!(cfg.to_json().contains(r#""gamma":"auto""#));
    }

    #[test]
    fn family_specific_fields() {
        assert_eq!(field_of(r#"{"model_family": "dual_branch", "branch_max": 3}"#), "branch_max");
        assert_eq!(field_of(r#"{"model_family": "ensemble", "lambda": 0.6}"#), "lambda");
        let dual = ExperimentConfig::from_json(r#"{"model_family": "dual_branch", "lambda": 0.6}"#).unwrap();
        assert_eq!(dual.lambda(), 0.6);
        assert!(dual.to_json().contains(r#""lambda":0.6"#));
        assert!(matches!(dual.build_model(InputShape::default()).unwrap(), Model::Dual(_)));
    }

    #[test]
    fn field_errors() {
        assert_eq!(field_of(r#"{"momentum": 1.0}"#), "momentum");
        assert_eq!(field_of(r#"{"gamma": -1}"#), "gamma");
        assert_eq!(field_of(r#"{"epochs": 0}"#), "epochs");
        assert_eq!(field_of(r#"{"model_family": "dual_branch", "lambda": 2}"#), "lambda");
        assert_eq!(field_of(r#"{"learnig_rate": 0.1}"#), "learnig_rate");
        assert_eq!(field_of(r#"{"diversity_weight": -1}"#), "diversity_weight");
    }

    #[test]
    fn train_config_mapping() {
        let cfg = ExperimentConfig::from_json(r#"{"gamma": 0.5, "branch_add_epochs": 1, "seed": 4}"#).unwrap();
        let t = cfg.train_config();
        assert_eq!(t.diversity.gamma, Gamma::Fixed(0.5));
        assert_eq!((t.branch_add_epochs, t.seed), (1, 4));
    }
}
