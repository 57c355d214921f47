//! Optimization, checkpointing and seeded ensembles.

mod checkpoint;
mod ensemble;
mod optim;
mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Period};
use crate::grad::GradError;
use crate::model::ModelError;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use ensemble::{
    predict, read_predictions, run_ensemble, write_loss_log, write_predictions, EnsembleOutput, MemberOutput,
    PredictionRow,
};
pub use optim::{adam_step, clip_grad_norm, cosine_lr, make_param_groups, AdamState, GroupId, LearningRates, ParamGroup};
pub use trainer::{train, EpochLog, TrainOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid train config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("parameter {0} has no gradient")]
    MissingGradient(String),
    #[error("parameter {0} is not assigned to any optimizer group")]
    OrphanParameter(String),
    #[error("parameter {0} is assigned to more than one optimizer group")]
    DuplicateParameter(String),
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("no training samples")]
    NoSamples,
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: String, detail: String },
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean squared error on standardized discharge.
    Mse,
    /// Squared error weighted per basin by `1 / (std_b + 0.1)^2`, where
    /// `std_b` is the basin's standardized-target standard deviation.
    BasinNse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub epochs_scheduler: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub lr_dt: f64,
    pub weight_decay: f64,
    pub wd: f64,
    pub seeds: Vec<u64>,
    pub loss: LossKind,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub train_period: Period,
    pub test_period: Period,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            epochs_scheduler: 50,
            batch_size: 128,
            lr: 4e-4,
            lr_min: 4e-5,
            lr_dt: 1e-3,
            weight_decay: 3e-2,
            wd: 2e-2,
            seeds: (1..=8).collect(),
            loss: LossKind::Mse,
            clip_norm: Some(1.0),
            train_period: Period::default_train(),
            test_period: Period::default_test(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let mut problems = Vec::new();
        if self.epochs == 0 {
            problems.push("epochs must be positive".to_string());
        }
        if self.epochs_scheduler == 0 {
            problems.push("epochs_scheduler must be positive".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".to_string());
        }
        for (name, v) in [("lr", self.lr), ("lr_min", self.lr_min), ("lr_dt", self.lr_dt)] {
            if !(v > 0.0 && v.is_finite()) {
                problems.push(format!("{name} must be positive, got {v}"));
            }
        }
        if self.lr_min > self.lr {
            problems.push(format!("lr_min ({}) exceeds lr ({})", self.lr_min, self.lr));
        }
        for (name, v) in [("weight_decay", self.weight_decay), ("wd", self.wd)] {
            if !(v >= 0.0 && v.is_finite()) {
                problems.push(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.seeds.is_empty() {
            problems.push("at least one seed is required".to_string());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            problems.push("seeds must be distinct".to_string());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                problems.push(format!("clip_norm must be positive, got {c}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(TrainError::InvalidConfig(problems))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.epochs_scheduler, c.batch_size), (50, 50, 128));
        assert_eq!((c.lr, c.lr_min, c.lr_dt), (4e-4, 4e-5, 1e-3));
        assert_eq!((c.weight_decay, c.wd), (3e-2, 2e-2));
        assert_eq!(c.seeds.len(), 8);
        assert_eq!(c.loss, LossKind::Mse);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn validation_collects_problems() {
        let c = TrainConfig {
            lr_min: 1.0,
            seeds: vec![1, 1],
            batch_size: 0,
            ..TrainConfig::default()
        };
        match c.validate().unwrap_err() {
            TrainError::InvalidConfig(v) => assert_eq!(v.len(), 3, "{v:?}"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = TrainConfig {
            loss: LossKind::BasinNse,
            ..TrainConfig::default()
        };
        let text = toml::to_string(&c).unwrap();
        assert!(text.contains("loss = \"basin_nse\""));
        assert!(text.contains("1999-10-01"));
        let back: TrainConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert!(toml::from_str::<TrainConfig>("epoch = 3").is_err());
    }
}
