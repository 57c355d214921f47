//! Diagonal state space models for daily rainfall-runoff simulation:
//! autodiff, S4D layers, the deep model, data pipeline, training and
//! hydrologic evaluation.

pub mod grad;
pub mod s4d;
pub mod model;
pub mod data;
pub mod train;
pub mod eval;
pub mod selfcheck;

pub use data::{BasinRecord, DataDir, DataError, Normalizer, Period, WindowedDataset};
pub use eval::{EvalError, MetricReport, Metrics, SignatureSet};
pub use grad::{GradError, Tape, Tensor};
pub use model::{build_model, DeepSsmModel, ModelConfig, ModelError};
pub use s4d::{DiagonalSsm, DtBounds, S4dError};
pub use train::{Checkpoint, PredictionRow, TrainConfig, TrainError};
