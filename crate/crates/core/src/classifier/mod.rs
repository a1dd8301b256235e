//! Transformer encoder classifier over acoustic, text or fused sequences.

mod config;
mod layers;
mod model;
mod train;

use ndarray::Array2;

pub use config::{ClassifierConfig, LrSchedule, Normalization, Pooling, PositionalEncoding};
pub use model::{Checkpoint, Model, TensorRecord, MAX_FRAMES};
pub use train::{log_loss_of, predict, train, TrainHistory};

use crate::labels::Label;

/// A `T × D` feature matrix with a per-frame validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub features: Array2<f64>,
    pub mask: Vec<bool>,
}

impl Sequence {
    /// All frames valid.
    pub fn new(features: Array2<f64>) -> Self {
        let mask = vec![true; features.nrows()];
        Sequence { features, mask }
    }

    pub fn with_mask(features: Array2<f64>, mask: Vec<bool>) -> Self {
        Sequence { features, mask }
    }

    pub fn from_f32(features: &Array2<f32>) -> Self {
        Self::new(features.mapv(f64::from))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub sequence: Sequence,
    pub label: Label,
}

/// Initializes a model from its configuration.
pub fn init_model(cfg: &ClassifierConfig) -> crate::Result<Model> {
    Model::init(cfg)
}

#[cfg(test)]
mod tests;
