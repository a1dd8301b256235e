use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    MaskWeightedMean,
    LearnableAttention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalEncoding {
    Sinusoidal,
    Learned,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    PreNorm,
    PostNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    CosineDecay,
    StepDecay,
}

/// Everything that determines a classifier and its training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub input_dim: usize,
    pub use_projection: bool,
    pub projection_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub pooling: Pooling,
    pub positional_encoding: PositionalEncoding,
    pub normalization: Normalization,
    pub lr_schedule: LrSchedule,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_max_epochs() -> usize {
    200
}

fn default_patience() -> usize {
    15
}

impl ClassifierConfig {
    /// A small model suitable as a starting point for `input_dim`-wide inputs.
    pub fn new(input_dim: usize) -> Self {
        ClassifierConfig {
            input_dim,
            use_projection: true,
            projection_dim: 64,
            num_layers: 2,
            num_heads: 4,
            hidden_dim: 128,
            dropout: 0.1,
            weight_decay: 1e-4,
            learning_rate: 1e-3,
            batch_size: 16,
            pooling: Pooling::MaskWeightedMean,
            positional_encoding: PositionalEncoding::Sinusoidal,
            normalization: Normalization::PreNorm,
            lr_schedule: LrSchedule::Constant,
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            seed: 0,
        }
    }

    /// Width of the encoder stack.
    pub fn model_width(&self) -> usize {
        if self.use_projection {
            self.projection_dim
        } else {
            self.input_dim
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_width() / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("input_dim", self.input_dim),
            ("projection_dim", self.projection_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("hidden_dim", self.hidden_dim),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay {} must be ≥ 0", self.weight_decay)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be > 0",
                self.learning_rate
            )));
        }
        let width = self.model_width();
        if width % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "model width {width} is not divisible by {} heads",
                self.num_heads
            )));
        }
        Ok(())
    }

    /// Learning rate for a 0-based epoch.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::CosineDecay => {
                let progress = epoch as f64 / self.max_epochs as f64;
                self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
            LrSchedule::StepDecay => {
                let step = (self.max_epochs / 4).max(1);
                self.learning_rate * 0.5f64.powi((epoch / step) as i32)
            }
        }
    }
}
