use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierConfig, LrSchedule, Normalization, Pooling, PositionalEncoding};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloatRange {
    pub low: f64,
    pub high: f64,
    #[serde(default)]
    pub log: bool,
}

impl FloatRange {
    pub fn uniform(low: f64, high: f64) -> Self {
        FloatRange { low, high, log: false }
    }

    pub fn log_uniform(low: f64, high: f64) -> Self {
        FloatRange { low, high, log: true }
    }

    /// Bounds in the space the sampler works in (log space when `log`).
    pub fn internal_bounds(&self) -> (f64, f64) {
        if self.log {
            (self.low.ln(), self.high.ln())
        } else {
            (self.low, self.high)
        }
    }

    pub fn to_internal(&self, v: f64) -> f64 {
        if self.log {
            v.ln()
        } else {
            v
        }
    }

    pub fn from_internal(&self, v: f64) -> f64 {
        let x = if self.log { v.exp() } else { v };
        x.clamp(self.low, self.high)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.low.is_finite() && self.high.is_finite() && self.low <= self.high) {
            return Err(Error::Config(format!("{name}: empty range [{}, {}]", self.low, self.high)));
        }
        if self.log && self.low <= 0.0 {
            return Err(Error::Config(format!("{name}: log range must be positive")));
        }
        Ok(())
    }
}

/// Domain of every searched classifier parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub learning_rate: FloatRange,
    pub num_layers: Vec<usize>,
    pub num_heads: Vec<usize>,
    pub hidden_dim: Vec<usize>,
    pub dropout: FloatRange,
    pub weight_decay: FloatRange,
    pub batch_size: Vec<usize>,
    pub use_projection: Vec<bool>,
    pub projection_dim: Vec<usize>,
    pub pooling: Vec<Pooling>,
    pub positional_encoding: Vec<PositionalEncoding>,
    pub normalization: Vec<Normalization>,
    pub lr_schedule: Vec<LrSchedule>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            learning_rate: FloatRange::log_uniform(1e-5, 1e-2),
            num_layers: vec![1, 2, 3, 4],
            num_heads: vec![2, 4, 8],
            hidden_dim: vec![64, 128, 256, 512],
            dropout: FloatRange::uniform(0.0, 0.5),
            weight_decay: FloatRange::log_uniform(1e-6, 1e-2),
            batch_size: vec![8, 16, 32],
            use_projection: vec![true, false],
            projection_dim: vec![128, 256, 512],
            pooling: vec![Pooling::MaskWeightedMean, Pooling::LearnableAttention],
            positional_encoding: vec![
                PositionalEncoding::Sinusoidal,
                PositionalEncoding::Learned,
                PositionalEncoding::None,
            ],
            normalization: vec![Normalization::PreNorm, Normalization::PostNorm],
            lr_schedule: vec![LrSchedule::Constant, LrSchedule::CosineDecay, LrSchedule::StepDecay],
        }
    }
}

/// Shape of one search dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dimension {
    Float(FloatRange),
    Categorical(usize),
}

/// A point in the space: a float for ranges, a choice index for
/// categorical parameters, in [`SearchSpace::dimensions`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamValue {
    Float(f64),
    Index(usize),
}

pub const PARAM_NAMES: [&str; 13] = [
    "learning_rate",
    "num_layers",
    "num_heads",
    "hidden_dim",
    "dropout",
    "weight_decay",
    "batch_size",
    "use_projection",
    "projection_dim",
    "pooling",
    "positional_encoding",
    "normalization",
    "lr_schedule",
];

fn index_of<T: PartialEq>(choices: &[T], value: &T) -> Option<ParamValue> {
    choices.iter().position(|c| c == value).map(ParamValue::Index)
}

impl SearchSpace {
    pub fn dimensions(&self) -> [Dimension; 13] {
        use Dimension::*;
        [
            Float(self.learning_rate),
            Categorical(self.num_layers.len()),
            Categorical(self.num_heads.len()),
            Categorical(self.hidden_dim.len()),
            Float(self.dropout),
            Float(self.weight_decay),
            Categorical(self.batch_size.len()),
            Categorical(self.use_projection.len()),
            Categorical(self.projection_dim.len()),
            Categorical(self.pooling.len()),
            Categorical(self.positional_encoding.len()),
            Categorical(self.normalization.len()),
            Categorical(self.lr_schedule.len()),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, dim) in PARAM_NAMES.iter().zip(self.dimensions()) {
            match dim {
                Dimension::Float(r) => r.validate(name)?,
                Dimension::Categorical(0) => return Err(Error::Config(format!("{name}: no choices"))),
                Dimension::Categorical(_) => {}
            }
        }
        if self.dropout.low < 0.0 || self.dropout.high >= 1.0 {
            return Err(Error::Config("dropout range must lie in [0, 1)".into()));
        }
        let counts = [&self.num_layers, &self.num_heads, &self.hidden_dim, &self.batch_size, &self.projection_dim];
        if counts.iter().any(|c| c.contains(&0)) {
            return Err(Error::Config("count parameters must be at least 1".into()));
        }
        Ok(())
    }

    /// Applies a point to `base`, which supplies everything not searched.
    pub fn config_at(&self, point: &[ParamValue], base: &ClassifierConfig) -> ClassifierConfig {
        let f = |i: usize| match point[i] {
            ParamValue::Float(v) => v,
            ParamValue::Index(_) => unreachable!("dimension {i} is continuous"),
        };
        let c = |i: usize| match point[i] {
            ParamValue::Index(k) => k,
            ParamValue::Float(_) => unreachable!("dimension {i} is categorical"),
        };
        ClassifierConfig {
            learning_rate: f(0),
            num_layers: self.num_layers[c(1)],
            num_heads: self.num_heads[c(2)],
            hidden_dim: self.hidden_dim[c(3)],
            dropout: f(4),
            weight_decay: f(5),
            batch_size: self.batch_size[c(6)],
            use_projection: self.use_projection[c(7)],
            projection_dim: self.projection_dim[c(8)],
            pooling: self.pooling[c(9)],
            positional_encoding: self.positional_encoding[c(10)],
            normalization: self.normalization[c(11)],
            lr_schedule: self.lr_schedule[c(12)],
            ..base.clone()
        }
    }

    /// Recovers the point of a config; `None` for values outside the space.
    pub fn point_of(&self, cfg: &ClassifierConfig) -> [Option<ParamValue>; 13] {
        let float = |r: &FloatRange, v: f64| (r.low <= v && v <= r.high).then_some(ParamValue::Float(v));
        [
            float(&self.learning_rate, cfg.learning_rate),
            index_of(&self.num_layers, &cfg.num_layers),
            index_of(&self.num_heads, &cfg.num_heads),
            index_of(&self.hidden_dim, &cfg.hidden_dim),
            float(&self.dropout, cfg.dropout),
            float(&self.weight_decay, cfg.weight_decay),
            index_of(&self.batch_size, &cfg.batch_size),
            index_of(&self.use_projection, &cfg.use_projection),
            index_of(&self.projection_dim, &cfg.projection_dim),
            index_of(&self.pooling, &cfg.pooling),
            index_of(&self.positional_encoding, &cfg.positional_encoding),
            index_of(&self.normalization, &cfg.normalization),
            index_of(&self.lr_schedule, &cfg.lr_schedule),
        ]
    }

    /// Whether `cfg` lies inside every domain.
    pub fn contains(&self, cfg: &ClassifierConfig) -> bool {
        self.point_of(cfg).iter().all(Option::is_some)
    }

    /// One draw from the prior: uniform over each range (in log space for
    /// log ranges) and over each choice list.
    pub fn sample_prior(&self, rng: &mut ChaCha8Rng) -> Vec<ParamValue> {
        self.dimensions()
            .iter()
            .map(|d| match d {
                Dimension::Float(r) => {
                    let (lo, hi) = r.internal_bounds();
                    let u = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
                    ParamValue::Float(r.from_internal(u))
                }
                Dimension::Categorical(n) => ParamValue::Index(rng.gen_range(0..*n)),
            })
            .collect()
    }
}
