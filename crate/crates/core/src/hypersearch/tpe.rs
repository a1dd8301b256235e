//! Tree-structured Parzen estimator over independent dimensions.
//!
//! Completed trials are split at the `gamma` quantile of their loss. Each
//! dimension gets a "good" density `l` from the best trials and a "bad"
//! density `g` from the rest; candidates drawn from `l` are ranked by
//! `log l − log g`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::space::{Dimension, FloatRange, ParamValue, SearchSpace};
use super::TrialRecord;
use crate::classifier::ClassifierConfig;
use crate::error::{Error, Result};

/// Attempts at drawing a config that satisfies the classifier invariants.
const MAX_RESAMPLE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TpeSettings {
    /// Trials drawn from the prior before the estimator takes over.
    pub n_startup: usize,
    pub gamma: f64,
    pub n_candidates: usize,
    /// Weight of the prior component in each density.
    pub prior_weight: f64,
}

impl Default for TpeSettings {
    fn default() -> Self {
        TpeSettings {
            n_startup: 20,
            gamma: 0.25,
            n_candidates: 24,
            prior_weight: 1.0,
        }
    }
}

impl TpeSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma {} outside (0, 1)", self.gamma)));
        }
        if self.n_candidates == 0 {
            return Err(Error::Config("n_candidates must be at least 1".into()));
        }
        if !(self.prior_weight > 0.0 && self.prior_weight.is_finite()) {
            return Err(Error::Config("prior_weight must be > 0".into()));
        }
        Ok(())
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Mixture of normals truncated to `[low, high]`, one per observation plus
/// a broad prior component centred on the range.
#[derive(Debug, Clone)]
pub(crate) struct Parzen {
    mus: Vec<f64>,
    sigmas: Vec<f64>,
    weights: Vec<f64>,
    low: f64,
    high: f64,
}

impl Parzen {
    pub(crate) fn new(observations: &[f64], low: f64, high: f64, prior_weight: f64) -> Self {
        let range = high - low;
        let mut sorted: Vec<f64> = observations.iter().map(|v| v.clamp(low, high)).collect();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        // neighbour-distance bandwidth, clipped so that no kernel collapses
        let min_sigma = range / (100f64).min(1.0 + n as f64);
        let mut mus = Vec::with_capacity(n + 1);
        let mut sigmas = Vec::with_capacity(n + 1);
        for (i, &mu) in sorted.iter().enumerate() {
            let left = if i == 0 { low } else { sorted[i - 1] };
            let right = if i + 1 == n { high } else { sorted[i + 1] };
            mus.push(mu);
            sigmas.push((mu - left).max(right - mu).clamp(min_sigma, range));
        }
        mus.push(0.5 * (low + high));
        sigmas.push(range);
        let mut weights = vec![1.0; n];
        weights.push(prior_weight);
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Parzen {
            mus,
            sigmas,
            weights,
            low,
            high,
        }
    }

    pub(crate) fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.high <= self.low {
            return self.low;
        }
        let mut u: f64 = rng.gen();
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            if u < *w {
                k = i;
                break;
            }
            u -= w;
        }
        let normal = Normal::new(self.mus[k], self.sigmas[k]).expect("positive sigma");
        for _ in 0..100 {
            let x = normal.sample(rng);
            if (self.low..=self.high).contains(&x) {
                return x;
            }
        }
        rng.gen_range(self.low..=self.high)
    }

    pub(crate) fn log_pdf(&self, x: f64) -> f64 {
        if self.high <= self.low {
            return 0.0;
        }
        let mut total = 0.0;
        for ((mu, sigma), w) in self.mus.iter().zip(&self.sigmas).zip(&self.weights) {
            let z = (x - mu) / sigma;
            let mass = std_normal_cdf((self.high - mu) / sigma) - std_normal_cdf((self.low - mu) / sigma);
            let pdf = (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            total += w * pdf / mass.max(1e-300);
        }
        total.max(1e-300).ln()
    }
}

/// Smoothed category frequencies.
fn categorical_probs(observations: &[usize], n: usize, prior_weight: f64) -> Vec<f64> {
    let mut counts = vec![prior_weight; n];
    for &o in observations {
        counts[o] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    counts.iter().map(|c| c / total).collect()
}

fn draw_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let mut u: f64 = rng.gen();
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    probs.len() - 1
}

fn float_obs(points: &[[Option<ParamValue>; 13]], d: usize, range: &FloatRange) -> Vec<f64> {
    points
        .iter()
        .filter_map(|p| match p[d] {
            Some(ParamValue::Float(v)) => Some(range.to_internal(v)),
            _ => None,
        })
        .collect()
}

fn index_obs(points: &[[Option<ParamValue>; 13]], d: usize) -> Vec<usize> {
    points
        .iter()
        .filter_map(|p| match p[d] {
            Some(ParamValue::Index(i)) => Some(i),
            _ => None,
        })
        .collect()
}

/// One TPE proposal; `None` entries are never produced.
fn propose(
    space: &SearchSpace,
    good: &[[Option<ParamValue>; 13]],
    bad: &[[Option<ParamValue>; 13]],
    settings: &TpeSettings,
    rng: &mut ChaCha8Rng,
) -> Vec<ParamValue> {
    space
        .dimensions()
        .iter()
        .enumerate()
        .map(|(d, dim)| match dim {
            Dimension::Float(range) => {
                let (lo, hi) = range.internal_bounds();
                let l = Parzen::new(&float_obs(good, d, range), lo, hi, settings.prior_weight);
                let g = Parzen::new(&float_obs(bad, d, range), lo, hi, settings.prior_weight);
                let mut best = (f64::NEG_INFINITY, lo);
                for _ in 0..settings.n_candidates {
                    let x = l.sample(rng);
                    let score = l.log_pdf(x) - g.log_pdf(x);
                    if score > best.0 {
                        best = (score, x);
                    }
                }
                ParamValue::Float(range.from_internal(best.1))
            }
            Dimension::Categorical(n) => {
                let l = categorical_probs(&index_obs(good, d), *n, settings.prior_weight);
                let g = categorical_probs(&index_obs(bad, d), *n, settings.prior_weight);
                let mut best = (f64::NEG_INFINITY, 0);
                for _ in 0..settings.n_candidates {
                    let i = draw_index(&l, rng);
                    let score = l[i].ln() - g[i].ln();
                    if score > best.0 {
                        best = (score, i);
                    }
                }
                ParamValue::Index(best.1)
            }
        })
        .collect()
}

/// Proposes the next configuration given the trial history.
///
/// The first `n_startup` trials (and any trial with fewer than two
/// completed predecessors) are drawn from the prior. Proposals violating
/// the classifier invariants are redrawn. The result depends only on the
/// arguments, so a seeded `rng` and a fixed history reproduce it.
pub fn sample_config(
    space: &SearchSpace,
    base: &ClassifierConfig,
    history: &[TrialRecord],
    settings: &TpeSettings,
    rng: &mut ChaCha8Rng,
) -> Result<ClassifierConfig> {
    space.validate()?;
    settings.validate()?;
    let mut completed: Vec<(&TrialRecord, f64)> = history
        .iter()
        .filter_map(|t| t.completed_loss().map(|l| (t, l)))
        .collect();
    completed.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.trial_id.cmp(&b.0.trial_id)));
    let use_prior = history.len() < settings.n_startup || completed.len() < 2;

    let n_good = ((settings.gamma * completed.len() as f64).ceil() as usize).clamp(1, completed.len().max(2) - 1);
    let points: Vec<[Option<ParamValue>; 13]> = completed.iter().map(|(t, _)| space.point_of(&t.config)).collect();
    let (good, bad) = points.split_at(n_good.min(points.len()));

    for _ in 0..MAX_RESAMPLE {
        let point = if use_prior {
            space.sample_prior(rng)
        } else {
            propose(space, good, bad, settings, rng)
        };
        let cfg = space.config_at(&point, base);
        if cfg.validate().is_ok() {
            return Ok(cfg);
        }
    }
    Err(Error::Config(format!(
        "no valid configuration found in {MAX_RESAMPLE} draws; check head counts against model widths"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypersearch::TrialStatus;
    use crate::rng::stream_rng;

    #[test]
    fn parzen_density_integrates_to_one() {
        let p = Parzen::new(&[0.2, 0.25, 0.9], 0.0, 1.0, 1.0);
        let steps = 20_000;
        let h = 1.0 / steps as f64;
        let integral: f64 = (0..steps).map(|i| p.log_pdf((i as f64 + 0.5) * h).exp() * h).sum();
        assert!((integral - 1.0).abs() < 1e-3, "{integral}");
        let mut rng = stream_rng(0, 0);
        for _ in 0..1000 {
            assert!((0.0..=1.0).contains(&p.sample(&mut rng)));
        }
    }

    #[test]
    fn bandwidth_is_clipped() {
        let p = Parzen::new(&[0.5, 0.5, 0.5], 0.0, 1.0, 1.0);
        assert!(p.sigmas[..3].iter().all(|s| *s >= 0.25 - 1e-12));
        let p = Parzen::new(&vec![0.5; 300], 0.0, 1.0, 1.0);
        // interior kernels sit on their neighbours; the ends reach the bounds
        assert!(p.sigmas[1..299].iter().all(|s| (*s - 0.01).abs() < 1e-12));
        assert_eq!((p.sigmas[0], p.sigmas[299]), (0.5, 0.5));
    }

    #[test]
    fn categorical_prior_smoothing() {
        assert_eq!(categorical_probs(&[], 4, 1.0), vec![0.25; 4]);
        assert_eq!(categorical_probs(&[1, 1], 2, 1.0), vec![0.25, 0.75]);
    }

    #[test]
    fn invalid_combinations_are_resampled() {
        let space = SearchSpace {
            use_projection: vec![false],
            num_heads: vec![3, 4],
            ..SearchSpace::default()
        };
        let base = ClassifierConfig::new(8);
        let mut rng = stream_rng(5, 0);
        for _ in 0..50 {
            let cfg = sample_config(&space, &base, &[], &TpeSettings::default(), &mut rng).unwrap();
            assert_eq!(cfg.num_heads, 4);
        }
        let impossible = SearchSpace {
            use_projection: vec![false],
            num_heads: vec![3],
            ..SearchSpace::default()
        };
        assert!(matches!(
            sample_config(&impossible, &base, &[], &TpeSettings::default(), &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn failed_trials_do_not_shape_the_densities() {
        let space = SearchSpace::default();
        let base = ClassifierConfig::new(16);
        let mut rng = stream_rng(2, 0);
        let history: Vec<TrialRecord> = (0..30)
            .map(|i| TrialRecord {
                trial_id: i,
                config: sample_config(&space, &base, &[], &TpeSettings::default(), &mut rng).unwrap(),
                loss: None,
                status: TrialStatus::Failed,
            })
            .collect();
        // nothing completed: still falls back to the prior
        let cfg = sample_config(&space, &base, &history, &TpeSettings::default(), &mut stream_rng(9, 0)).unwrap();
        assert!(space.contains(&cfg));
    }
}
