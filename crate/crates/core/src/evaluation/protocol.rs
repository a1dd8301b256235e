use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{log_loss, macro_f1, predictions};
use super::split::{stratified_split, Partition, DEFAULT_RATIOS};
use crate::classifier::{predict, train, ClassifierConfig, LabeledSequence, Model, TrainHistory};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fusion::{late_fuse, ClassPosterior};
use crate::labels::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    AcousticOnly,
    TextOnly,
    EarlyFusion,
    LateFusion,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::AcousticOnly,
        Strategy::TextOnly,
        Strategy::EarlyFusion,
        Strategy::LateFusion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::AcousticOnly => "acoustic_only",
            Strategy::TextOnly => "text_only",
            Strategy::EarlyFusion => "early_fusion",
            Strategy::LateFusion => "late_fusion",
        }
    }

    /// Whether results depend on the acoustic layer.
    pub fn uses_layer(self) -> bool {
        self != Strategy::TextOnly
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "acoustic_only" | "acoustic" | "a" => Ok(Strategy::AcousticOnly),
            "text_only" | "text" | "t" => Ok(Strategy::TextOnly),
            "early_fusion" | "ef" => Ok(Strategy::EarlyFusion),
            "late_fusion" | "lf" => Ok(Strategy::LateFusion),
            other => Err(Error::parse("strategy", format!("unknown strategy {other:?}"))),
        }
    }
}

/// Classifier configuration per trained model type. Late fusion combines
/// the acoustic and text models. `input_dim` and `seed` are overwritten
/// from the data and the evaluation seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigSet {
    pub acoustic_only: ClassifierConfig,
    pub text_only: ClassifierConfig,
    pub early_fusion: ClassifierConfig,
}

impl ConfigSet {
    pub fn shared(cfg: ClassifierConfig) -> Self {
        ConfigSet {
            acoustic_only: cfg.clone(),
            text_only: cfg.clone(),
            early_fusion: cfg,
        }
    }

    pub fn get(&self, strategy: Strategy) -> Result<&ClassifierConfig> {
        match strategy {
            Strategy::AcousticOnly => Ok(&self.acoustic_only),
            Strategy::TextOnly => Ok(&self.text_only),
            Strategy::EarlyFusion => Ok(&self.early_fusion),
            Strategy::LateFusion => Err(Error::Argument("late fusion trains no model of its own".into())),
        }
    }
}

pub fn default_seeds() -> Vec<u64> {
    (1..=10).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub seeds: Vec<u64>,
    pub ratios: [f64; 3],
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            seeds: default_seeds(),
            ratios: DEFAULT_RATIOS,
        }
    }
}

/// One trained model's posteriors for every recording of the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRun {
    pub posteriors: Vec<ClassPosterior>,
    pub history: Option<TrainHistory>,
}

pub type RunResult = std::result::Result<ModelRun, String>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionMetrics {
    pub f1: f64,
    pub log_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionBreakdown {
    pub train: PartitionMetrics,
    pub validation: PartitionMetrics,
    pub test: PartitionMetrics,
}

impl PartitionBreakdown {
    pub fn get(&self, partition: Partition) -> PartitionMetrics {
        match partition {
            Partition::Train => self.train,
            Partition::Validation => self.validation,
            Partition::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics: Option<PartitionBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub best_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stopped_epoch: Option<usize>,
}

/// Per-seed results of one (strategy, layer) cell and their means. The
/// headline `mean_f1` and `mean_log_loss` are test-partition means over the
/// completed seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: Strategy,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub layer: Option<u8>,
    pub seeds: Vec<SeedOutcome>,
    pub completed: usize,
    /// Some seed failed; means cover the completed seeds only.
    pub incomplete: bool,
    pub mean_f1: Option<f64>,
    pub mean_log_loss: Option<f64>,
    pub partition_means: Option<PartitionBreakdown>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn assemble(strategy: Strategy, layer: Option<u8>, seeds: Vec<SeedOutcome>) -> Self {
        let done: Vec<&PartitionBreakdown> = seeds.iter().filter_map(|s| s.metrics.as_ref()).collect();
        let completed = done.len();
        let mean = |f: &dyn Fn(&PartitionBreakdown) -> f64| done.iter().map(|m| f(m)).sum::<f64>() / completed as f64;
        let partition_means = (completed > 0).then(|| {
            let pm = |p: Partition| PartitionMetrics {
                f1: mean(&|m| m.get(p).f1),
                log_loss: mean(&|m| m.get(p).log_loss),
            };
            PartitionBreakdown {
                train: pm(Partition::Train),
                validation: pm(Partition::Validation),
                test: pm(Partition::Test),
            }
        });
        if completed < seeds.len() {
            warn!(
                "{strategy} layer {layer:?}: {} of {} seeds failed",
                seeds.len() - completed,
                seeds.len()
            );
        }
        EvalReport {
            strategy,
            layer,
            completed,
            incomplete: completed < seeds.len(),
            mean_f1: partition_means.map(|m| m.test.f1),
            mean_log_loss: partition_means.map(|m| m.test.log_loss),
            partition_means,
            seeds,
        }
    }
}

/// Per-seed splits of one dataset, shared by every strategy and layer so
/// that all models of a seed see the same partitions.
pub struct Protocol<'a> {
    dataset: &'a Dataset,
    labels: Vec<Label>,
    splits: Vec<(u64, Vec<Partition>)>,
}

impl<'a> Protocol<'a> {
    pub fn new(dataset: &'a Dataset, options: &EvalOptions) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Argument("empty dataset".into()));
        }
        if options.seeds.is_empty() {
            return Err(Error::Argument("no evaluation seeds".into()));
        }
        let items = dataset.split_items();
        let mut splits = Vec::with_capacity(options.seeds.len());
        for &seed in &options.seeds {
            let split = stratified_split(&items, options.ratios, seed)?;
            let parts: Vec<Partition> = dataset
                .ids()
                .iter()
                .map(|id| split.partition(id).expect("every recording is assigned"))
                .collect();
            for p in [Partition::Train, Partition::Validation] {
                if !parts.contains(&p) {
                    return Err(Error::Argument(format!(
                        "seed {seed}: the {} partition is empty",
                        p.as_str()
                    )));
                }
            }
            splits.push((seed, parts));
        }
        Ok(Protocol {
            dataset,
            labels: dataset.labels(),
            splits,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.splits.iter().map(|s| s.0).collect()
    }

    pub fn partitions(&self, seed: u64) -> Option<&[Partition]> {
        self.splits.iter().find(|s| s.0 == seed).map(|s| s.1.as_slice())
    }

    /// Trains one model per seed on that seed's split. Failures are
    /// recorded per seed rather than aborting the run. Seeds train in
    /// parallel; results stay in seed order.
    pub fn train_all(&self, cfg: &ClassifierConfig, data: &[LabeledSequence]) -> Result<Vec<RunResult>> {
        if data.len() != self.labels.len() {
            return Err(Error::Argument("sequence count does not match the dataset".into()));
        }
        let input_dim = data[0].sequence.features.ncols();
        Ok(self
            .splits
            .par_iter()
            .map(|(seed, parts)| {
                let mut cfg = cfg.clone();
                cfg.input_dim = input_dim;
                cfg.seed = *seed;
                train_one(&cfg, data, parts).map_err(|e| {
                    warn!("seed {seed}: {e}");
                    e.to_string()
                })
            })
            .collect())
    }

    fn metrics(&self, posteriors: &[ClassPosterior], parts: &[Partition]) -> Result<PartitionBreakdown> {
        let of = |p: Partition| -> Result<PartitionMetrics> {
            let idx: Vec<usize> = (0..parts.len()).filter(|&i| parts[i] == p).collect();
            let post: Vec<ClassPosterior> = idx.iter().map(|&i| posteriors[i]).collect();
            let labels: Vec<Label> = idx.iter().map(|&i| self.labels[i]).collect();
            Ok(PartitionMetrics {
                f1: macro_f1(&predictions(&post), &labels)?,
                log_loss: log_loss(&post, &labels)?,
            })
        };
        Ok(PartitionBreakdown {
            train: of(Partition::Train)?,
            validation: of(Partition::Validation)?,
            test: of(Partition::Test)?,
        })
    }

    fn outcome(&self, seed: u64, parts: &[Partition], run: &RunResult) -> SeedOutcome {
        let failed = |error: String| SeedOutcome {
            seed,
            status: RunStatus::Failed,
            error: Some(error),
            metrics: None,
            best_epoch: None,
            stopped_epoch: None,
        };
        match run {
            Err(e) => failed(e.clone()),
            Ok(run) => match self.metrics(&run.posteriors, parts) {
                Err(e) => failed(e.to_string()),
                Ok(m) => SeedOutcome {
                    seed,
                    status: RunStatus::Completed,
                    error: None,
                    metrics: Some(m),
                    best_epoch: run.history.as_ref().map(|h| h.best_epoch),
                    stopped_epoch: run.history.as_ref().map(|h| h.stopped_epoch),
                },
            },
        }
    }

    /// Report for a single-model strategy from its per-seed runs.
    pub fn report(&self, strategy: Strategy, layer: Option<u8>, runs: &[RunResult]) -> EvalReport {
        let seeds = self
            .splits
            .iter()
            .zip(runs)
            .map(|((seed, parts), run)| self.outcome(*seed, parts, run))
            .collect();
        EvalReport::assemble(strategy, layer, seeds)
    }

    /// Late fusion: per seed, average the acoustic and text posteriors of
    /// each recording, then score.
    pub fn late_fusion_report(&self, layer: Option<u8>, acoustic: &[RunResult], text: &[RunResult]) -> EvalReport {
        let fused: Vec<RunResult> = acoustic
            .iter()
            .zip(text)
            .map(|(a, t)| match (a, t) {
                (Ok(a), Ok(t)) => a
                    .posteriors
                    .iter()
                    .zip(&t.posteriors)
                    .map(|(x, y)| late_fuse(x, y))
                    .collect::<Result<Vec<_>>>()
                    .map(|posteriors| ModelRun {
                        posteriors,
                        history: None,
                    })
                    .map_err(|e| e.to_string()),
                (Err(e), _) => Err(format!("acoustic model failed: {e}")),
                (_, Err(e)) => Err(format!("text model failed: {e}")),
            })
            .collect();
        self.report(Strategy::LateFusion, layer, &fused)
    }
}

fn train_one(cfg: &ClassifierConfig, data: &[LabeledSequence], parts: &[Partition]) -> Result<ModelRun> {
    let select = |p: Partition| -> Vec<&LabeledSequence> {
        data.iter().zip(parts).filter(|(_, q)| **q == p).map(|(d, _)| d).collect()
    };
    let (model, history) = train(Model::init(cfg)?, &select(Partition::Train), &select(Partition::Validation))?;
    let posteriors = predict(&model, data.iter().map(|d| &d.sequence))?;
    Ok(ModelRun {
        posteriors,
        history: Some(history),
    })
}

/// The evaluation protocol for one strategy: for each seed a fresh
/// stratified split, a fresh initialization and a fresh training run.
/// `layer` is required for every strategy except text-only.
pub fn multi_seed_eval(
    configs: &ConfigSet,
    dataset: &Dataset,
    strategy: Strategy,
    layer: Option<u8>,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let layer = if strategy.uses_layer() {
        Some(layer.ok_or_else(|| Error::Argument(format!("{strategy} needs an acoustic layer")))?)
    } else {
        None
    };
    let protocol = Protocol::new(dataset, options)?;
    let run = |s: Strategy| -> Result<Vec<RunResult>> {
        let data = match s {
            Strategy::AcousticOnly => dataset.acoustic_sequences(layer.expect("layer"))?,
            Strategy::TextOnly => dataset.text_sequences()?,
            Strategy::EarlyFusion => dataset.fused_sequences(layer.expect("layer"))?,
            Strategy::LateFusion => unreachable!(),
        };
        info!("training {s} layer {layer:?} over {} seeds", options.seeds.len());
        protocol.train_all(configs.get(s)?, &data)
    };
    Ok(match strategy {
        Strategy::LateFusion => {
            let a = run(Strategy::AcousticOnly)?;
            let t = run(Strategy::TextOnly)?;
            protocol.late_fusion_report(layer, &a, &t)
        }
        s => protocol.report(s, layer, &run(s)?),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::synthgen::{Generator, SynthParams};

    pub(crate) fn tiny_dataset(n: usize, seed: u64) -> Dataset {
        let p = SynthParams {
            n_recordings: n,
            frames: 24,
            min_words: 3,
            max_words: 5,
            audio_dim: 6,
            text_dim: 6,
            layers: 2,
            seed,
            ..SynthParams::default()
        };
        Dataset::from_synth(Generator::new(p.clone()).unwrap().generate_all().unwrap(), &p).unwrap()
    }

    pub(crate) fn tiny_config() -> ClassifierConfig {
        let mut cfg = ClassifierConfig::new(1);
        cfg.projection_dim = 8;
        cfg.num_layers = 1;
        cfg.num_heads = 2;
        cfg.hidden_dim = 8;
        cfg.max_epochs = 4;
        cfg.patience = 2;
        cfg
    }

    fn options() -> EvalOptions {
        EvalOptions {
            seeds: vec![1, 2, 3],
            ..EvalOptions::default()
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("EF".parse::<Strategy>().unwrap(), Strategy::EarlyFusion);
        assert!("both".parse::<Strategy>().is_err());
    }

    #[test]
    fn report_means_are_arithmetic_means() {
        let ds = tiny_dataset(60, 1);
        let configs = ConfigSet::shared(tiny_config());
        let report = multi_seed_eval(&configs, &ds, Strategy::EarlyFusion, Some(2), &options()).unwrap();
        assert_eq!(report.seeds.len(), 3);
        assert_eq!(report.completed, 3);
        assert!(!report.incomplete);
        let f1s: Vec<f64> = report.seeds.iter().map(|s| s.metrics.unwrap().test.f1).collect();
        let losses: Vec<f64> = report.seeds.iter().map(|s| s.metrics.unwrap().test.log_loss).collect();
        assert_eq!(report.mean_f1.unwrap(), f1s.iter().sum::<f64>() / 3.0);
        assert_eq!(report.mean_log_loss.unwrap(), losses.iter().sum::<f64>() / 3.0);
        let again = multi_seed_eval(&configs, &ds, Strategy::EarlyFusion, Some(2), &options()).unwrap();
        assert_eq!(report.to_json().unwrap(), again.to_json().unwrap());
    }

    #[test]
    fn late_fusion_averages_per_seed_posteriors() {
        let ds = tiny_dataset(45, 2);
        let configs = ConfigSet::shared(tiny_config());
        let protocol = Protocol::new(&ds, &options()).unwrap();
        let a = protocol.train_all(&configs.acoustic_only, &ds.acoustic_sequences(1).unwrap()).unwrap();
        let t = protocol.train_all(&configs.text_only, &ds.text_sequences().unwrap()).unwrap();
        let lf = protocol.late_fusion_report(Some(1), &a, &t);
        let direct = multi_seed_eval(&configs, &ds, Strategy::LateFusion, Some(1), &options()).unwrap();
        assert_eq!(lf, direct);

        // a self-paired late fusion reproduces the unimodal report
        let self_lf = protocol.late_fusion_report(Some(1), &a, &a);
        let acoustic = protocol.report(Strategy::AcousticOnly, Some(1), &a);
        assert_eq!(self_lf.mean_f1, acoustic.mean_f1);
        assert_eq!(self_lf.mean_log_loss, acoustic.mean_log_loss);
    }

    #[test]
    fn failed_seeds_are_flagged() {
        let ds = tiny_dataset(45, 3);
        let mut cfg = tiny_config();
        cfg.learning_rate = 1e300;
        let report = multi_seed_eval(&ConfigSet::shared(cfg), &ds, Strategy::AcousticOnly, Some(1), &options()).unwrap();
        assert!(report.incomplete);
        assert_eq!(report.completed, 0);
        assert!(report.mean_f1.is_none());
        assert!(report.seeds.iter().all(|s| s.status == RunStatus::Failed && s.error.is_some()));
    }

    #[test]
    fn layer_is_required_for_acoustic_strategies() {
        let ds = tiny_dataset(30, 4);
        let configs = ConfigSet::shared(tiny_config());
        assert!(multi_seed_eval(&configs, &ds, Strategy::AcousticOnly, None, &options()).is_err());
        let text = multi_seed_eval(&configs, &ds, Strategy::TextOnly, Some(3), &options()).unwrap();
        assert_eq!(text.layer, None);
    }
}
