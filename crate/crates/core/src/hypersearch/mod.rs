//! Hyperparameter search with a tree-structured Parzen estimator.
//!
//! Trials are appended to a JSONL log as they finish, so an interrupted
//! search resumes from the log and reproduces the uninterrupted run.

mod space;
mod tpe;

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use space::{Dimension, FloatRange, ParamValue, SearchSpace, PARAM_NAMES};
pub use tpe::{sample_config, TpeSettings};

use crate::classifier::{init_model, train, ClassifierConfig, LabeledSequence};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Completed,
    Pruned,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub config: ClassifierConfig,
    pub loss: Option<f64>,
    pub status: TrialStatus,
}

impl TrialRecord {
    /// Loss of a completed trial.
    pub fn completed_loss(&self) -> Option<f64> {
        match (self.status, self.loss) {
            (TrialStatus::Completed, Some(l)) if l.is_finite() => Some(l),
            _ => None,
        }
    }
}

/// What an objective reports for one configuration. Errors returned by the
/// objective mark the trial failed without stopping the search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrialOutcome {
    Completed(f64),
    Pruned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSettings {
    pub budget: usize,
    pub seed: u64,
    pub tpe: TpeSettings,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            budget: 150,
            seed: 0,
            tpe: TpeSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: TrialRecord,
    pub trials: Vec<TrialRecord>,
}

/// Reads a trial log. Trial ids must run 0, 1, 2, ... in file order.
pub fn read_trial_log(path: &Path) -> Result<Vec<TrialRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut trials = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrialRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("{}:{}", path.display(), n + 1), e.to_string()))?;
        if rec.trial_id != trials.len() {
            return Err(Error::parse(
                format!("{}:{}", path.display(), n + 1),
                format!("expected trial {}, found {}", trials.len(), rec.trial_id),
            ));
        }
        trials.push(rec);
    }
    Ok(trials)
}

fn best_of(trials: &[TrialRecord]) -> Option<&TrialRecord> {
    trials
        .iter()
        .filter_map(|t| t.completed_loss().map(|l| (t, l)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.trial_id.cmp(&b.0.trial_id)))
        .map(|(t, _)| t)
}

/// Runs `settings.budget` trials, minimising the objective.
///
/// With `log` set, trials already in the file are reused and new trials are
/// appended one line at a time. Trial `i` samples with a generator seeded by
/// `(seed, i)`, so a resumed search matches an uninterrupted one and a
/// shorter budget gives a prefix of a longer one.
pub fn run_search<F>(
    space: &SearchSpace,
    base: &ClassifierConfig,
    settings: &SearchSettings,
    log: Option<&Path>,
    mut objective: F,
) -> Result<SearchResult>
where
    F: FnMut(&ClassifierConfig) -> Result<TrialOutcome>,
{
    space.validate()?;
    settings.tpe.validate()?;
    if settings.budget == 0 {
        return Err(Error::Config("search budget must be at least 1".into()));
    }
    let mut trials = match log {
        Some(p) if p.exists() => read_trial_log(p)?,
        _ => Vec::new(),
    };
    if trials.len() > settings.budget {
        log::warn!("trial log holds {} trials, budget is {}", trials.len(), settings.budget);
        trials.truncate(settings.budget);
    } else if !trials.is_empty() {
        log::info!("resuming search after {} logged trials", trials.len());
    }
    let mut writer = match log {
        Some(p) => Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| Error::io(p, e))?,
        ),
        None => None,
    };

    for trial_id in trials.len()..settings.budget {
        let mut rng = stream_rng(derive_seed(&[settings.seed, trial_id as u64]), 0);
        let config = sample_config(space, base, &trials, &settings.tpe, &mut rng)?;
        let (loss, status) = match objective(&config) {
            Ok(TrialOutcome::Completed(l)) if l.is_finite() => (Some(l), TrialStatus::Completed),
            Ok(TrialOutcome::Completed(l)) => {
                log::warn!("trial {trial_id}: non-finite loss {l}");
                (None, TrialStatus::Failed)
            }
            Ok(TrialOutcome::Pruned) => (None, TrialStatus::Pruned),
            Err(e) => {
                log::warn!("trial {trial_id} failed: {e}");
                (None, TrialStatus::Failed)
            }
        };
        let rec = TrialRecord {
            trial_id,
            config,
            loss,
            status,
        };
        if let (Some(w), Some(p)) = (writer.as_mut(), log) {
            let line = serde_json::to_string(&rec)?;
            writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| Error::io(p, e))?;
        }
        log::debug!("trial {trial_id}: {status:?} {loss:?}");
        trials.push(rec);
    }

    let best = best_of(&trials)
        .cloned()
        .ok_or_else(|| Error::Search(format!("all {} trials failed or were pruned", trials.len())))?;
    Ok(SearchResult { best, trials })
}

/// Objective that trains on `train_set` and reports the best validation
/// log loss. The input width is taken from the data.
pub fn validation_objective<'a>(
    train_set: &'a [&'a LabeledSequence],
    val_set: &'a [&'a LabeledSequence],
) -> impl FnMut(&ClassifierConfig) -> Result<TrialOutcome> + 'a {
    move |cfg| {
        let mut cfg = cfg.clone();
        if let Some(first) = train_set.first() {
            cfg.input_dim = first.sequence.features.ncols();
        }
        let model = init_model(&cfg)?;
        let (_, history) = train(model, train_set, val_set)?;
        Ok(TrialOutcome::Completed(history.best_val_loss()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_space() -> SearchSpace {
        SearchSpace {
            hidden_dim: vec![16, 32],
            projection_dim: vec![16, 32],
            ..SearchSpace::default()
        }
    }

    fn lr_objective(cfg: &ClassifierConfig) -> Result<TrialOutcome> {
        Ok(TrialOutcome::Completed((cfg.learning_rate.log10() + 3.0).powi(2)))
    }

    #[test]
    fn concentrates_on_the_rewarded_choice() {
        let settings = SearchSettings {
            budget: 50,
            seed: 11,
            ..SearchSettings::default()
        };
        let res = run_search(&small_space(), &ClassifierConfig::new(8), &settings, None, |cfg| {
            Ok(TrialOutcome::Completed(if cfg.num_layers == 2 { 0.0 } else { 1.0 }))
        })
        .unwrap();
        let hits = res.trials.iter().filter(|t| t.config.num_layers == 2).count();
        assert!(hits >= 30, "{hits} of 50");
        assert_eq!(res.best.config.num_layers, 2);
    }

    #[test]
    fn finds_the_learning_rate_optimum() {
        let settings = SearchSettings {
            budget: 60,
            seed: 4,
            ..SearchSettings::default()
        };
        let res = run_search(&small_space(), &ClassifierConfig::new(8), &settings, None, lr_objective).unwrap();
        assert!((res.best.config.learning_rate.log10() + 3.0).abs() <= 0.15);
    }

    #[test]
    fn identical_settings_give_identical_logs() {
        let dir = tempdir().unwrap();
        let settings = SearchSettings {
            budget: 30,
            seed: 8,
            ..SearchSettings::default()
        };
        let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        run_search(&small_space(), &ClassifierConfig::new(8), &settings, Some(&a), lr_objective).unwrap();
        run_search(&small_space(), &ClassifierConfig::new(8), &settings, Some(&b), lr_objective).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn resumed_search_matches_uninterrupted() {
        let dir = tempdir().unwrap();
        let base = ClassifierConfig::new(8);
        let full = SearchSettings {
            budget: 28,
            seed: 3,
            ..SearchSettings::default()
        };
        let head = SearchSettings { budget: 23, ..full.clone() };
        let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        let whole = run_search(&small_space(), &base, &full, Some(&a), lr_objective).unwrap();
        let first = run_search(&small_space(), &base, &head, Some(&b), lr_objective).unwrap();
        assert_eq!(first.trials[..], whole.trials[..23]);
        let resumed = run_search(&small_space(), &base, &full, Some(&b), lr_objective).unwrap();
        assert_eq!(resumed, whole);
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn single_trial_budget() {
        let settings = SearchSettings {
            budget: 1,
            ..SearchSettings::default()
        };
        let res = run_search(&small_space(), &ClassifierConfig::new(8), &settings, None, lr_objective).unwrap();
        assert_eq!(res.trials.len(), 1);
        assert_eq!(res.best.trial_id, 0);
    }

    #[test]
    fn failures_are_recorded_and_all_failed_is_an_error() {
        let settings = SearchSettings {
            budget: 6,
            ..SearchSettings::default()
        };
        let mut calls = 0;
        let res = run_search(&small_space(), &ClassifierConfig::new(8), &settings, None, |_| {
            calls += 1;
            match calls {
                1 => Err(Error::Divergence { epoch: 1 }),
                2 => Ok(TrialOutcome::Completed(f64::NAN)),
                3 => Ok(TrialOutcome::Pruned),
                n => Ok(TrialOutcome::Completed(10.0 - n as f64)),
            }
        })
        .unwrap();
        let statuses: Vec<_> = res.trials.iter().map(|t| t.status).collect();
        use TrialStatus::*;
        assert_eq!(statuses, vec![Failed, Failed, Pruned, Completed, Completed, Completed]);
        assert_eq!(res.best.trial_id, 5);

        let err = run_search(&small_space(), &ClassifierConfig::new(8), &settings, None, |_| {
            Err(Error::Argument("boom".into()))
        });
        assert!(matches!(err, Err(Error::Search(_))));
    }

    #[test]
    fn ties_go_to_the_earliest_trial() {
        let settings = SearchSettings {
            budget: 5,
            ..SearchSettings::default()
        };
        let res = run_search(&small_space(), &ClassifierConfig::new(8), &settings, None, |_| {
            Ok(TrialOutcome::Completed(1.0))
        })
        .unwrap();
        assert_eq!(res.best.trial_id, 0);
    }

    #[test]
    fn corrupt_log_is_a_parse_error() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        std::fs::write(&p, "{not json}\n").unwrap();
        let err = run_search(&small_space(), &ClassifierConfig::new(8), &SearchSettings::default(), Some(&p), lr_objective);
        assert!(matches!(err, Err(Error::Parse { .. })));
    }
}
