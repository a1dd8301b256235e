use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::info;
use serde::{Deserialize, Serialize};

use super::protocol::{ConfigSet, EvalOptions, EvalReport, Protocol, RunResult, Strategy};
use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Configurations for a sweep: one set shared by all layers, optionally
/// replaced per layer (e.g. after a per-layer search).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfigs {
    pub shared: ConfigSet,
    #[serde(default)]
    pub per_layer: BTreeMap<u8, ConfigSet>,
}

impl SweepConfigs {
    pub fn shared(configs: ConfigSet) -> Self {
        SweepConfigs {
            shared: configs,
            per_layer: BTreeMap::new(),
        }
    }

    pub fn for_layer(&self, layer: u8) -> &ConfigSet {
        self.per_layer.get(&layer).unwrap_or(&self.shared)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub strategy: Strategy,
    pub layer: u8,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    BestF1,
    BestLogLoss,
    /// The same cell wins on both metrics.
    BestF1AndLogLoss,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::BestF1 => "best_f1",
            Criterion::BestLogLoss => "best_log_loss",
            Criterion::BestF1AndLogLoss => "best_f1_and_log_loss",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub criterion: Criterion,
    pub layer: Option<u8>,
    pub mean_f1: f64,
    pub mean_log_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub strategy: Strategy,
    pub layers: Vec<u8>,
    pub mean_f1: Vec<Option<f64>>,
    pub mean_log_loss: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub reports: Vec<EvalReport>,
    pub skipped: Vec<SkippedCell>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

impl SweepResult {
    pub fn report(&self, strategy: Strategy, layer: Option<u8>) -> Option<&EvalReport> {
        self.reports
            .iter()
            .find(|r| r.strategy == strategy && (r.layer == layer || !strategy.uses_layer()))
    }

    /// One row per report: strategy, layer, test means, completed seeds.
    pub fn table_tsv(&self) -> String {
        let mut out = String::from("strategy\tlayer\tmean_f1\tmean_log_loss\tcompleted\tseeds\tincomplete\n");
        for r in &self.reports {
            let layer = r.layer.map_or_else(|| "-".to_string(), |l| l.to_string());
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.strategy,
                layer,
                fmt_opt(r.mean_f1),
                fmt_opt(r.mean_log_loss),
                r.completed,
                r.seeds.len(),
                r.incomplete
            );
        }
        for s in &self.skipped {
            let _ = writeln!(out, "{}\t{}\tNA\tNA\t0\t0\tskipped: {}", s.strategy, s.layer, s.reason);
        }
        out
    }

    /// Best cell per strategy by mean F1 and by mean log loss, one row when
    /// the same cell wins both. Ties keep the lower layer.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for strategy in Strategy::ALL {
            let cells: Vec<(&EvalReport, f64, f64)> = self
                .reports
                .iter()
                .filter(|r| r.strategy == strategy)
                .filter_map(|r| Some((r, r.mean_f1?, r.mean_log_loss?)))
                .collect();
            if cells.is_empty() {
                continue;
            }
            let mut by_f1 = &cells[0];
            let mut by_loss = &cells[0];
            for c in &cells[1..] {
                if c.1 > by_f1.1 {
                    by_f1 = c;
                }
                if c.2 < by_loss.2 {
                    by_loss = c;
                }
            }
            let row = |c: &(&EvalReport, f64, f64), criterion| SummaryRow {
                strategy,
                criterion,
                layer: c.0.layer,
                mean_f1: c.1,
                mean_log_loss: c.2,
            };
            if std::ptr::eq(by_f1.0, by_loss.0) {
                rows.push(row(by_f1, Criterion::BestF1AndLogLoss));
            } else {
                rows.push(row(by_f1, Criterion::BestF1));
                rows.push(row(by_loss, Criterion::BestLogLoss));
            }
        }
        rows
    }

    pub fn summary_tsv(&self) -> String {
        let mut out = String::from("strategy\tcriterion\tlayer\tmean_f1\tmean_log_loss\n");
        for r in self.summary() {
            let layer = r.layer.map_or_else(|| "-".to_string(), |l| l.to_string());
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.6}\t{:.6}",
                r.strategy,
                r.criterion.as_str(),
                layer,
                r.mean_f1,
                r.mean_log_loss
            );
        }
        out
    }

    /// Per-strategy curves over layers; text-only is repeated as a flat line.
    pub fn plot_data(&self, layers: &[u8]) -> Vec<PlotSeries> {
        let mut series = Vec::new();
        for strategy in Strategy::ALL {
            if !self.reports.iter().any(|r| r.strategy == strategy) {
                continue;
            }
            let cells: Vec<Option<&EvalReport>> = layers.iter().map(|&l| self.report(strategy, Some(l))).collect();
            series.push(PlotSeries {
                strategy,
                layers: layers.to_vec(),
                mean_f1: cells.iter().map(|c| c.and_then(|r| r.mean_f1)).collect(),
                mean_log_loss: cells.iter().map(|c| c.and_then(|r| r.mean_log_loss)).collect(),
            });
        }
        series
    }
}

/// Evaluates each strategy at each layer with the multi-seed protocol.
///
/// Unimodal runs are shared: the text model of a seed is trained once and
/// reused by late fusion at every layer, and the acoustic model of a
/// (layer, seed) serves both the acoustic-only report and late fusion.
/// Layers missing from any recording are skipped and listed.
pub fn layer_sweep(
    dataset: &Dataset,
    strategies: &[Strategy],
    layers: &[u8],
    configs: &SweepConfigs,
    options: &EvalOptions,
) -> Result<SweepResult> {
    if strategies.is_empty() {
        return Err(Error::Argument("no strategies to sweep".into()));
    }
    let protocol = Protocol::new(dataset, options)?;
    let wants = |s: Strategy| strategies.contains(&s);
    let mut reports = Vec::new();
    let mut skipped = Vec::new();

    let text_runs: Option<Vec<RunResult>> = if wants(Strategy::TextOnly) || wants(Strategy::LateFusion) {
        info!("training text models");
        let runs = protocol.train_all(&configs.shared.text_only, &dataset.text_sequences()?)?;
        if wants(Strategy::TextOnly) {
            reports.push(protocol.report(Strategy::TextOnly, None, &runs));
        }
        Some(runs)
    } else {
        None
    };

    for &layer in layers {
        let layered: Vec<Strategy> = strategies.iter().copied().filter(|s| s.uses_layer()).collect();
        if layered.is_empty() {
            break;
        }
        if !dataset.has_layer(layer) {
            for s in layered {
                skipped.push(SkippedCell {
                    strategy: s,
                    layer,
                    reason: format!("layer {layer} missing for some recordings"),
                });
            }
            continue;
        }
        let cfgs = configs.for_layer(layer);
        let acoustic_runs = if wants(Strategy::AcousticOnly) || wants(Strategy::LateFusion) {
            info!("layer {layer}: training acoustic models");
            Some(protocol.train_all(&cfgs.acoustic_only, &dataset.acoustic_sequences(layer)?)?)
        } else {
            None
        };
        if let (true, Some(runs)) = (wants(Strategy::AcousticOnly), &acoustic_runs) {
            reports.push(protocol.report(Strategy::AcousticOnly, Some(layer), runs));
        }
        if wants(Strategy::EarlyFusion) {
            info!("layer {layer}: training early-fusion models");
            let runs = protocol.train_all(&cfgs.early_fusion, &dataset.fused_sequences(layer)?)?;
            reports.push(protocol.report(Strategy::EarlyFusion, Some(layer), &runs));
        }
        if let (true, Some(a), Some(t)) = (wants(Strategy::LateFusion), &acoustic_runs, &text_runs) {
            reports.push(protocol.late_fusion_report(Some(layer), a, t));
        }
    }
    Ok(SweepResult { reports, skipped })
}

#[cfg(test)]
mod tests {
    use super::super::protocol::tests::{tiny_config, tiny_dataset};
    use super::*;
    use crate::evaluation::multi_seed_eval;

    fn options() -> EvalOptions {
        EvalOptions {
            seeds: vec![1, 2],
            ..EvalOptions::default()
        }
    }

    #[test]
    fn cardinality_and_consistency_with_single_cells() {
        let ds = tiny_dataset(45, 5);
        let configs = SweepConfigs::shared(ConfigSet::shared(tiny_config()));
        let strategies = [Strategy::AcousticOnly, Strategy::EarlyFusion];
        let result = layer_sweep(&ds, &strategies, &[1, 2], &configs, &options()).unwrap();
        assert_eq!(result.reports.len(), 4);
        assert!(result.skipped.is_empty());
        let single = multi_seed_eval(&configs.shared, &ds, Strategy::EarlyFusion, Some(2), &options()).unwrap();
        assert_eq!(result.report(Strategy::EarlyFusion, Some(2)).unwrap(), &single);

        let all = layer_sweep(&ds, &Strategy::ALL, &[1, 2], &configs, &options()).unwrap();
        assert_eq!(all.reports.len(), 1 + 3 * 2);
        let lf = multi_seed_eval(&configs.shared, &ds, Strategy::LateFusion, Some(1), &options()).unwrap();
        assert_eq!(all.report(Strategy::LateFusion, Some(1)).unwrap(), &lf);
        assert_eq!(all.table_tsv().lines().count(), 1 + 7);
        assert_eq!(all.table_tsv(), layer_sweep(&ds, &Strategy::ALL, &[1, 2], &configs, &options()).unwrap().table_tsv());
        let plot = all.plot_data(&[1, 2]);
        assert_eq!(plot.len(), 4);
    }

    #[test]
    fn missing_layers_are_skipped() {
        let ds = tiny_dataset(30, 6);
        let configs = SweepConfigs::shared(ConfigSet::shared(tiny_config()));
        let result = layer_sweep(&ds, &[Strategy::AcousticOnly], &[2, 7], &configs, &options()).unwrap();
        assert_eq!(result.reports.len(), 1);
        assert_eq!(result.skipped.len(), 1);
        assert_eq!(result.skipped[0].layer, 7);
        assert!(result.table_tsv().contains("skipped"));
    }

    fn fake(strategy: Strategy, layer: u8, f1: f64, loss: f64) -> EvalReport {
        EvalReport {
            strategy,
            layer: Some(layer),
            seeds: vec![],
            completed: 1,
            incomplete: false,
            mean_f1: Some(f1),
            mean_log_loss: Some(loss),
            partition_means: None,
        }
    }

    #[test]
    fn summary_separates_disagreeing_winners() {
        let result = SweepResult {
            reports: vec![
                fake(Strategy::LateFusion, 9, 0.62, 0.70),
                fake(Strategy::LateFusion, 10, 0.60, 0.68),
                fake(Strategy::EarlyFusion, 3, 0.63, 0.69),
                fake(Strategy::EarlyFusion, 4, 0.61, 0.71),
            ],
            skipped: vec![],
        };
        let rows = result.summary();
        assert_eq!(rows.len(), 3);
        assert_eq!((rows[0].strategy, rows[0].criterion, rows[0].layer), (Strategy::EarlyFusion, Criterion::BestF1AndLogLoss, Some(3)));
        assert_eq!((rows[1].criterion, rows[1].layer), (Criterion::BestF1, Some(9)));
        assert_eq!((rows[2].criterion, rows[2].layer), (Criterion::BestLogLoss, Some(10)));
    }
}
