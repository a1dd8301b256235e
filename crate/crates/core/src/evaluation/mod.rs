//! Metrics, stratified splitting, the multi-seed protocol, layer sweeps and
//! the frame-similarity probe.

pub mod metrics;
pub mod probe;
pub mod protocol;
pub mod split;
pub mod sweep;

pub use metrics::{confusion_matrix, f1_breakdown, log_loss, macro_f1, F1Breakdown};
pub use probe::{centered_cosine_matrix, cosine_similarity_matrix, probe_layer, CosineMatrix, LayerProbe};
pub use protocol::{
    default_seeds, multi_seed_eval, ConfigSet, EvalOptions, EvalReport, PartitionBreakdown, PartitionMetrics, Protocol,
    RunStatus, SeedOutcome, Strategy,
};
pub use split::{stratified_split, Partition, SplitAssignment, SplitItem, StratumKey, DEFAULT_RATIOS};
pub use sweep::{layer_sweep, Criterion, SkippedCell, SummaryRow, SweepConfigs, SweepResult};
