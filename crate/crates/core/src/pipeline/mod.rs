//! Offline training campaign, online prediction, evaluation reports,
//! persistence and the command line.

mod artifact;
mod campaign;
pub mod cli;
mod config;
mod evaluate;
mod predict;
mod report;
mod solve;
mod train;

pub use artifact::{EcswSummary, ModelArtifact, StageTiming, TrainingReport, ARTIFACT_VERSION};
pub use campaign::{run_campaign, simulate_samples, Campaign, Sample, Split};
pub use config::{derive_seed, CampaignConfig, EnsembleConfig, ErrorSubset, Sensors, Stream};
pub use evaluate::{
    evaluate, evaluate_metrics, parameter_coverage, table_rows, Evaluation, EvaluationMetrics, EvaluationTimings,
    SampleMetrics, TableRow, TierSummary, Trace, ENVELOPE_STATE_SHARE, TIERS,
};
pub use predict::{predict_online, Observation, PredictionBundle, PredictionTimings};
pub use report::{render_report, trace_svg, write_evaluation, LADDER_FILE, METRICS_FILE, REPORT_FILE, TIMINGS_FILE, TRACES_FILE};
pub use solve::rom_displacement;
pub use train::{subsample, train_and_save, train_offline, train_offline_with_data, TrainingData};
