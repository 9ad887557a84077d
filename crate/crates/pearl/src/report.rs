use pearl_core::reward_model::EpochLog;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub transferred: usize,
    pub abstained: usize,
    pub oracle: usize,
}

/// Alignment statistics over all sampling steps of a transfer run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GwSummary {
    pub steps: usize,
    pub mean_objective: f64,
    pub max_objective: f64,
    pub converged_steps: usize,
    pub sinkhorn_converged_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs: usize,
    /// File name of the per-epoch log, next to this report.
    pub log_file: String,
    pub checkpoint: String,
    pub final_epoch: EpochLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub command: String,
    /// Percentage in [0, 100].
    pub cpa_accuracy: Option<f64>,
    pub label_counts: LabelCounts,
    /// Spearman correlation in [-1, 1] on held-out segments.
    pub reward_rank_correlation: Option<f64>,
    /// Fraction of strictly ordered held-out pairs ranked correctly.
    pub heldout_pair_accuracy: Option<f64>,
    pub gw: Option<GwSummary>,
    pub training: Option<TrainingSummary>,
    pub config: PipelineConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

impl MetricsReport {
    pub fn new(command: &str, config: &PipelineConfig) -> Self {
        MetricsReport {
            command: command.into(),
            cpa_accuracy: None,
            label_counts: LabelCounts::default(),
            reward_rank_correlation: None,
            heldout_pair_accuracy: None,
            gw: None,
            training: None,
            config: config.clone(),
            wall_clock_seconds: None,
        }
    }
}
