//! Training runs, evaluation, depth sweeps, gradient checks and plot data.

mod config;
mod gradcheck;
mod plotdata;
mod sweep;
mod train;

use serde::{Deserialize, Serialize};

use crate::layers::ModelConfig;

pub use config::{parse_bool, parse_list, parse_range, Settings};
pub use gradcheck::{gradcheck, gradcheck_config, GradFault, GradcheckReport, GroupError, GRADCHECK_STEP, GRADCHECK_TOLERANCE};
pub use plotdata::{plotdata, PlotSeries};
pub use sweep::{read_results, run_sweep, run_sweep_with, summarize, CellKey, write_summary, ResultRow, SkipAxis, SweepOutcome, SweepSpec, RESULTS_HEADER};
pub use train::{evaluate, make_batch, train, Batch, TrainOptions, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Everything recorded about one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config: ModelConfig,
    pub status: RunStatus,
    pub train_samples: usize,
    pub test_samples: usize,
    pub epochs: Vec<EpochMetrics>,
    /// Test accuracy after the last completed epoch.
    pub final_test_accuracy: Option<f64>,
    pub best_test_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
    pub wall_time_secs: f64,
    /// Why the run stopped early, if it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl RunRecord {
    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

/// Stable identifier of a run: `dataset-routing-dD-skip|noskip-sSEED`.
pub fn run_id(config: &ModelConfig) -> String {
    format!(
        "{}-{}-d{}-{}-s{}",
        config.dataset,
        config.routing,
        config.depth,
        if config.use_skip { "skip" } else { "noskip" },
        config.seed
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DatasetId;
    use crate::routing::RoutingKind;

    #[test]
    fn run_ids_are_readable() {
        let mut cfg = ModelConfig::new(DatasetId::Fashion, RoutingKind::Sda, 9, false);
        cfg.seed = 4;
        assert_eq!(run_id(&cfg), "fashion-sda-d9-noskip-s4");
    }
}
