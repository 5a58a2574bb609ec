use serde::{Deserialize, Serialize};

/// One logged measurement. `(run_id, step, metric, component, probes)` is
/// unique within a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run_id: String,
    /// Environment steps taken when the value was recorded.
    pub step: usize,
    /// Seconds since the run started.
    pub wall_time: f64,
    pub metric: String,
    pub value: f64,
    /// Mixture component the value refers to, if any.
    pub component: Option<usize>,
    /// Probe-state count behind a bias value, if any.
    pub probes: Option<usize>,
}

/// Metric names emitted by the trainer.
pub mod names {
    /// Mean undiscounted evaluation-episode return.
    pub const EVAL_RETURN: &str = "eval_return";
    /// Critic estimate minus Monte-Carlo return at the probe states.
    pub const BIAS: &str = "bias";
    pub const BIAS_SE: &str = "bias_se";
    pub const BIAS_ESTIMATE: &str = "bias_estimate";
    pub const BIAS_RETURN: &str = "bias_return";
    /// `E_{a ~ pi_c}[log pi_c(a) - log pi(a)]`, per component; mixture variants only.
    pub const LOG_RATIO: &str = "log_ratio";
    pub const ALPHA: &str = "alpha";
    /// Mean critic loss over the updates since the previous record.
    pub const CRITIC_LOSS: &str = "critic_loss";
    /// Mean actor loss per component over the updates since the previous record.
    pub const ACTOR_LOSS: &str = "actor_loss";
}
