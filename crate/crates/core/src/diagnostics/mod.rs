//! Measurements for comparing target constructions: on-policy bias against
//! Monte-Carlo returns, the divergence between each policy component and the
//! mixture, and a demonstrator of the max-of-noisy-estimates inequality.

mod bias;
mod jensen;
mod log_ratio;

pub use bias::{measure_bias, probe_states, BiasReport, FnEstimator, ValueEstimator, PROBE_SEED};
pub use jensen::{jensen_gap_demo, JensenReport, NoiseSpec};
pub use log_ratio::{log_ratio_divergence, log_ratio_terms, LogRatioReport};
