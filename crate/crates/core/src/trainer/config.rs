use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::critic::CriticKind;
use crate::envs::ENV_NAMES;
use crate::error::{Error, Result};

/// How TD targets and actor objectives are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Mean over critics (or all atoms pooled), no correction.
    #[serde(rename = "naive")]
    Naive,
    /// Minimum over scalar critics.
    #[serde(rename = "td3-clip")]
    Td3Clip,
    /// Pooled quantile atoms with the largest ones dropped.
    #[serde(rename = "tqc")]
    Tqc,
    /// Two-component mixture; component `i` is optimized with critic `i`
    /// and assessed in targets by the other critic.
    #[serde(rename = "cdq")]
    Cdq,
    /// As `cdq`, but a fair coin picks the assessing critic per sample.
    #[serde(rename = "cdq-random")]
    CdqRandom,
    /// As `cdq`, but critic `i` also assesses component `i`.
    #[serde(rename = "cdq-same")]
    CdqSame,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Naive,
        Variant::Td3Clip,
        Variant::Tqc,
        Variant::Cdq,
        Variant::CdqRandom,
        Variant::CdqSame,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Naive => "naive",
            Variant::Td3Clip => "td3-clip",
            Variant::Tqc => "tqc",
            Variant::Cdq => "cdq",
            Variant::CdqRandom => "cdq-random",
            Variant::CdqSame => "cdq-same",
        }
    }

    /// The mixture variants: both components act and learn.
    pub fn uses_mixture(self) -> bool {
        matches!(self, Variant::Cdq | Variant::CdqRandom | Variant::CdqSame)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::UnknownName {
                kind: "variant",
                name: s.to_string(),
                allowed: Variant::ALL.iter().map(|v| v.name()).collect::<Vec<_>>().join(", "),
            })
    }
}

/// Policy used for evaluation episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Sample from the acting policy, as in training.
    #[default]
    Stochastic,
    /// Squashed component means; with two components, the one whose own
    /// critic values its mean action higher.
    Greedy,
}

/// Every hyperparameter of one training run. Missing fields take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoConfig {
    pub variant: Variant,
    pub env: String,
    pub seed: u64,
    pub total_steps: usize,
    /// Uniform-random actions before learning starts.
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub gamma: f64,
    /// Polyak rate for target nets.
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub hidden: Vec<usize>,
    pub n_critics: usize,
    /// Atoms per quantile critic.
    pub n_atoms: usize,
    /// Atoms kept per critic after truncation (`tqc` only).
    pub top_k: usize,
    /// Quantile critics for `naive` and the mixture variants; scalar otherwise.
    /// `tqc` is always quantile and `td3-clip` always scalar.
    pub distributional: bool,
    pub entropy: bool,
    /// Defaults to `-action_dim`.
    pub target_entropy: Option<f64>,
    pub init_alpha: f64,
    /// One replay buffer per mixture component.
    pub separate_buffers: bool,
    pub replay_capacity: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub eval_mode: EvalMode,
    pub bias_interval: usize,
    pub probe_states: usize,
    /// Action draws and return rollouts per probe state.
    pub bias_rollouts: usize,
    pub bias_horizon: usize,
    /// Compare soft critic values with entropy-augmented returns.
    pub soft_bias: bool,
    /// Roll out with expected rewards instead of sampled ones.
    pub expected_reward_returns: bool,
    /// Samples per probe state for the log-ratio report.
    pub log_ratio_samples: usize,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Cdq,
            env: "point-mass".into(),
            seed: 0,
            total_steps: 20_000,
            warmup_steps: 1000,
            batch_size: 256,
            gamma: 0.99,
            tau: 0.005,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            hidden: vec![64, 64],
            n_critics: 2,
            n_atoms: 25,
            top_k: 23,
            distributional: true,
            entropy: true,
            target_entropy: None,
            init_alpha: 1.0,
            separate_buffers: false,
            replay_capacity: 100_000,
            eval_interval: 2000,
            eval_episodes: 5,
            eval_mode: EvalMode::Stochastic,
            bias_interval: 2000,
            probe_states: 16,
            bias_rollouts: 4,
            bias_horizon: 1000,
            soft_bias: true,
            expected_reward_returns: true,
            log_ratio_samples: 64,
        }
    }
}

/// One failed invariant, named by field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl AlgoConfig {
    pub fn critic_kind(&self) -> CriticKind {
        let quantile = CriticKind::Quantile { atoms: self.n_atoms };
        match self.variant {
            Variant::Tqc => quantile,
            Variant::Td3Clip => CriticKind::Scalar,
            _ if self.distributional => quantile,
            _ => CriticKind::Scalar,
        }
    }

    pub fn resolved_target_entropy(&self, action_dim: usize) -> f64 {
        self.target_entropy.unwrap_or(-(action_dim as f64))
    }

    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let mut bad = |field: &'static str, message: String| out.push(ConfigIssue { field, message });
        if !ENV_NAMES.contains(&self.env.as_str()) {
            bad("env", format!("unknown env `{}`; expected one of {}", self.env, ENV_NAMES.join(", ")));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            bad("gamma", format!("must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            bad("tau", format!("must lie in (0, 1], got {}", self.tau));
        }
        for (field, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("alpha_lr", self.alpha_lr),
            ("init_alpha", self.init_alpha),
        ] {
            if !(v.is_finite() && v > 0.0) {
                bad(field, format!("must be positive and finite, got {v}"));
            }
        }
        if let Some(h) = self.target_entropy {
            if !h.is_finite() {
                bad("target_entropy", format!("must be finite, got {h}"));
            }
        }
        for (field, v) in [
            ("batch_size", self.batch_size),
            ("n_atoms", self.n_atoms),
            ("eval_interval", self.eval_interval),
            ("eval_episodes", self.eval_episodes),
            ("bias_interval", self.bias_interval),
            ("probe_states", self.probe_states),
            ("bias_rollouts", self.bias_rollouts),
            ("log_ratio_samples", self.log_ratio_samples),
        ] {
            if v == 0 {
                bad(field, "must be at least 1".into());
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            bad("hidden", format!("needs at least one positive width, got {:?}", self.hidden));
        }
        if self.top_k < 1 || self.top_k > self.n_atoms {
            bad("top_k", format!("must lie in 1..={} (n_atoms), got {}", self.n_atoms, self.top_k));
        }
        if self.replay_capacity < self.batch_size {
            bad(
                "replay_capacity",
                format!("must hold at least one batch ({}), got {}", self.batch_size, self.replay_capacity),
            );
        }
        match self.variant {
            Variant::Cdq | Variant::CdqRandom | Variant::CdqSame if self.n_critics != 2 => {
                bad("n_critics", format!("{} needs exactly 2 critics, got {}", self.variant, self.n_critics));
            }
            Variant::Td3Clip if self.n_critics < 2 => {
                bad("n_critics", format!("td3-clip needs at least 2 critics, got {}", self.n_critics));
            }
            _ if self.n_critics == 0 => bad("n_critics", "must be at least 1".into()),
            _ => {}
        }
        if self.separate_buffers && !self.variant.uses_mixture() {
            bad("separate_buffers", format!("only applies to mixture variants, not {}", self.variant));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "),
            ))
        }
    }

    /// `(field, value)` for every hyperparameter, defaults included.
    pub fn resolved(&self) -> Vec<(String, String)> {
        let value = serde_json::to_value(self).expect("config serializes");
        let serde_json::Value::Object(map) = value else {
            unreachable!("config is a struct")
        };
        map.into_iter()
            .map(|(k, v)| {
                let shown = match v {
                    serde_json::Value::String(s) => s,
                    serde_json::Value::Null => "auto".to_string(),
                    other => other.to_string(),
                };
                (k, shown)
            })
            .collect()
    }
}
