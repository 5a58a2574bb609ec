use rand::Rng;

use super::{EnvSpec, EnvState};
use crate::rng::LabRng;

/// One-step bandit on a single dummy state.
///
/// Reward is `+eps` or `-eps` with probability 1/2 each, whatever the
/// action, so the true action value is 0 everywhere and any persistent
/// positive critic estimate is overestimation.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyBandit {
    pub epsilon: f64,
    pub gamma: f64,
}

impl Default for NoisyBandit {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            gamma: 0.99,
        }
    }
}

impl NoisyBandit {
    pub fn spec(&self) -> EnvSpec {
        EnvSpec {
            state_dim: 1,
            action_dim: 1,
            gamma: self.gamma,
            max_steps: 1,
            reward_bounds: (-self.epsilon, self.epsilon),
        }
    }

    pub fn reset(&self) -> EnvState {
        EnvState {
            coords: vec![0.0],
            step: 0,
        }
    }

    pub(super) fn transition(&self, _action: &[f64], rng: &mut LabRng) -> (Vec<f64>, f64, bool) {
        let r = if rng.random_bool(0.5) {
            self.epsilon
        } else {
            -self.epsilon
        };
        (vec![0.0], r, true)
    }
}
