//! Small continuous-control environments.
//!
//! | name           | obs | act | episode | reward range                 |
//! |----------------|-----|-----|---------|------------------------------|
//! | `noisy-bandit` | 1   | 1   | 1       | `[-eps, eps]`                |
//! | `point-mass`   | 2   | 1   | 200     | `[-4.1, 0]`                  |
//! | `pendulum`     | 3   | 1   | 200     | `[-(pi^2 + 6.4 + 0.004), 0]` |
//!
//! Actions live in `[-1, 1]^d`. Finite out-of-range actions are clipped;
//! non-finite actions are rejected.

mod bandit;
mod pendulum;
mod point_mass;
pub mod rollout;

pub use bandit::NoisyBandit;
pub use pendulum::Pendulum;
pub use point_mass::PointMass;
pub use rollout::{mc_return, rollout_returns, Actor, ActorSample, FnActor, McEstimate, McOptions, RewardMode};

use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::rng::LabRng;

pub const ENV_NAMES: [&str; 3] = ["noisy-bandit", "point-mass", "pendulum"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub gamma: f64,
    pub max_steps: usize,
    /// Inclusive bounds on every emitted reward.
    pub reward_bounds: (f64, f64),
}

/// Internal coordinates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub coords: Vec<f64>,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: EnvState,
    pub reward: f64,
    /// A true terminal state: no bootstrapping past it.
    pub terminal: bool,
    /// The episode step limit was reached.
    pub truncated: bool,
}

impl Step {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Env {
    NoisyBandit(NoisyBandit),
    PointMass(PointMass),
    Pendulum(Pendulum),
}

impl Env {
    /// Looks an environment up by name with default parameters and `gamma = 0.99`.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "noisy-bandit" => Ok(Env::NoisyBandit(NoisyBandit::default())),
            "point-mass" => Ok(Env::PointMass(PointMass::default())),
            "pendulum" => Ok(Env::Pendulum(Pendulum::default())),
            _ => Err(Error::UnknownName {
                kind: "environment",
                name: name.to_string(),
                allowed: ENV_NAMES.join(", "),
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Env::NoisyBandit(_) => "noisy-bandit",
            Env::PointMass(_) => "point-mass",
            Env::Pendulum(_) => "pendulum",
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::invalid(format!("gamma must be in (0, 1), got {gamma}")));
        }
        match &mut self {
            Env::NoisyBandit(e) => e.gamma = gamma,
            Env::PointMass(e) => e.gamma = gamma,
            Env::Pendulum(e) => e.gamma = gamma,
        }
        Ok(self)
    }

    pub fn spec(&self) -> EnvSpec {
        match self {
            Env::NoisyBandit(e) => e.spec(),
            Env::PointMass(e) => e.spec(),
            Env::Pendulum(e) => e.spec(),
        }
    }

    /// Initial state drawn from `rng`.
    pub fn reset_with(&self, rng: &mut LabRng) -> EnvState {
        match self {
            Env::NoisyBandit(e) => e.reset(),
            Env::PointMass(e) => e.reset(rng),
            Env::Pendulum(e) => e.reset(rng),
        }
    }

    /// Initial state determined by `seed`.
    pub fn reset(&self, seed: u64) -> EnvState {
        self.reset_with(&mut LabRng::seed_from_u64(seed))
    }

    pub fn observe(&self, state: &EnvState) -> Vec<f64> {
        match self {
            Env::Pendulum(e) => e.observe(state),
            _ => state.coords.clone(),
        }
    }

    pub fn step(&self, state: &EnvState, action: &[f64], rng: &mut LabRng) -> Result<Step> {
        let spec = self.spec();
        let action = sanitize_action(action, spec.action_dim)?;
        let (coords, reward, terminal) = match self {
            Env::NoisyBandit(e) => e.transition(&action, rng),
            Env::PointMass(e) => e.transition(&state.coords, &action),
            Env::Pendulum(e) => e.transition(&state.coords, &action),
        };
        let step = state.step + 1;
        Ok(Step {
            state: EnvState { coords, step },
            reward,
            terminal,
            truncated: step >= spec.max_steps,
        })
    }

    /// Expected reward `E[r | s, a]`.
    pub fn mean_reward(&self, state: &EnvState, action: &[f64]) -> Result<f64> {
        let action = sanitize_action(action, self.spec().action_dim)?;
        Ok(match self {
            Env::NoisyBandit(_) => 0.0,
            Env::PointMass(e) => e.transition(&state.coords, &action).1,
            Env::Pendulum(e) => e.transition(&state.coords, &action).1,
        })
    }
}

fn sanitize_action(action: &[f64], dim: usize) -> Result<Vec<f64>> {
    if action.len() != dim {
        return Err(Error::ShapeMismatch {
            op: "Env::step",
            expected: format!("action of dimension {dim}"),
            got: format!("{}", action.len()),
        });
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite(format!("action {action:?}")));
    }
    Ok(action
        .iter()
        .map(|&a| {
            if a.abs() > 1.0 {
                log::debug!("action component {a} clipped to [-1, 1]");
            }
            a.clamp(-1.0, 1.0)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn lookup_by_name() {
        for name in ENV_NAMES {
            assert_eq!(Env::by_name(name).unwrap().name(), name);
        }
        let err = Env::by_name("cartpole").unwrap_err();
        assert!(err.to_string().contains("point-mass"));
    }

    #[test]
    fn non_finite_action_rejected_and_large_action_clipped() {
        let env = Env::by_name("point-mass").unwrap();
        let s = EnvState {
            coords: vec![0.0, 0.0],
            step: 0,
        };
        let mut rng = seeded(0);
        assert!(env.step(&s, &[f64::NAN], &mut rng).is_err());
        let a = env.step(&s, &[1.5], &mut rng).unwrap();
        let b = env.step(&s, &[1.0], &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gamma_must_be_open_unit_interval() {
        let env = Env::by_name("pendulum").unwrap();
        assert!(env.clone().with_gamma(1.0).is_err());
        assert!(env.clone().with_gamma(0.0).is_err());
        assert_eq!(env.with_gamma(0.9).unwrap().spec().gamma, 0.9);
    }

    #[test]
    fn seeded_reset_is_deterministic() {
        for name in ENV_NAMES {
            let env = Env::by_name(name).unwrap();
            assert_eq!(env.reset(5), env.reset(5));
            assert_eq!(env.reset(5).step, 0);
        }
        let pm = Env::by_name("point-mass").unwrap();
        assert_ne!(pm.reset(1), pm.reset(2));
    }

    #[test]
    fn rewards_stay_in_documented_bounds() {
        let mut rng = seeded(11);
        for name in ENV_NAMES {
            let env = Env::by_name(name).unwrap();
            let (lo, hi) = env.spec().reward_bounds;
            for ep in 0..20 {
                let mut s = env.reset(ep);
                for _ in 0..env.spec().max_steps {
                    let a = [rand::Rng::random_range(&mut rng, -1.0..=1.0)];
                    let st = env.step(&s, &a, &mut rng).unwrap();
                    assert!(st.reward >= lo && st.reward <= hi, "{name}: {}", st.reward);
                    if st.done() {
                        break;
                    }
                    s = st.state;
                }
            }
        }
    }

    #[test]
    fn identical_seeds_and_actions_give_identical_trajectories() {
        for name in ENV_NAMES {
            let env = Env::by_name(name).unwrap();
            let run = || {
                let mut rng = seeded(3);
                let mut s = env.reset(9);
                let mut out = vec![];
                for t in 0..50 {
                    let a = [((t as f64) * 0.3).sin()];
                    let st = env.step(&s, &a, &mut rng).unwrap();
                    out.push((st.state.coords.clone(), st.reward));
                    if st.done() {
                        break;
                    }
                    s = st.state;
                }
                out
            };
            assert_eq!(run(), run());
        }
    }
}
