//! Monte-Carlo discounted returns under a fixed actor.
//!
//! Rollouts run for `horizon` steps or until a terminal state. The episode
//! step limit is a training convention, not part of the task, so a rollout
//! that hits it keeps going with the counter restarted; with
//! `horizon >= max_steps` the estimate targets the same infinite-horizon
//! value the bootstrapped critics learn.

use super::{Env, EnvState};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::LabRng;
use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub struct ActorSample {
    pub action: Vec<f64>,
    /// Mixture component that produced the action (1 or 2).
    pub component: usize,
    /// Log-density of the action under the acting policy.
    pub log_prob: f64,
}

/// Anything that picks actions for a batch of observations.
pub trait Actor {
    fn act_batch(&self, obs: &Tensor, rng: &mut LabRng) -> Vec<ActorSample>;
}

/// Deterministic actor from a closure over the observation.
pub struct FnActor<F>(pub F);

impl<F: Fn(&[f64]) -> Vec<f64>> Actor for FnActor<F> {
    fn act_batch(&self, obs: &Tensor, _rng: &mut LabRng) -> Vec<ActorSample> {
        (0..obs.rows())
            .map(|i| ActorSample {
                action: (self.0)(obs.row(i)),
                component: 1,
                log_prob: 0.0,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RewardMode {
    /// Sum the rewards the environment emits.
    #[default]
    Sampled,
    /// Sum `E[r | s, a]` instead; same expectation, no reward noise.
    Expected,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct McOptions {
    pub reward: RewardMode,
    /// When set, adds `-alpha * gamma^t * log pi(a_t | s_t)` for `t >= 1`
    /// (soft value of the first state-action pair).
    pub soft_alpha: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

impl McEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        Self {
            mean: stats::mean(xs),
            std_err: stats::std_err(xs),
            n: xs.len(),
        }
    }
}

/// Mean discounted return from `start` with the first action drawn by `actor`.
pub fn mc_return(
    env: &Env,
    actor: &dyn Actor,
    start: &EnvState,
    n_rollouts: usize,
    horizon: usize,
    rng: &mut LabRng,
    opts: McOptions,
) -> Result<McEstimate> {
    if n_rollouts == 0 {
        return Err(Error::invalid("mc_return needs at least one rollout"));
    }
    let starts = vec![start.clone(); n_rollouts];
    let returns = rollout_returns(env, actor, &starts, None, horizon, rng, opts)?;
    Ok(McEstimate::from_samples(&returns))
}

/// One discounted return per start state, all rollouts advanced in lockstep
/// so the actor sees one batch per time step. `first_actions`, when given,
/// replaces the actor's choice at `t = 0`.
pub fn rollout_returns(
    env: &Env,
    actor: &dyn Actor,
    starts: &[EnvState],
    first_actions: Option<&[Vec<f64>]>,
    horizon: usize,
    rng: &mut LabRng,
    opts: McOptions,
) -> Result<Vec<f64>> {
    if let Some(fa) = first_actions {
        if fa.len() != starts.len() {
            return Err(Error::invalid("one first action per start state"));
        }
    }
    let gamma = env.spec().gamma;
    let mut states: Vec<EnvState> = starts.to_vec();
    let mut alive: Vec<bool> = vec![true; starts.len()];
    let mut returns = vec![0.0; starts.len()];
    let mut discount = 1.0;
    for t in 0..horizon {
        let live: Vec<usize> = (0..states.len()).filter(|&i| alive[i]).collect();
        if live.is_empty() {
            break;
        }
        let obs: Vec<Vec<f64>> = live.iter().map(|&i| env.observe(&states[i])).collect();
        let obs = Tensor::from_rows(&obs)?;
        let samples = actor.act_batch(&obs, rng);
        for (k, &i) in live.iter().enumerate() {
            let action = match (t, first_actions) {
                (0, Some(fa)) => &fa[i],
                _ => &samples[k].action,
            };
            let step = env.step(&states[i], action, rng)?;
            let r = match opts.reward {
                RewardMode::Sampled => step.reward,
                RewardMode::Expected => env.mean_reward(&states[i], action)?,
            };
            returns[i] += discount * r;
            if let (Some(alpha), true) = (opts.soft_alpha, t >= 1) {
                returns[i] -= discount * alpha * samples[k].log_prob;
            }
            if step.terminal {
                alive[i] = false;
            }
            states[i] = step.state;
            if step.truncated {
                states[i].step = 0;
            }
        }
        discount *= gamma;
    }
    Ok(returns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn zero_actor() -> FnActor<impl Fn(&[f64]) -> Vec<f64>> {
        FnActor(|_: &[f64]| vec![0.0])
    }

    #[test]
    fn deterministic_rollouts_have_zero_std_err() {
        let env = Env::by_name("point-mass").unwrap();
        let s = env.reset(3);
        let est = mc_return(&env, &zero_actor(), &s, 5, 300, &mut seeded(0), McOptions::default())
            .unwrap();
        assert_eq!(est.std_err, 0.0);
        assert_eq!(est.n, 5);
    }

    #[test]
    fn point_mass_at_rest_matches_geometric_series() {
        let env = Env::by_name("point-mass").unwrap();
        let s = EnvState {
            coords: vec![1.0, 0.0],
            step: 0,
        };
        let gamma: f64 = 0.99;
        for horizon in [1usize, 50, 200, 450] {
            let est = mc_return(&env, &zero_actor(), &s, 2, horizon, &mut seeded(0), McOptions::default())
                .unwrap();
            let oracle = -(1.0 - gamma.powi(horizon as i32)) / (1.0 - gamma);
            assert!((est.mean - oracle).abs() < 1e-10, "{horizon}: {} vs {oracle}", est.mean);
        }
    }

    #[test]
    fn bandit_mean_return_tends_to_zero() {
        let env = Env::by_name("noisy-bandit").unwrap();
        let s = env.reset(0);
        let est = mc_return(&env, &zero_actor(), &s, 20_000, 10, &mut seeded(2), McOptions::default())
            .unwrap();
        assert!(est.mean.abs() < 3.0 * est.std_err, "{est:?}");
        let exp = mc_return(
            &env,
            &zero_actor(),
            &s,
            10,
            10,
            &mut seeded(2),
            McOptions {
                reward: RewardMode::Expected,
                soft_alpha: None,
            },
        )
        .unwrap();
        assert_eq!((exp.mean, exp.std_err), (0.0, 0.0));
    }

    #[test]
    fn zero_rollouts_rejected() {
        let env = Env::by_name("noisy-bandit").unwrap();
        assert!(mc_return(&env, &zero_actor(), &env.reset(0), 0, 1, &mut seeded(0), McOptions::default())
            .is_err());
    }

    #[test]
    fn soft_return_skips_first_action() {
        struct Const;
        impl Actor for Const {
            fn act_batch(&self, obs: &Tensor, _: &mut LabRng) -> Vec<ActorSample> {
                vec![
                    ActorSample {
                        action: vec![0.0],
                        component: 1,
                        log_prob: -1.0
                    };
                    obs.rows()
                ]
            }
        }
        let env = Env::by_name("point-mass").unwrap().with_gamma(0.5).unwrap();
        let s = EnvState {
            coords: vec![0.0, 0.0],
            step: 0,
        };
        let opts = McOptions {
            reward: RewardMode::Sampled,
            soft_alpha: Some(2.0),
        };
        let r = rollout_returns(&env, &Const, &[s], None, 3, &mut seeded(0), opts).unwrap();
        // rewards are 0; entropy bonus 2 * (0.5 + 0.25)
        assert!((r[0] - 1.5).abs() < 1e-15);
    }
}
