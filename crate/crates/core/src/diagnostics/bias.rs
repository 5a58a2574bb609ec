use crate::autodiff::Tensor;
use crate::envs::{rollout_returns, Actor, Env, EnvState, McOptions};
use crate::error::{Error, Result};
use crate::rng::{stream, LabRng, Stream};
use crate::stats;

/// Seed reserved for probe states, shared by every run so that bias curves
/// of different seeds and variants are taken at the same states.
pub const PROBE_SEED: u64 = 0x5eed_9e0b;

/// The first `n` reset states under [`PROBE_SEED`].
pub fn probe_states(env: &Env, n: usize) -> Vec<EnvState> {
    let mut rng = stream(PROBE_SEED, Stream::Probe);
    (0..n).map(|_| env.reset_with(&mut rng)).collect()
}

/// A critic-derived value for state-action pairs.
pub trait ValueEstimator {
    /// One estimate per row of `(obs, actions)`; `components[i]` is the
    /// mixture component that drew `actions[i]`.
    fn estimate(&self, obs: &Tensor, actions: &Tensor, components: &[usize]) -> Result<Vec<f64>>;
}

/// Estimator from a closure over one `(obs, action)` pair.
pub struct FnEstimator<F>(pub F);

impl<F: Fn(&[f64], &[f64]) -> f64> ValueEstimator for FnEstimator<F> {
    fn estimate(&self, obs: &Tensor, actions: &Tensor, _components: &[usize]) -> Result<Vec<f64>> {
        Ok((0..obs.rows()).map(|i| (self.0)(obs.row(i), actions.row(i))).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasReport {
    pub step: usize,
    pub probes: usize,
    /// Total sampled `(state, action)` pairs.
    pub samples: usize,
    pub estimate: f64,
    pub estimate_se: f64,
    pub mc_return: f64,
    pub mc_return_se: f64,
    /// Standard error of the per-sample difference.
    pub bias_se: f64,
}

impl BiasReport {
    pub fn bias(&self) -> f64 {
        self.estimate - self.mc_return
    }
}

/// On-policy bias at `probes`: for each probe state draw `n_rollouts`
/// actions from `actor`, read the estimator there, and compare with the
/// discounted return of continuing under `actor` from that same pair.
#[allow(clippy::too_many_arguments)]
pub fn measure_bias(
    env: &Env,
    actor: &dyn Actor,
    estimator: &dyn ValueEstimator,
    probes: &[EnvState],
    n_rollouts: usize,
    horizon: usize,
    rng: &mut LabRng,
    opts: McOptions,
    step: usize,
) -> Result<BiasReport> {
    if probes.is_empty() || n_rollouts == 0 {
        return Err(Error::invalid("bias needs at least one probe state and one rollout"));
    }
    let limit = env.spec().max_steps;
    if horizon < limit {
        return Err(Error::invalid(format!(
            "bias horizon {horizon} is shorter than the episode limit {limit}"
        )));
    }
    let starts: Vec<EnvState> = probes
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.clone(), n_rollouts))
        .collect();
    let obs: Vec<Vec<f64>> = starts.iter().map(|s| env.observe(s)).collect();
    let obs = Tensor::from_rows(&obs)?;
    let draws = actor.act_batch(&obs, rng);
    let actions: Vec<Vec<f64>> = draws.iter().map(|d| d.action.clone()).collect();
    let components: Vec<usize> = draws.iter().map(|d| d.component).collect();
    let estimates = estimator.estimate(&obs, &Tensor::from_rows(&actions)?, &components)?;
    let returns = rollout_returns(env, actor, &starts, Some(&actions), horizon, rng, opts)?;
    let diffs: Vec<f64> = estimates.iter().zip(&returns).map(|(q, g)| q - g).collect();
    Ok(BiasReport {
        step,
        probes: probes.len(),
        samples: starts.len(),
        estimate: stats::mean(&estimates),
        estimate_se: stats::std_err(&estimates),
        mc_return: stats::mean(&returns),
        mc_return_se: stats::std_err(&returns),
        bias_se: stats::std_err(&diffs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{FnActor, RewardMode};
    use crate::rng::seeded;

    fn zero_actor() -> FnActor<impl Fn(&[f64]) -> Vec<f64>> {
        FnActor(|_: &[f64]| vec![0.0])
    }

    #[test]
    fn probe_states_are_fixed() {
        let env = Env::by_name("pendulum").unwrap();
        let a = probe_states(&env, 16);
        assert_eq!(a.len(), 16);
        assert_eq!(a, probe_states(&env, 16));
        assert_eq!(a[..4], probe_states(&env, 4)[..]);
    }

    #[test]
    fn constant_critic_on_bandit_gives_its_value() {
        let env = Env::by_name("noisy-bandit").unwrap();
        let probes = probe_states(&env, 16);
        let opts = McOptions {
            reward: RewardMode::Expected,
            soft_alpha: None,
        };
        let c = 0.37;
        let rep = measure_bias(&env, &zero_actor(), &FnEstimator(|_: &[f64], _: &[f64]| c), &probes, 3, 1, &mut seeded(0), opts, 7)
            .unwrap();
        assert_eq!(rep.mc_return, 0.0);
        assert_eq!(rep.bias(), rep.estimate);
        assert!((rep.estimate - c).abs() < 1e-12);
        assert_eq!(rep.step, 7);
        assert_eq!(rep.samples, 48);
    }

    #[test]
    fn zero_policy_point_mass_matches_geometric_oracle() {
        let env = Env::by_name("point-mass").unwrap();
        let gamma: f64 = env.spec().gamma;
        let probes = vec![EnvState {
            coords: vec![0.5, 0.0],
            step: 0,
        }];
        let horizon = 2000;
        let oracle = -0.25 * (1.0 - gamma.powi(horizon as i32)) / (1.0 - gamma);
        let rep = measure_bias(&env, &zero_actor(), &FnEstimator(|_: &[f64], _: &[f64]| 1.5), &probes, 2, horizon, &mut seeded(1), McOptions::default(), 0)
            .unwrap();
        assert!((rep.bias() - (1.5 - oracle)).abs() < 1e-9);
    }

    #[test]
    fn short_horizon_rejected() {
        let env = Env::by_name("point-mass").unwrap();
        let probes = probe_states(&env, 1);
        let est = FnEstimator(|_: &[f64], _: &[f64]| 0.0);
        assert!(measure_bias(&env, &zero_actor(), &est, &probes, 1, 10, &mut seeded(0), McOptions::default(), 0).is_err());
    }
}
