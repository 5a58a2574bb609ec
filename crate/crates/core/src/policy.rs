//! Tanh-squashed Gaussian components and the equal-weight two-component
//! mixture `pi = (pi_1 + pi_2) / 2`.
//!
//! A component net maps a state to `(mean, log_std)` of a diagonal Gaussian
//! over the pre-squash variable `u`; the action is `tanh(u)`. Densities are
//! evaluated in terms of `u`, so the change-of-variables term
//! `-sum log(1 - tanh(u)^2)` never loses precision near the bounds.

use std::f64::consts::LN_2;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{softplus, BoundMlp, MlpNet, Tape, Tensor, Var};
use crate::envs::{Actor, ActorSample};
use crate::error::{Error, Result};
use crate::rng::LabRng;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
/// Largest action magnitude emitted; keeps actions strictly inside (-1, 1)
/// where `tanh` would round to +-1.
pub const ACTION_LIMIT: f64 = 1.0 - 1e-12;

/// `log(1 - tanh(u)^2)` in a form that is exact for large `|u|`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

/// Log-density of `a = tanh(u)` when `u ~ N(mean, exp(log_std)^2)`.
pub fn squashed_log_prob(u: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    u.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&u, &m), &ls)| {
            let z = (u - m) * (-ls).exp();
            -0.5 * z * z - ls - HALF_LN_2PI - log_one_minus_tanh_sq(u)
        })
        .sum()
}

/// Pre-squash value of an action; rejects `|a| >= 1`.
pub fn atanh_checked(action: &[f64]) -> Result<Vec<f64>> {
    action
        .iter()
        .map(|&a| {
            if a.is_finite() && a.abs() < 1.0 {
                Ok(a.atanh())
            } else {
                Err(Error::invalid(format!(
                    "action component {a} outside the open interval (-1, 1)"
                )))
            }
        })
        .collect()
}

fn squash(u: f64) -> f64 {
    crate::autodiff::tanh(u).clamp(-ACTION_LIMIT, ACTION_LIMIT)
}

/// Batch of squashed samples with their pre-squash values.
#[derive(Debug, Clone)]
pub struct SquashedSample {
    pub pre: Tensor,
    pub actions: Tensor,
    /// Log-density under the generating component.
    pub log_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    net: MlpNet,
    action_dim: usize,
}

impl GaussianComponent {
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut LabRng) -> Result<Self> {
        let mut widths = vec![state_dim];
        widths.extend_from_slice(hidden);
        widths.push(2 * action_dim);
        Ok(Self {
            net: MlpNet::new(&widths, rng)?,
            action_dim,
        })
    }

    /// Wraps a net whose output is `[mean | log_std]`.
    pub fn from_net(net: MlpNet) -> Result<Self> {
        if !net.out_dim().is_multiple_of(2) {
            return Err(Error::invalid("component net needs an even output width"));
        }
        let action_dim = net.out_dim() / 2;
        Ok(Self { net, action_dim })
    }

    pub fn net(&self) -> &MlpNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut MlpNet {
        &mut self.net
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// `(mean, log_std)` per row, log-std clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn distribution(&self, states: &Tensor) -> Result<(Tensor, Tensor)> {
        let out = self.net.forward(states)?;
        let d = self.action_dim;
        Ok((
            out.slice_cols(0, d),
            out.slice_cols(d, d).map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)),
        ))
    }

    /// Samples with caller-provided standard-normal noise `[B, d]`.
    pub fn sample_with_noise(&self, states: &Tensor, noise: &Tensor) -> Result<SquashedSample> {
        let (mean, log_std) = self.distribution(states)?;
        sample_from(&mean, &log_std, noise)
    }

    pub fn sample_batch(&self, states: &Tensor, rng: &mut LabRng) -> Result<SquashedSample> {
        let noise = standard_normal(states.rows(), self.action_dim, rng);
        self.sample_with_noise(states, &noise)
    }

    /// One reparameterized draw: `(action, log pi_i(action | state))`.
    pub fn sample(&self, state: &[f64], rng: &mut LabRng) -> Result<(Vec<f64>, f64)> {
        let s = self.sample_batch(&Tensor::matrix(1, state.len(), state.to_vec()), rng)?;
        Ok((s.actions.row(0).to_vec(), s.log_probs[0]))
    }

    /// Log-density of pre-squash values `pre` (`[B, d]`) per row.
    pub fn log_prob_pre(&self, states: &Tensor, pre: &Tensor) -> Result<Vec<f64>> {
        let (mean, log_std) = self.distribution(states)?;
        Ok(log_prob_rows(pre, &mean, &log_std))
    }

    /// Places the component on a tape.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundComponent<'t> {
        BoundComponent {
            net: self.net.bind(tape, trainable),
            action_dim: self.action_dim,
        }
    }
}

pub fn standard_normal(rows: usize, cols: usize, rng: &mut LabRng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect())
}

/// Reparameterized draw `tanh(mean + exp(log_std) * noise)` from given
/// distribution parameters.
pub fn sample_from(mean: &Tensor, log_std: &Tensor, noise: &Tensor) -> Result<SquashedSample> {
    if noise.shape() != mean.shape() {
        return Err(Error::ShapeMismatch {
            op: "sample_from",
            expected: format!("{:?}", mean.shape()),
            got: format!("{:?}", noise.shape()),
        });
    }
    let pre = Tensor::matrix(
        mean.rows(),
        mean.cols(),
        mean.data()
            .iter()
            .zip(log_std.data())
            .zip(noise.data())
            .map(|((m, ls), e)| m + ls.exp() * e)
            .collect(),
    );
    let log_probs = log_prob_rows(&pre, mean, log_std);
    Ok(SquashedSample {
        actions: pre.map(squash),
        pre,
        log_probs,
    })
}

/// Per-row squashed log-density of `pre` under `(mean, log_std)`.
pub fn log_prob_rows(pre: &Tensor, mean: &Tensor, log_std: &Tensor) -> Vec<f64> {
    (0..pre.rows())
        .map(|i| squashed_log_prob(pre.row(i), mean.row(i), log_std.row(i)))
        .collect()
}

/// Component distribution and reparameterized sample on a tape.
pub struct TapeSample<'t> {
    pub mean: Var<'t>,
    pub log_std: Var<'t>,
    pub pre: Var<'t>,
    pub action: Var<'t>,
}

pub struct BoundComponent<'t> {
    pub net: BoundMlp<'t>,
    action_dim: usize,
}

impl<'t> BoundComponent<'t> {
    pub fn distribution(&self, states: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let out = self.net.forward(states)?;
        let d = self.action_dim;
        Ok((
            out.slice_cols(0, d),
            out.slice_cols(d, d).clamp(LOG_STD_MIN, LOG_STD_MAX),
        ))
    }

    /// `a = tanh(mean + exp(log_std) * noise)` with gradients to the parameters.
    pub fn rsample(&self, states: Var<'t>, noise: &Tensor) -> Result<TapeSample<'t>> {
        let (mean, log_std) = self.distribution(states)?;
        Ok(rsample_from(mean, log_std, noise))
    }
}

/// Reparameterized sample from distribution parameters already on a tape.
pub fn rsample_from<'t>(mean: Var<'t>, log_std: Var<'t>, noise: &Tensor) -> TapeSample<'t> {
    let tape = mean.tape();
    let pre = mean.add(log_std.exp().mul(tape.constant(noise.clone())));
    let action = pre.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT);
    TapeSample {
        mean,
        log_std,
        pre,
        action,
    }
}

/// Row-wise squashed log-density `[B, 1]` of `pre` under `(mean, log_std)`.
pub fn tape_log_prob<'t>(pre: Var<'t>, mean: Var<'t>, log_std: Var<'t>) -> Var<'t> {
    let z = pre.sub(mean).mul(log_std.neg().exp());
    // log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u))
    let log_jac = pre.add(pre.scale(-2.0).softplus()).scale(-2.0).add_scalar(2.0 * LN_2);
    z.square()
        .scale(-0.5)
        .sub(log_std)
        .add_scalar(-HALF_LN_2PI)
        .sub(log_jac)
        .sum_cols()
}

/// Equal-weight mixture of exactly two squashed-Gaussian components.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePolicy {
    pub components: [GaussianComponent; 2],
}

impl MixturePolicy {
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut LabRng) -> Result<Self> {
        Ok(Self {
            components: [
                GaussianComponent::new(state_dim, action_dim, hidden, rng)?,
                GaussianComponent::new(state_dim, action_dim, hidden, rng)?,
            ],
        })
    }

    pub fn from_components(c1: GaussianComponent, c2: GaussianComponent) -> Result<Self> {
        if c1.action_dim != c2.action_dim || c1.net.in_dim() != c2.net.in_dim() {
            return Err(Error::invalid("mixture components must share state and action dims"));
        }
        Ok(Self {
            components: [c1, c2],
        })
    }

    pub fn action_dim(&self) -> usize {
        self.components[0].action_dim
    }

    /// 1-based component accessor.
    pub fn component(&self, id: usize) -> &GaussianComponent {
        &self.components[id - 1]
    }

    /// `(mean, log_std)` of both components at `states`.
    pub fn distributions(&self, states: &Tensor) -> Result<[(Tensor, Tensor); 2]> {
        Ok([self.components[0].distribution(states)?, self.components[1].distribution(states)?])
    }

    /// `[log pi_1, log pi_2]` of the pre-squash rows `pre`.
    pub fn component_log_probs_pre(&self, states: &Tensor, pre: &Tensor) -> Result<[Vec<f64>; 2]> {
        let [d1, d2] = self.distributions(states)?;
        Ok([log_prob_rows(pre, &d1.0, &d1.1), log_prob_rows(pre, &d2.0, &d2.1)])
    }

    /// Mixture log-density of pre-squash rows.
    pub fn log_prob_pre(&self, states: &Tensor, pre: &Tensor) -> Result<Vec<f64>> {
        let [l1, l2] = self.component_log_probs_pre(states, pre)?;
        Ok(l1.iter().zip(&l2).map(|(&a, &b)| mixture_log(a, b)).collect())
    }

    /// One draw from each component with `noise[c]`, each paired with the
    /// mixture log-density of its rows.
    pub fn sample_each(&self, states: &Tensor, noise: &[Tensor; 2]) -> Result<[(SquashedSample, Vec<f64>); 2]> {
        let dists = self.distributions(states)?;
        let draw = |c: usize| -> Result<(SquashedSample, Vec<f64>)> {
            let s = sample_from(&dists[c].0, &dists[c].1, &noise[c])?;
            let other = log_prob_rows(&s.pre, &dists[1 - c].0, &dists[1 - c].1);
            let mix = s.log_probs.iter().zip(&other).map(|(&a, &b)| mixture_log(a, b)).collect();
            Ok((s, mix))
        };
        Ok([draw(0)?, draw(1)?])
    }

    /// `log pi(a | s)`; rejects actions on or outside the boundary.
    pub fn mixture_log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        if action.len() != self.action_dim() {
            return Err(Error::ShapeMismatch {
                op: "mixture_log_prob",
                expected: format!("action of dimension {}", self.action_dim()),
                got: format!("{}", action.len()),
            });
        }
        let u = atanh_checked(action)?;
        let s = Tensor::matrix(1, state.len(), state.to_vec());
        let pre = Tensor::matrix(1, u.len(), u);
        Ok(self.log_prob_pre(&s, &pre)?[0])
    }

    /// Uniform component choice, then a draw from that component.
    /// Returns `(action, component_id, log pi(action | state))`.
    pub fn sample_mixture(&self, state: &[f64], rng: &mut LabRng) -> Result<(Vec<f64>, usize, f64)> {
        let s = Tensor::matrix(1, state.len(), state.to_vec());
        let out = self.sample_mixture_batch(&s, rng)?;
        let ActorSample {
            action,
            component,
            log_prob,
        } = out.into_iter().next().unwrap();
        Ok((action, component, log_prob))
    }

    pub fn sample_mixture_batch(&self, states: &Tensor, rng: &mut LabRng) -> Result<Vec<ActorSample>> {
        let n = states.rows();
        let ids: Vec<usize> = (0..n).map(|_| if rng.random_bool(0.5) { 1 } else { 2 }).collect();
        let noise = standard_normal(n, self.action_dim(), rng);
        let draws = self.sample_each(states, &[noise.clone(), noise])?;
        Ok(ids
            .iter()
            .enumerate()
            .map(|(i, &c)| ActorSample {
                action: draws[c - 1].0.actions.row(i).to_vec(),
                component: c,
                log_prob: draws[c - 1].1[i],
            })
            .collect())
    }

    /// Monte-Carlo estimate of `E[-log pi(a | s)]` over `states` and mixture draws.
    pub fn entropy_estimate(&self, states: &Tensor, rng: &mut LabRng, n_samples: usize) -> Result<f64> {
        if n_samples == 0 {
            return Err(Error::invalid("entropy_estimate needs n_samples >= 1"));
        }
        let reps: Vec<usize> = (0..states.rows())
            .flat_map(|i| std::iter::repeat_n(i, n_samples))
            .collect();
        let tiled = states.gather_rows(&reps);
        let draws = self.sample_mixture_batch(&tiled, rng)?;
        Ok(-draws.iter().map(|d| d.log_prob).sum::<f64>() / draws.len() as f64)
    }
}

/// `log((e^a + e^b) / 2)`.
pub fn mixture_log(a: f64, b: f64) -> f64 {
    crate::autodiff::log_add_exp(a, b) - LN_2
}

/// How a [`MixturePolicy`] acts in the environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActingMode {
    /// Uniform component choice; log-probs are mixture densities.
    Mixture,
    /// Only the given component acts; log-probs are that component's.
    Component(usize),
}

pub struct ActingPolicy<'a> {
    pub policy: &'a MixturePolicy,
    pub mode: ActingMode,
}

impl Actor for ActingPolicy<'_> {
    fn act_batch(&self, obs: &Tensor, rng: &mut LabRng) -> Vec<ActorSample> {
        let result = match self.mode {
            ActingMode::Mixture => self.policy.sample_mixture_batch(obs, rng),
            ActingMode::Component(c) => self.policy.component(c).sample_batch(obs, rng).map(|s| {
                (0..obs.rows())
                    .map(|i| ActorSample {
                        action: s.actions.row(i).to_vec(),
                        component: c,
                        log_prob: s.log_probs[i],
                    })
                    .collect()
            }),
        };
        result.expect("observation width matches the policy")
    }
}
