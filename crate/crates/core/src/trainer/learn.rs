//! Target construction and losses for every variant, written against
//! explicit noise and borrowed nets so each piece can be checked alone.

use std::f64::consts::LN_2;

use rand::Rng;

use super::config::Variant;
use crate::autodiff::{BoundMlp, Tape, Tensor, Var};
use crate::critic::{naive_target, soft_pooled_target, AssessedAtoms, CriticEnsemble, CriticKind, Which, KAPPA};
use crate::error::{Error, Result};
use crate::policy::{rsample_from, tape_log_prob, BoundComponent, MixturePolicy, SquashedSample};
use crate::replay::Batch;
use crate::rng::LabRng;

/// Counts of `(component, assessing critic)` pairs seen while building
/// targets for the mixture variants. Indices are 1-based.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AssignmentAudit {
    counts: [[u64; 2]; 2],
}

impl AssignmentAudit {
    pub fn record(&mut self, component: usize, critic: usize) {
        self.counts[component - 1][critic - 1] += 1;
    }

    pub fn count(&self, component: usize, critic: usize) -> u64 {
        self.counts[component - 1][critic - 1]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Pairs where a component was assessed by the critic that optimizes it.
    pub fn same(&self) -> u64 {
        self.counts[0][0] + self.counts[1][1]
    }

    pub fn crossed(&self) -> u64 {
        self.counts[0][1] + self.counts[1][0]
    }
}

/// Everything a target needs besides the batch.
pub struct TargetContext<'a> {
    pub variant: Variant,
    pub gamma: f64,
    /// Atoms kept per critic (`tqc`).
    pub top_k: usize,
    pub alpha: f64,
    pub policy: &'a MixturePolicy,
    pub critics: &'a CriticEnsemble,
}

/// The critic (1-based) assessing `component` in targets, for the fixed
/// pairings. `None` for the random pairing and for single-policy variants.
pub fn assessing_critic(variant: Variant, component: usize) -> Option<usize> {
    match variant {
        Variant::Cdq => Some(3 - component),
        Variant::CdqSame => Some(component),
        _ => None,
    }
}

fn row_means(z: &Tensor) -> Vec<f64> {
    z.data().chunks(z.cols()).map(|r| r.iter().sum::<f64>() / r.len() as f64).collect()
}

/// Next-state actions `a'_c` drawn with `noise[c]` and their log-densities:
/// the mixture density for mixture variants, component 1's otherwise.
fn next_actions(ctx: &TargetContext<'_>, next_states: &Tensor, noise: &[Tensor; 2]) -> Result<Vec<(SquashedSample, Vec<f64>)>> {
    if ctx.variant.uses_mixture() {
        Ok(ctx.policy.sample_each(next_states, noise)?.into())
    } else {
        let s = ctx.policy.components[0].sample_with_noise(next_states, &noise[0])?;
        let lp = s.log_probs.clone();
        Ok(vec![(s, lp)])
    }
}

/// TD targets `[B, T]` from the target critics: `T = 1` for scalar critics,
/// otherwise the ascending target atoms of each row.
pub fn build_targets(
    ctx: &TargetContext<'_>,
    batch: &Batch,
    noise: &[Tensor; 2],
    assign_rng: &mut LabRng,
    audit: &mut AssignmentAudit,
) -> Result<Tensor> {
    let b = batch.len();
    let s2 = &batch.next_states;
    let scalar = ctx.critics.kind == CriticKind::Scalar;
    let next = next_actions(ctx, s2, noise)?;
    let (g, alpha) = (ctx.gamma, ctx.alpha);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(b);

    if !ctx.variant.uses_mixture() {
        let (a, logp) = (&next[0].0.actions, &next[0].1);
        let z = (0..ctx.critics.len())
            .map(|i| ctx.critics.evaluate(Which::Target, i, s2, a))
            .collect::<Result<Vec<_>>>()?;
        let means: Vec<Vec<f64>> = z.iter().map(row_means).collect();
        let keep = ctx.top_k * z.len();
        for j in 0..b {
            let (r, done, ent) = (batch.rewards[j], batch.dones[j], alpha * logp[j]);
            let soft: Vec<f64> = means.iter().map(|m| m[j] - ent).collect();
            let row = match (ctx.variant, scalar) {
                (Variant::Td3Clip, _) => vec![crate::critic::clipped_target(&soft, r, done, g)?],
                (_, true) => vec![naive_target(&soft, r, done, g)],
                (variant, false) => {
                    let parts: Vec<AssessedAtoms<'_>> = z
                        .iter()
                        .map(|t| AssessedAtoms {
                            atoms: t.row(j),
                            log_prob: logp[j],
                        })
                        .collect();
                    let keep = (variant == Variant::Tqc).then_some(keep);
                    soft_pooled_target(&parts, keep, r, done, g, alpha)
                }
            };
            rows.push(row);
        }
        return Tensor::from_rows(&rows);
    }

    // assessing critic (0-based) per row and component
    let picks: Vec<[usize; 2]> = match ctx.variant {
        Variant::CdqRandom => (0..b)
            .map(|_| [assign_rng.random_range(0..2), assign_rng.random_range(0..2)])
            .collect(),
        v => {
            let p = [assessing_critic(v, 1).unwrap() - 1, assessing_critic(v, 2).unwrap() - 1];
            vec![p; b]
        }
    };
    // z[c][i] = critic i at a'_c, evaluated only where needed
    let mut z: [[Option<Tensor>; 2]; 2] = Default::default();
    for c in 0..2 {
        for i in 0..2 {
            if picks.iter().any(|p| p[c] == i) {
                z[c][i] = Some(ctx.critics.evaluate(Which::Target, i, s2, &next[c].0.actions)?);
            }
        }
    }
    for (j, p) in picks.iter().enumerate() {
        let (r, done) = (batch.rewards[j], batch.dones[j]);
        let atoms = |c: usize| z[c][p[c]].as_ref().expect("evaluated").row(j);
        for (c, &i) in p.iter().enumerate() {
            audit.record(c + 1, i + 1);
        }
        let row = if scalar {
            let soft: Vec<f64> = (0..2).map(|c| atoms(c)[0] - alpha * next[c].1[j]).collect();
            vec![naive_target(&soft, r, done, g)]
        } else {
            let parts: Vec<AssessedAtoms<'_>> = (0..2)
                .map(|c| AssessedAtoms {
                    atoms: atoms(c),
                    log_prob: next[c].1[j],
                })
                .collect();
            soft_pooled_target(&parts, None, r, done, g, alpha)
        };
        rows.push(row);
    }
    Tensor::from_rows(&rows)
}

/// Regression loss of each bound critic on `(states, actions)` against
/// `targets`: squared error for scalar critics, quantile Huber otherwise.
pub fn critic_losses<'t>(
    critics: &[&BoundMlp<'t>],
    kind: CriticKind,
    taus: &[f64],
    inputs: Var<'t>,
    targets: &Tensor,
) -> Result<Vec<Var<'t>>> {
    let tape = inputs.tape();
    critics
        .iter()
        .map(|net| {
            let pred = net.forward(inputs)?;
            Ok(match kind {
                CriticKind::Scalar => pred.sub(tape.constant(targets.clone())).square().mean(),
                CriticKind::Quantile { .. } => pred.quantile_huber(targets, taus, KAPPA),
            })
        })
        .collect()
}

/// Actor losses and the detached log-densities of the sampled actions.
pub struct ActorLosses<'t> {
    /// One loss per learning component (two for mixture variants, one otherwise).
    pub per_component: Vec<Var<'t>>,
    pub log_probs: Vec<f64>,
}

/// Actor objective on a tape. `states[c]` and `noise[c]` feed component
/// `c + 1`; single-policy variants use only the first entry.
///
/// Mixture variants: component `i` minimizes
/// `mean[alpha log pi(a_i) - Q_i(s, a_i)]` with `pi` the mixture density.
/// Single-policy variants minimize `mean[alpha log pi_1(a) - agg_i Q_i(s, a)]`
/// with `agg` the mean (`naive`), the minimum (`td3-clip`), or the
/// truncated mean of all pooled atoms (`tqc`).
#[allow(clippy::too_many_arguments)]
pub fn actor_losses<'t>(
    tape: &'t Tape,
    variant: Variant,
    top_k: usize,
    alpha: f64,
    components: &[BoundComponent<'t>; 2],
    critics: &[BoundMlp<'t>],
    states: [&Tensor; 2],
    noise: &[Tensor; 2],
) -> Result<ActorLosses<'t>> {
    let mut per_component = Vec::new();
    let mut log_probs = Vec::new();
    if variant.uses_mixture() {
        let shared = std::ptr::eq(states[0], states[1]) || states[0] == states[1];
        let s = [tape.constant(states[0].clone()), tape.constant(states[1].clone())];
        let d0 = [components[0].distribution(s[0])?, components[1].distribution(s[0])?];
        let d1 = if shared {
            d0
        } else {
            [components[0].distribution(s[1])?, components[1].distribution(s[1])?]
        };
        for (c, dists) in [d0, d1].iter().enumerate() {
            let smp = rsample_from(dists[c].0, dists[c].1, &noise[c]);
            let (m_o, ls_o) = dists[1 - c];
            let own = tape_log_prob(smp.pre, smp.mean, smp.log_std);
            let other = tape_log_prob(smp.pre, m_o, ls_o);
            let logpi = own.log_add_exp(other).add_scalar(-LN_2);
            let q = critics[c].forward(s[c].concat_cols(smp.action))?.mean_cols();
            log_probs.extend_from_slice(logpi.value().data());
            per_component.push(logpi.scale(alpha).sub(q).mean());
        }
    } else {
        let s = tape.constant(states[0].clone());
        let smp = components[0].rsample(s, &noise[0])?;
        let logpi = tape_log_prob(smp.pre, smp.mean, smp.log_std);
        let input = s.concat_cols(smp.action);
        let outs = critics.iter().map(|c| c.forward(input)).collect::<Result<Vec<_>>>()?;
        let agg = match variant {
            Variant::Naive => {
                let sum = outs.iter().skip(1).fold(outs[0].mean_cols(), |acc, z| acc.add(z.mean_cols()));
                sum.scale(1.0 / outs.len() as f64)
            }
            Variant::Td3Clip => outs.iter().skip(1).fold(outs[0].mean_cols(), |acc, z| acc.min(z.mean_cols())),
            Variant::Tqc => {
                let pooled = outs.iter().skip(1).fold(outs[0], |acc, z| acc.concat_cols(*z));
                pooled.truncated_mean_cols(top_k * outs.len())
            }
            _ => unreachable!("mixture variants handled above"),
        };
        log_probs.extend_from_slice(logpi.value().data());
        per_component.push(logpi.scale(alpha).sub(agg).mean());
    }
    if per_component.iter().any(|l| !l.item().is_finite()) {
        return Err(Error::NonFinite("actor loss".into()));
    }
    Ok(ActorLosses { per_component, log_probs })
}

/// Gradient of `-log(alpha) * mean(log_pi + target_entropy)` with respect
/// to `log(alpha)`.
pub fn temperature_gradient(log_probs: &[f64], target_entropy: f64) -> f64 {
    -log_probs.iter().map(|l| l + target_entropy).sum::<f64>() / log_probs.len() as f64
}
