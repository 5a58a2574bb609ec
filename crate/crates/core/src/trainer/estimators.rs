use super::config::{AlgoConfig, Variant};
use crate::autodiff::Tensor;
use crate::critic::{CriticEnsemble, Which};
use crate::diagnostics::ValueEstimator;
use crate::envs::{Actor, ActorSample};
use crate::error::Result;
use crate::policy::{MixturePolicy, ACTION_LIMIT};
use crate::rng::LabRng;

/// A variant's own reading of its critics at `(s, a)`: the value its target
/// construction would assign to that action.
///
/// | variant      | value for an action of component `c`      |
/// |--------------|-------------------------------------------|
/// | `naive`      | mean over critics                         |
/// | `td3-clip`   | minimum over critics                      |
/// | `tqc`        | mean of the `k N` smallest pooled atoms   |
/// | `cdq`        | the other critic, `3 - c`                 |
/// | `cdq-same`   | critic `c`                                |
/// | `cdq-random` | mean of both critics (the coin's average) |
pub struct AssessedValue<'a> {
    pub variant: Variant,
    pub top_k: usize,
    pub critics: &'a CriticEnsemble,
}

impl<'a> AssessedValue<'a> {
    pub fn new(config: &AlgoConfig, critics: &'a CriticEnsemble) -> Self {
        Self {
            variant: config.variant,
            top_k: config.top_k,
            critics,
        }
    }
}

impl ValueEstimator for AssessedValue<'_> {
    fn estimate(&self, obs: &Tensor, actions: &Tensor, components: &[usize]) -> Result<Vec<f64>> {
        let n = self.critics.len();
        let z = (0..n)
            .map(|i| self.critics.evaluate(Which::Online, i, obs, actions))
            .collect::<Result<Vec<_>>>()?;
        let mean = |i: usize, j: usize| {
            let r = z[i].row(j);
            r.iter().sum::<f64>() / r.len() as f64
        };
        Ok((0..obs.rows())
            .map(|j| match self.variant {
                Variant::Naive | Variant::CdqRandom => (0..n).map(|i| mean(i, j)).sum::<f64>() / n as f64,
                Variant::Td3Clip => (0..n).map(|i| mean(i, j)).fold(f64::INFINITY, f64::min),
                Variant::Tqc => {
                    let mut pooled: Vec<f64> = z.iter().flat_map(|t| t.row(j).iter().copied()).collect();
                    pooled.sort_by(f64::total_cmp);
                    let keep = self.top_k * n;
                    pooled[..keep].iter().sum::<f64>() / keep as f64
                }
                Variant::Cdq => mean(2 - components[j], j),
                Variant::CdqSame => mean(components[j] - 1, j),
            })
            .collect())
    }
}

/// Deterministic actor: squashed component means. Mixture variants pick,
/// per state, the component whose own critic values its mean action higher.
pub struct GreedyActor<'a> {
    pub policy: &'a MixturePolicy,
    pub critics: &'a CriticEnsemble,
    pub mixture: bool,
}

impl GreedyActor<'_> {
    fn mean_actions(&self, c: usize, obs: &Tensor) -> Result<Tensor> {
        let (mean, _) = self.policy.component(c).distribution(obs)?;
        Ok(mean.map(|u| crate::autodiff::tanh(u).clamp(-ACTION_LIMIT, ACTION_LIMIT)))
    }

    fn act(&self, obs: &Tensor) -> Result<Vec<ActorSample>> {
        let a1 = self.mean_actions(1, obs)?;
        let sample = |a: &Tensor, i: usize, c: usize| ActorSample {
            action: a.row(i).to_vec(),
            component: c,
            log_prob: 0.0,
        };
        if !self.mixture {
            return Ok((0..obs.rows()).map(|i| sample(&a1, i, 1)).collect());
        }
        let a2 = self.mean_actions(2, obs)?;
        let q1 = self.critics.mean_value(Which::Online, 0, obs, &a1)?;
        let q2 = self.critics.mean_value(Which::Online, 1, obs, &a2)?;
        Ok((0..obs.rows())
            .map(|i| if q2[i] > q1[i] { sample(&a2, i, 2) } else { sample(&a1, i, 1) })
            .collect())
    }
}

impl Actor for GreedyActor<'_> {
    fn act_batch(&self, obs: &Tensor, _rng: &mut LabRng) -> Vec<ActorSample> {
        self.act(obs).expect("observation width matches the policy")
    }
}
