use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::policy::{mixture_log, standard_normal, MixturePolicy};
use crate::rng::LabRng;
use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub struct LogRatioReport {
    pub step: usize,
    /// `E_{a ~ pi_c}[log pi_c(a) - log pi(a)]` for components 1 and 2.
    pub expectation: [f64; 2],
    pub std_err: [f64; 2],
    pub samples: usize,
}

/// Per-row `log pi_c(a) - log pi(a)` at pre-squash values `pre`.
/// Each term is at most `ln 2`.
pub fn log_ratio_terms(policy: &MixturePolicy, states: &Tensor, component: usize, pre: &Tensor) -> Result<Vec<f64>> {
    if component != 1 && component != 2 {
        return Err(Error::invalid(format!("component must be 1 or 2, got {component}")));
    }
    let [l1, l2] = policy.component_log_probs_pre(states, pre)?;
    let own = if component == 1 { &l1 } else { &l2 };
    Ok(own
        .iter()
        .zip(l1.iter().zip(&l2))
        .map(|(o, (a, b))| o - mixture_log(*a, *b))
        .collect())
}

/// Monte-Carlo estimate over `n_samples` draws per state and component.
pub fn log_ratio_divergence(
    policy: &MixturePolicy,
    states: &Tensor,
    n_samples: usize,
    rng: &mut LabRng,
    step: usize,
) -> Result<LogRatioReport> {
    if n_samples == 0 || states.rows() == 0 {
        return Err(Error::invalid("log-ratio needs at least one state and one sample"));
    }
    let reps: Vec<usize> = (0..states.rows())
        .flat_map(|i| std::iter::repeat_n(i, n_samples))
        .collect();
    let tiled = states.gather_rows(&reps);
    let mut expectation = [0.0; 2];
    let mut std_err = [0.0; 2];
    for c in 1..=2 {
        let noise = standard_normal(tiled.rows(), policy.action_dim(), rng);
        let pre = policy.component(c).sample_with_noise(&tiled, &noise)?.pre;
        let terms = log_ratio_terms(policy, &tiled, c, &pre)?;
        expectation[c - 1] = stats::mean(&terms);
        std_err[c - 1] = stats::std_err(&terms);
    }
    Ok(LogRatioReport {
        step,
        expectation,
        std_err,
        samples: tiled.rows(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Layer, MlpNet};
    use crate::policy::GaussianComponent;
    use crate::rng::seeded;
    use std::f64::consts::LN_2;

    fn constant_component(mean: f64, log_std: f64) -> GaussianComponent {
        let net = MlpNet::from_layers(vec![Layer {
            weight: Tensor::zeros(&[1, 2]),
            bias: Tensor::vector(vec![mean, log_std]),
        }])
        .unwrap();
        GaussianComponent::from_net(net).unwrap()
    }

    #[test]
    fn identical_components_give_zero() {
        let c = constant_component(0.3, -0.5);
        let p = MixturePolicy::from_components(c.clone(), c).unwrap();
        let s = Tensor::zeros(&[4, 1]);
        let rep = log_ratio_divergence(&p, &s, 100, &mut seeded(0), 0).unwrap();
        assert!(rep.expectation.iter().all(|e| e.abs() < 1e-12));
    }

    #[test]
    fn separated_components_approach_ln2() {
        let p = MixturePolicy::from_components(constant_component(-1.0, -3.0), constant_component(1.0, -3.0)).unwrap();
        let s = Tensor::zeros(&[2, 1]);
        let rep = log_ratio_divergence(&p, &s, 2000, &mut seeded(3), 0).unwrap();
        for e in rep.expectation {
            assert!((e - LN_2).abs() < 0.02, "{e}");
            assert!(e <= LN_2 + 1e-12);
        }
    }

    #[test]
    fn zero_samples_rejected() {
        let c = constant_component(0.0, 0.0);
        let p = MixturePolicy::from_components(c.clone(), c).unwrap();
        assert!(log_ratio_divergence(&p, &Tensor::zeros(&[1, 1]), 0, &mut seeded(0), 0).is_err());
    }
}
