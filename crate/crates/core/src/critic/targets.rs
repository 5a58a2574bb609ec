//! TD-target constructions and regression losses, as plain functions over
//! already-evaluated critic outputs.
//!
//! Conventions: `done` stops bootstrapping, `gamma` is the discount, and an
//! entropy term `alpha * log pi(a' | s')` is subtracted from every
//! bootstrapped value (pass `alpha = 0` to disable it).

use crate::autodiff::{huber, quantile_huber_value, Tensor};
use crate::error::{Error, Result};

/// Huber threshold used by every quantile loss in the crate.
pub const KAPPA: f64 = 1.0;

/// Quantile midpoints `tau_m = (2m - 1) / (2M)`, `m = 1..=M`.
pub fn quantile_fractions(m: usize) -> Vec<f64> {
    (1..=m).map(|i| (2 * i - 1) as f64 / (2 * m) as f64).collect()
}

fn bootstrap(done: bool, gamma: f64) -> f64 {
    if done {
        0.0
    } else {
        gamma
    }
}

/// `r + gamma (1 - done) mean_i Q'_i(s', a')`.
pub fn naive_target(next_values: &[f64], r: f64, done: bool, gamma: f64) -> f64 {
    let mean = next_values.iter().sum::<f64>() / next_values.len() as f64;
    r + bootstrap(done, gamma) * mean
}

/// `r + gamma (1 - done) min_i Q'_i(s', a')`; needs at least two critics.
pub fn clipped_target(next_values: &[f64], r: f64, done: bool, gamma: f64) -> Result<f64> {
    if next_values.len() < 2 {
        return Err(Error::invalid(format!(
            "clipping needs at least 2 critics, got {}",
            next_values.len()
        )));
    }
    let min = next_values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(r + bootstrap(done, gamma) * min)
}

/// Atoms pooled across nets, each tagged with `(net, atom)` of origin.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomSet {
    pub atoms: Vec<f64>,
    pub sources: Vec<(usize, usize)>,
}

impl AtomSet {
    pub fn pool(atom_sets: &[&[f64]]) -> Self {
        let mut atoms = Vec::new();
        let mut sources = Vec::new();
        for (n, set) in atom_sets.iter().enumerate() {
            for (m, &z) in set.iter().enumerate() {
                atoms.push(z);
                sources.push((n, m));
            }
        }
        Self { atoms, sources }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Stable ascending sort, keeping the `keep` smallest.
    pub fn sorted_prefix(&self, keep: usize) -> AtomSet {
        let mut idx: Vec<usize> = (0..self.atoms.len()).collect();
        idx.sort_by(|&a, &b| self.atoms[a].total_cmp(&self.atoms[b]));
        idx.truncate(keep);
        AtomSet {
            atoms: idx.iter().map(|&i| self.atoms[i]).collect(),
            sources: idx.iter().map(|&i| self.sources[i]).collect(),
        }
    }
}

/// Pools `N` sets of `M` atoms and keeps the `k * N` smallest, ascending.
pub fn pool_and_truncate(atom_sets: &[&[f64]], k: usize) -> Result<Vec<f64>> {
    let n = atom_sets.len();
    let m = atom_sets.first().map_or(0, |s| s.len());
    if n == 0 || atom_sets.iter().any(|s| s.len() != m) {
        return Err(Error::invalid("pool_and_truncate needs N >= 1 sets of equal size M"));
    }
    if k < 1 || k > m {
        return Err(Error::invalid(format!("k = {k} outside 1..={m}")));
    }
    Ok(AtomSet::pool(atom_sets).sorted_prefix(k * n).atoms)
}

/// `y_i = r + gamma (1 - done) (z_(i) - entropy_term)` for ascending atoms.
pub fn tqc_target_atoms(truncated: &[f64], r: f64, done: bool, gamma: f64, entropy_term: f64) -> Vec<f64> {
    let g = bootstrap(done, gamma);
    truncated.iter().map(|z| r + g * (z - entropy_term)).collect()
}

/// Quantile Huber loss (`kappa = 1`) of `predicted` atoms with fractions
/// `taus` against `target` samples, averaged over all pairs.
pub fn quantile_huber_loss(predicted: &[f64], target: &[f64], taus: &[f64]) -> f64 {
    let p = Tensor::matrix(1, predicted.len(), predicted.to_vec());
    let t = Tensor::matrix(1, target.len(), target.to_vec());
    quantile_huber_value(&p, &t, taus, KAPPA)
}

/// Direct evaluation of the asymmetric Huber weight for one residual.
pub fn quantile_huber_term(tau: f64, u: f64) -> f64 {
    let w = if u < 0.0 { 1.0 - tau } else { tau };
    w * huber(u, KAPPA)
}

/// Entropy inputs for the cross-assessed targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyTerm {
    pub alpha: f64,
    /// `log pi(a'_1 | s')`
    pub log_prob_a1: f64,
    /// `log pi(a'_2 | s')`
    pub log_prob_a2: f64,
}

/// Cross-assessed scalar target
/// `r + gamma (1 - done) / 2 [Q'_1(s', a'_2) + Q'_2(s', a'_1)]`,
/// minus the mean entropy term when given.
pub fn cdq_scalar_target(
    q1_at_a2: f64,
    q2_at_a1: f64,
    r: f64,
    done: bool,
    gamma: f64,
    entropy: Option<EntropyTerm>,
) -> f64 {
    let ent = entropy.map_or(0.0, |e| e.alpha * 0.5 * (e.log_prob_a1 + e.log_prob_a2));
    r + bootstrap(done, gamma) * (0.5 * (q1_at_a2 + q2_at_a1) - ent)
}

/// One assessed action: the critic's atoms there and the action's log-density.
#[derive(Debug, Clone, Copy)]
pub struct AssessedAtoms<'a> {
    pub atoms: &'a [f64],
    pub log_prob: f64,
}

/// Pools the soft atoms `z - alpha log pi` of every part, optionally keeps
/// only the `keep` smallest, and maps them through the Bellman backup.
/// The result is ascending.
pub fn soft_pooled_target(
    parts: &[AssessedAtoms<'_>],
    keep: Option<usize>,
    r: f64,
    done: bool,
    gamma: f64,
    alpha: f64,
) -> Vec<f64> {
    let mut soft: Vec<f64> = parts
        .iter()
        .flat_map(|p| p.atoms.iter().map(move |z| z - alpha * p.log_prob))
        .collect();
    soft.sort_by(f64::total_cmp);
    if let Some(k) = keep {
        soft.truncate(k);
    }
    let g = bootstrap(done, gamma);
    soft.into_iter().map(|z| r + g * z).collect()
}

/// Cross-assessed distributional target: atoms of `Z'_1(s', a'_2)` and
/// `Z'_2(s', a'_1)` pooled without truncation (`2M` atoms, ascending).
#[allow(clippy::too_many_arguments)]
pub fn cdq_distributional_target(
    z1_at_a2: &[f64],
    z2_at_a1: &[f64],
    r: f64,
    done: bool,
    gamma: f64,
    alpha: f64,
    log_prob_a1: f64,
    log_prob_a2: f64,
) -> Vec<f64> {
    soft_pooled_target(
        &[
            AssessedAtoms {
                atoms: z1_at_a2,
                log_prob: log_prob_a2,
            },
            AssessedAtoms {
                atoms: z2_at_a1,
                log_prob: log_prob_a1,
            },
        ],
        None,
        r,
        done,
        gamma,
        alpha,
    )
}

/// Mean squared error of each net's predictions against the shared targets.
pub fn critic_loss_scalar(predictions: &[&[f64]], targets: &[f64]) -> Vec<f64> {
    predictions
        .iter()
        .map(|p| {
            assert_eq!(p.len(), targets.len(), "one prediction per target");
            p.iter().zip(targets).map(|(q, y)| (q - y).powi(2)).sum::<f64>() / targets.len() as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractions_are_midpoints() {
        assert_eq!(quantile_fractions(2), vec![0.25, 0.75]);
        let t = quantile_fractions(25);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert!(t[0] > 0.0 && t[24] < 1.0);
    }

    #[test]
    fn clipped_target_examples() {
        assert!((clipped_target(&[3.0, 5.0], 1.0, false, 0.99).unwrap() - 3.97).abs() < 1e-12);
        assert_eq!(clipped_target(&[3.0, 5.0], 1.0, true, 0.99).unwrap(), 1.0);
        assert_eq!(
            clipped_target(&[4.0, 4.0], 0.5, false, 0.9).unwrap(),
            naive_target(&[4.0], 0.5, false, 0.9)
        );
        assert!(clipped_target(&[1.0], 0.0, false, 0.9).is_err());
    }

    #[test]
    fn clipping_never_exceeds_single_critic_targets() {
        let vals = [0.3, -1.2, 2.0];
        let c = clipped_target(&vals, 0.1, false, 0.95).unwrap();
        for v in vals {
            assert!(c <= naive_target(&[v], 0.1, false, 0.95));
        }
    }

    #[test]
    fn pool_and_truncate_example() {
        let a = [0.1, 0.5, -0.2];
        let b = [0.3, -0.1, 0.7];
        assert_eq!(pool_and_truncate(&[&a, &b], 2).unwrap(), vec![-0.2, -0.1, 0.1, 0.3]);
        assert_eq!(
            pool_and_truncate(&[&a, &b], 3).unwrap(),
            vec![-0.2, -0.1, 0.1, 0.3, 0.5, 0.7]
        );
        assert!(pool_and_truncate(&[&a, &b], 0).is_err());
        assert!(pool_and_truncate(&[&a, &b], 4).is_err());
    }

    #[test]
    fn sorted_prefix_keeps_sources_and_tie_order() {
        let a = [1.0, 0.0];
        let b = [0.0, 2.0];
        let s = AtomSet::pool(&[&a, &b]).sorted_prefix(3);
        assert_eq!(s.atoms, vec![0.0, 0.0, 1.0]);
        assert_eq!(s.sources, vec![(0, 1), (1, 0), (0, 0)]);
    }

    #[test]
    fn tqc_atoms_examples() {
        assert_eq!(tqc_target_atoms(&[5.0, 9.0], 2.0, false, 0.0, 0.3), vec![2.0, 2.0]);
        assert_eq!(tqc_target_atoms(&[-1.0, 4.0], 0.0, false, 1.0, 0.0), vec![-1.0, 4.0]);
        assert_eq!(tqc_target_atoms(&[2.0, 4.0], 1.0, false, 0.5, 0.0), vec![2.0, 3.0]);
    }

    #[test]
    fn quantile_huber_examples() {
        assert!((quantile_huber_loss(&[0.0], &[0.5], &[0.25]) - 0.03125).abs() < 1e-15);
        assert!((quantile_huber_loss(&[0.0], &[-2.0], &[0.25]) - 1.125).abs() < 1e-15);
        let c = [1.7; 3];
        assert_eq!(quantile_huber_loss(&c, &[1.7; 4], &quantile_fractions(3)), 0.0);
    }

    #[test]
    fn cdq_scalar_examples() {
        assert_eq!(cdq_scalar_target(2.0, 4.0, 0.0, false, 1.0, None), 3.0);
        assert_eq!(cdq_scalar_target(2.0, 4.0, 0.7, true, 0.9, None), 0.7);
        assert_eq!(
            cdq_scalar_target(3.0, 3.0, 1.0, false, 0.9, None),
            naive_target(&[3.0], 1.0, false, 0.9)
        );
        let e = EntropyTerm {
            alpha: 0.5,
            log_prob_a1: -1.0,
            log_prob_a2: -3.0,
        };
        // 0.5 * (2 + 4) - 0.5 * (-2) = 4
        assert_eq!(cdq_scalar_target(2.0, 4.0, 0.0, false, 1.0, Some(e)), 4.0);
    }

    #[test]
    fn cdq_distributional_examples() {
        let t = cdq_distributional_target(&[1.0, 3.0], &[2.0, 4.0], 0.0, false, 1.0, 0.0, 0.0, 0.0);
        assert_eq!(t, vec![1.0, 2.0, 3.0, 4.0]);
        let t = cdq_distributional_target(&[1.0, 3.0], &[2.0, 4.0], 0.4, false, 0.0, 0.2, -1.0, 1.0);
        assert_eq!(t, vec![0.4; 4]);
    }

    #[test]
    fn cdq_distributional_mean_matches_scalar_target() {
        // Z'_1(a'_2) has mean 2 = Q'_1(a'_2); Z'_2(a'_1) has mean 5 = Q'_2(a'_1)
        let z1 = [1.0, 2.0, 3.0];
        let z2 = [4.0, 5.0, 6.0];
        let (r, g, alpha, l1, l2) = (0.3, 0.9, 0.1, -0.5, -1.5);
        let atoms = cdq_distributional_target(&z1, &z2, r, false, g, alpha, l1, l2);
        let mean = atoms.iter().sum::<f64>() / atoms.len() as f64;
        let e = EntropyTerm {
            alpha,
            log_prob_a1: l1,
            log_prob_a2: l2,
        };
        let scalar = cdq_scalar_target(2.0, 5.0, r, false, g, Some(e));
        // 0.3 + 0.9 * (3.5 - 0.1 * (-1.0)) = 3.54
        assert!((mean - 3.54).abs() < 1e-12);
        assert!((scalar - 3.54).abs() < 1e-12);
    }

    #[test]
    fn scalar_loss_examples() {
        let y = [1.0, -2.0, 0.5];
        assert_eq!(critic_loss_scalar(&[&y], &y), vec![0.0]);
        let shifted: Vec<f64> = y.iter().map(|v| v + 0.5).collect();
        assert_eq!(critic_loss_scalar(&[&shifted], &y), vec![0.25]);
    }

    fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        while hi - lo > 1e-9 {
            let a = hi - r * (hi - lo);
            let b = lo + r * (hi - lo);
            if f(a) <= f(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        0.5 * (lo + hi)
    }

    /// Lower empirical tau-quantile: smallest y with F(y) >= tau.
    fn empirical_quantile(ys: &[f64], tau: f64) -> f64 {
        let mut s = ys.to_vec();
        s.sort_by(f64::total_cmp);
        let j = ((tau * s.len() as f64).ceil() as usize).clamp(1, s.len());
        s[j - 1]
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn atoms(n: usize, m: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
            proptest::collection::vec(proptest::collection::vec(-10.0..10.0f64, m), n)
        }

        proptest! {
            #[test]
            fn truncation_equals_sort_prefix(sets in (1usize..4, 1usize..7).prop_flat_map(|(n, m)| atoms(n, m)), kf in 0.0..1.0f64) {
                let m = sets[0].len();
                let k = 1 + ((kf * m as f64) as usize).min(m - 1);
                let refs: Vec<&[f64]> = sets.iter().map(|v| v.as_slice()).collect();
                let got = pool_and_truncate(&refs, k).unwrap();
                let mut all: Vec<f64> = sets.concat();
                all.sort_by(|a, b| a.partial_cmp(b).unwrap());
                prop_assert_eq!(got, all[..k * sets.len()].to_vec());
            }

            #[test]
            fn truncated_mean_non_increasing_in_dropped(sets in (1usize..4, 2usize..8).prop_flat_map(|(n, m)| atoms(n, m))) {
                let m = sets[0].len();
                let refs: Vec<&[f64]> = sets.iter().map(|v| v.as_slice()).collect();
                let means: Vec<f64> = (1..=m)
                    .map(|k| {
                        let t = pool_and_truncate(&refs, k).unwrap();
                        t.iter().sum::<f64>() / t.len() as f64
                    })
                    .collect();
                // more dropped atoms means smaller k
                for w in means.windows(2) {
                    prop_assert!(w[0] <= w[1] + 1e-12);
                }
            }

            #[test]
            fn clipping_dominance(vals in proptest::collection::vec(-50.0..50.0f64, 2..6), r in -5.0..5.0f64, g in 0.0..1.0f64, done: bool) {
                let c = clipped_target(&vals, r, done, g).unwrap();
                for &v in &vals {
                    prop_assert!(c <= naive_target(&[v], r, done, g) + 1e-12);
                }
            }

            #[test]
            fn quantile_loss_matches_piecewise_sum(pred in proptest::collection::vec(-3.0..3.0f64, 1..6), target in proptest::collection::vec(-3.0..3.0f64, 1..6)) {
                let taus = quantile_fractions(pred.len());
                let mut direct = 0.0;
                for (m, &th) in pred.iter().enumerate() {
                    for &y in &target {
                        let u = y - th;
                        let l = if u.abs() <= 1.0 { 0.5 * u * u } else { u.abs() - 0.5 };
                        direct += (taus[m] - if u < 0.0 { 1.0 } else { 0.0 }).abs() * l;
                    }
                }
                direct /= (pred.len() * target.len()) as f64;
                let got = quantile_huber_loss(&pred, &target, &taus);
                prop_assert!((got - direct).abs() <= 1e-10 * direct.abs().max(1e-300));
            }

            #[test]
            fn quantile_minimizer_is_empirical_quantile(
                ys in proptest::collection::btree_set(-20i32..20, 1..8),
                tau in 0.05..0.95f64,
            ) {
                // spacing of 5 keeps neighbouring Huber regions apart
                let ys: Vec<f64> = ys.into_iter().map(|v| 5.0 * v as f64).collect();
                let q = empirical_quantile(&ys, tau);
                let (lo, hi) = (-110.0, 110.0);
                let sharp = |t: f64| {
                    let p = Tensor::matrix(1, 1, vec![t]);
                    let y = Tensor::matrix(1, ys.len(), ys.clone());
                    quantile_huber_value(&p, &y, &[tau], 1e-7)
                };
                let at_sharp = golden_min(sharp, lo, hi);
                let mut sorted = ys.clone();
                sorted.sort_by(f64::total_cmp);
                let tn = tau * ys.len() as f64;
                if (tn - tn.round()).abs() > 1e-6 {
                    prop_assert!((at_sharp - q).abs() < 1e-4);
                    let smooth = |t: f64| quantile_huber_loss(&[t], &ys, &[tau]);
                    prop_assert!((golden_min(smooth, lo, hi) - q).abs() <= KAPPA + 1e-6);
                } else {
                    // tau * n integral: every point between two order statistics minimizes
                    let j = tn.round() as usize;
                    prop_assert!(at_sharp >= sorted[j - 1] - 1e-4 && at_sharp <= sorted[j] + 1e-4);
                }
            }

            #[test]
            fn cdq_targets_symmetric_under_relabelling(
                z1 in proptest::collection::vec(-5.0..5.0f64, 3),
                z2 in proptest::collection::vec(-5.0..5.0f64, 3),
                r in -1.0..1.0f64, g in 0.0..1.0f64, alpha in 0.0..1.0f64,
                l1 in -3.0..1.0f64, l2 in -3.0..1.0f64, done: bool,
            ) {
                let a = cdq_distributional_target(&z1, &z2, r, done, g, alpha, l1, l2);
                let b = cdq_distributional_target(&z2, &z1, r, done, g, alpha, l2, l1);
                prop_assert_eq!(a, b);
                let e = EntropyTerm { alpha, log_prob_a1: l1, log_prob_a2: l2 };
                let e_swapped = EntropyTerm { alpha, log_prob_a1: l2, log_prob_a2: l1 };
                let s = cdq_scalar_target(z1[0], z2[0], r, done, g, Some(e));
                let t = cdq_scalar_target(z2[0], z1[0], r, done, g, Some(e_swapped));
                prop_assert!((s - t).abs() < 1e-12);
            }

            #[test]
            fn scalar_loss_matches_two_pass_oracle(pairs in proptest::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 1..40)) {
                let (p, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
                let diffs: Vec<f64> = p.iter().zip(&y).map(|(a, b)| a - b).collect();
                let oracle = diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64;
                let got = critic_loss_scalar(&[&p], &y)[0];
                prop_assert!((got - oracle).abs() <= 1e-12 * oracle.max(1e-300));
            }
        }
    }
}
