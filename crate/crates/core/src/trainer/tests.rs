use super::*;
use crate::autodiff::{Layer, MlpNet};
use crate::critic::{CriticKind, Which};
use crate::policy::GaussianComponent;
use crate::rng::seeded;

fn small(variant: Variant, env: &str) -> AlgoConfig {
    AlgoConfig {
        variant,
        env: env.into(),
        seed: 11,
        total_steps: 0,
        warmup_steps: 32,
        batch_size: 16,
        hidden: vec![16],
        n_atoms: 5,
        top_k: 4,
        eval_interval: 50,
        eval_episodes: 2,
        bias_interval: 100,
        probe_states: 4,
        bias_rollouts: 2,
        bias_horizon: 250,
        log_ratio_samples: 8,
        ..AlgoConfig::default()
    }
}

fn random_batch(n: usize, rng: &mut LabRng) -> Batch {
    let ts: Vec<Transition> = (0..n)
        .map(|i| Transition {
            s: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            a: vec![rng.random_range(-1.0..1.0)],
            r: rng.random_range(-2.0..0.0),
            s_next: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            done: i % 5 == 0,
            component_id: 1 + i % 2,
        })
        .collect();
    Batch::from_transitions(&ts.iter().collect::<Vec<_>>()).unwrap()
}

/// Makes component 2 and critic 2 (online and target) copies of the first.
fn clone_first(t: &mut Trainer) {
    t.policy.components[1] = t.policy.components[0].clone();
    t.critics.online[1] = t.critics.online[0].clone();
    t.critics.target[1] = t.critics.target[0].clone();
}

fn same_noise(n: usize, seed: u64) -> [Tensor; 2] {
    let e = standard_normal(n, 1, &mut seeded(seed));
    [e.clone(), e]
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn zero_steps_gives_initial_state_and_no_metrics() {
    let out = train(&small(Variant::Cdq, "point-mass")).unwrap();
    assert!(out.metrics.is_empty());
    assert_eq!(out.trainer.step(), 0);
    assert_eq!(out.trainer.critics.online, out.trainer.critics.target);
}

#[test]
fn identical_parts_reduce_mixture_targets_to_naive() {
    let mut rng = seeded(5);
    let batch = random_batch(24, &mut rng);
    let noise = same_noise(24, 9);
    for distributional in [true, false] {
        let mut naive = Trainer::new(AlgoConfig {
            distributional,
            ..small(Variant::Naive, "point-mass")
        })
        .unwrap();
        clone_first(&mut naive);
        let y_naive = naive.compute_targets(&batch, &noise, &mut seeded(0)).unwrap();
        for v in [Variant::Cdq, Variant::CdqSame, Variant::CdqRandom] {
            let mut t = Trainer::new(AlgoConfig {
                distributional,
                ..small(v, "point-mass")
            })
            .unwrap();
            clone_first(&mut t);
            // same seed, same initial nets
            assert_eq!(t.policy.components[0], naive.policy.components[0]);
            let y = t.compute_targets(&batch, &noise, &mut seeded(1)).unwrap();
            let d = max_abs_diff(&y, &y_naive);
            assert!(d <= 1e-12, "{v} distributional={distributional}: {d}");
        }
    }
}

#[test]
fn cdq_same_and_naive_agree_without_copying_components_when_noise_matches() {
    // distinct critics, identical components: cdq-same pools Z1(a1), Z2(a2)
    // and naive pools Z1(a1), Z2(a1); with a1 = a2 they coincide
    let mut rng = seeded(8);
    let batch = random_batch(10, &mut rng);
    let noise = same_noise(10, 2);
    let mut naive = Trainer::new(small(Variant::Naive, "point-mass")).unwrap();
    let mut same = Trainer::new(small(Variant::CdqSame, "point-mass")).unwrap();
    naive.policy.components[1] = naive.policy.components[0].clone();
    same.policy.components[1] = same.policy.components[0].clone();
    let a = naive.compute_targets(&batch, &noise, &mut seeded(0)).unwrap();
    let b = same.compute_targets(&batch, &noise, &mut seeded(0)).unwrap();
    assert!(max_abs_diff(&a, &b) <= 1e-12);
}

#[test]
fn zero_discount_targets_are_rewards() {
    let mut rng = seeded(3);
    let batch = random_batch(12, &mut rng);
    let noise = [standard_normal(12, 1, &mut rng), standard_normal(12, 1, &mut rng)];
    for v in Variant::ALL {
        let t = Trainer::new(small(v, "point-mass")).unwrap();
        let ctx = TargetContext {
            gamma: 0.0,
            ..t.target_context()
        };
        let y = build_targets(&ctx, &batch, &noise, &mut seeded(0), &mut AssignmentAudit::default()).unwrap();
        for j in 0..12 {
            assert!(y.row(j).iter().all(|&v| v == batch.rewards[j]), "{v}");
        }
    }
}

#[test]
fn tqc_keeping_everything_equals_untruncated_pool() {
    let mut rng = seeded(4);
    let batch = random_batch(9, &mut rng);
    let noise = same_noise(9, 6);
    let tqc = Trainer::new(AlgoConfig {
        top_k: 5,
        ..small(Variant::Tqc, "point-mass")
    })
    .unwrap();
    let naive = Trainer::new(small(Variant::Naive, "point-mass")).unwrap();
    let a = tqc.compute_targets(&batch, &noise, &mut seeded(0)).unwrap();
    let b = naive.compute_targets(&batch, &noise, &mut seeded(0)).unwrap();
    assert_eq!(a.shape(), &[9, 10]);
    assert_eq!(a, b);
    let truncated = Trainer::new(AlgoConfig {
        top_k: 3,
        ..small(Variant::Tqc, "point-mass")
    })
    .unwrap()
    .compute_targets(&batch, &noise, &mut seeded(0))
    .unwrap();
    assert_eq!(truncated.shape(), &[9, 6]);
    for j in 0..9 {
        assert_eq!(truncated.row(j), &a.row(j)[..6]);
    }
}

#[test]
fn relabelling_components_and_critics_leaves_cdq_targets_unchanged() {
    let mut rng = seeded(12);
    let batch = random_batch(15, &mut rng);
    let noise = [standard_normal(15, 1, &mut rng), standard_normal(15, 1, &mut rng)];
    for distributional in [true, false] {
        let cfg = AlgoConfig {
            distributional,
            ..small(Variant::Cdq, "point-mass")
        };
        let t = Trainer::new(cfg.clone()).unwrap();
        let mut s = Trainer::new(cfg).unwrap();
        s.policy.components.swap(0, 1);
        s.critics.online.swap(0, 1);
        s.critics.target.swap(0, 1);
        let swapped_noise = [noise[1].clone(), noise[0].clone()];
        let a = t.compute_targets(&batch, &noise, &mut seeded(0)).unwrap();
        let b = s.compute_targets(&batch, &swapped_noise, &mut seeded(0)).unwrap();
        assert!(max_abs_diff(&a, &b) <= 1e-12);
    }
}

#[test]
fn audit_counts_pairings() {
    let mut rng = seeded(1);
    let batch = random_batch(200, &mut rng);
    let noise = [standard_normal(200, 1, &mut rng), standard_normal(200, 1, &mut rng)];
    let expect = |v: Variant| {
        let t = Trainer::new(small(v, "point-mass")).unwrap();
        let mut audit = AssignmentAudit::default();
        build_targets(&t.target_context(), &batch, &noise, &mut seeded(3), &mut audit).unwrap();
        audit
    };
    let cdq = expect(Variant::Cdq);
    assert_eq!((cdq.crossed(), cdq.same()), (400, 0));
    assert_eq!((cdq.count(1, 2), cdq.count(2, 1)), (200, 200));
    let same = expect(Variant::CdqSame);
    assert_eq!((same.crossed(), same.same()), (0, 400));
    let random = expect(Variant::CdqRandom);
    assert_eq!(random.total(), 400);
    assert!(random.count(1, 1) > 60 && random.count(1, 1) < 140);
    assert_eq!(expect(Variant::Tqc).total(), 0);
}

#[test]
fn temperature_gradient_signs() {
    assert_eq!(temperature_gradient(&[1.0, 1.0], -1.0), 0.0);
    // log-probs far above -target_entropy: descent raises log(alpha)
    assert!(temperature_gradient(&[3.0, 2.0], -1.0) < 0.0);
    assert!(temperature_gradient(&[-3.0, -2.0], -1.0) > 0.0);
}

#[test]
fn temperature_stays_positive_and_finite() {
    let mut log_alpha = Tensor::scalar(0.0);
    let mut opt = AdamState::new(&[&log_alpha], AdamConfig::with_lr(3e-2));
    let mut rng = seeded(0);
    for _ in 0..10_000 {
        let lp: Vec<f64> = (0..8).map(|_| rng.random_range(-50.0..50.0)).collect();
        let g = temperature_gradient(&lp, -1.0);
        opt.step(&mut [&mut log_alpha], &[Tensor::scalar(g)]).unwrap();
        let alpha = log_alpha.item().exp();
        assert!(alpha.is_finite() && alpha > 0.0);
    }
}

/// Critic `Q(s, a) = tanh(a + 1) + tanh(1 - a)` on a one-dimensional state:
/// even in `a`, maximal at 0.
fn bowl_critic() -> MlpNet {
    MlpNet::from_layers(vec![
        Layer {
            weight: Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, -1.0]),
            bias: Tensor::vector(vec![1.0, 1.0]),
        },
        Layer {
            weight: Tensor::matrix(2, 1, vec![1.0, 1.0]),
            bias: Tensor::vector(vec![0.0]),
        },
    ])
    .unwrap()
}

fn constant_component(mean: f64, log_std: f64) -> GaussianComponent {
    GaussianComponent::from_net(
        MlpNet::from_layers(vec![Layer {
            weight: Tensor::zeros(&[1, 2]),
            bias: Tensor::vector(vec![mean, log_std]),
        }])
        .unwrap(),
    )
    .unwrap()
}

#[test]
fn actor_step_on_bowl_critic_moves_mean_toward_zero() {
    let states = Tensor::zeros(&[64, 1]);
    let noise = [standard_normal(64, 1, &mut seeded(0)), standard_normal(64, 1, &mut seeded(1))];
    let mut comps = [constant_component(0.8, -3.0), constant_component(-0.6, -3.0)];
    let critics = [bowl_critic(), bowl_critic()];
    for _ in 0..3 {
        let tape = Tape::new();
        let bound = [comps[0].bind(&tape, true), comps[1].bind(&tape, true)];
        let cb: Vec<_> = critics.iter().map(|c| c.bind(&tape, false)).collect();
        let out = actor_losses(&tape, Variant::Cdq, 1, 0.0, &bound, &cb, [&states, &states], &noise).unwrap();
        let total = out.per_component[0].add(out.per_component[1]);
        let grads = tape.backward(total).unwrap();
        let g: Vec<Vec<Tensor>> = bound.iter().map(|b| b.net.grads(&grads)).collect();
        for (c, gc) in comps.iter_mut().zip(g) {
            for (p, gp) in c.net_mut().params_mut().into_iter().zip(gc) {
                for (v, d) in p.data_mut().iter_mut().zip(gp.data()) {
                    *v -= 0.5 * d;
                }
            }
        }
    }
    let mean = |c: &GaussianComponent| c.net().layers()[0].bias.data()[0];
    assert!(mean(&comps[0]).abs() < 0.8 && mean(&comps[0]) > -0.8, "{}", mean(&comps[0]));
    assert!(mean(&comps[1]).abs() < 0.6, "{}", mean(&comps[1]));
}

/// Total actor loss as a plain function of component parameters.
fn actor_total(t: &Trainer, policy: &MixturePolicy, states: &Tensor, noise: &[Tensor; 2], alpha: f64) -> f64 {
    let tape = Tape::new();
    let bound = [policy.components[0].bind(&tape, true), policy.components[1].bind(&tape, true)];
    let cb: Vec<_> = t.critics.online.iter().map(|c| c.bind(&tape, false)).collect();
    let out = actor_losses(&tape, t.config.variant, t.config.top_k, alpha, &bound, &cb, [states, states], noise).unwrap();
    out.per_component.iter().map(|l| l.item()).sum()
}

#[test]
fn actor_gradient_matches_finite_differences() {
    let mut rng = seeded(21);
    let states = Tensor::matrix(6, 2, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect());
    let noise = [standard_normal(6, 1, &mut rng), standard_normal(6, 1, &mut rng)];
    for v in Variant::ALL {
        let t = Trainer::new(small(v, "point-mass")).unwrap();
        let alpha = 0.3;
        let tape = Tape::new();
        let bound = [t.policy.components[0].bind(&tape, true), t.policy.components[1].bind(&tape, true)];
        let cb: Vec<_> = t.critics.online.iter().map(|c| c.bind(&tape, false)).collect();
        let out = actor_losses(&tape, v, t.config.top_k, alpha, &bound, &cb, [&states, &states], &noise).unwrap();
        let total = out.per_component.iter().skip(1).fold(out.per_component[0], |a, l| a.add(*l));
        let grads = tape.backward(total).unwrap();
        let analytic: Vec<Vec<Tensor>> = bound.iter().map(|b| b.net.grads(&grads)).collect();
        let h = 1e-6;
        for c in 0..2 {
            for (pi, g) in analytic[c].iter().enumerate() {
                for k in (0..g.len()).step_by(3) {
                    let mut plus = t.policy.clone();
                    let mut minus = t.policy.clone();
                    plus.components[c].net_mut().params_mut()[pi].data_mut()[k] += h;
                    minus.components[c].net_mut().params_mut()[pi].data_mut()[k] -= h;
                    let fd = (actor_total(&t, &plus, &states, &noise, alpha)
                        - actor_total(&t, &minus, &states, &noise, alpha))
                        / (2.0 * h);
                    let a = g.data()[k];
                    let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                    assert!(err < 1e-3 || (a - fd).abs() < 1e-8, "{v} comp {c} param {pi}[{k}]: {a} vs {fd}");
                }
            }
        }
        if !v.uses_mixture() {
            assert!(analytic[1].iter().all(|g| g.data().iter().all(|&x| x == 0.0)));
        }
    }
}

fn strip_wall_time(ms: &[MetricRecord]) -> Vec<MetricRecord> {
    ms.iter()
        .map(|m| MetricRecord {
            wall_time: 0.0,
            ..m.clone()
        })
        .collect()
}

#[test]
fn runs_are_deterministic_per_seed() {
    let cfg = AlgoConfig {
        total_steps: 120,
        ..small(Variant::CdqRandom, "point-mass")
    };
    let a = train(&cfg).unwrap();
    let b = train(&cfg).unwrap();
    assert_eq!(strip_wall_time(&a.metrics), strip_wall_time(&b.metrics));
    assert_eq!(a.trainer.checkpoint().to_bytes(), b.trainer.checkpoint().to_bytes());
    let c = train(&AlgoConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(strip_wall_time(&a.metrics), strip_wall_time(&c.metrics));
}

#[test]
fn every_variant_trains_and_logs_each_cadence_once() {
    for v in Variant::ALL {
        for env in ["noisy-bandit", "pendulum"] {
            let cfg = AlgoConfig {
                total_steps: 200,
                ..small(v, env)
            };
            let out = train(&cfg).unwrap();
            assert!(out.trainer.updates() > 0);
            assert!(out.metrics.iter().all(|m| m.value.is_finite()), "{v} {env}");
            for step in [50, 100, 150, 200] {
                let n = out.metrics.iter().filter(|m| m.step == step && m.metric == names::EVAL_RETURN).count();
                assert_eq!(n, 1);
            }
            for step in [100, 200] {
                let n = out.metrics.iter().filter(|m| m.step == step && m.metric == names::BIAS).count();
                assert_eq!(n, 1);
                let lr: Vec<_> = out.metrics.iter().filter(|m| m.step == step && m.metric == names::LOG_RATIO).collect();
                assert_eq!(lr.len(), if v.uses_mixture() { 2 } else { 0 });
                assert!(lr.iter().all(|m| m.value <= std::f64::consts::LN_2 + 1e-12));
            }
            let mut keys: Vec<_> = out.metrics.iter().map(|m| (m.step, m.metric.clone(), m.component, m.probes)).collect();
            let n = keys.len();
            keys.sort();
            keys.dedup();
            assert_eq!(keys.len(), n, "duplicate records for {v}");
        }
    }
}

#[test]
fn separate_buffers_route_by_component() {
    let cfg = AlgoConfig {
        total_steps: 150,
        separate_buffers: true,
        ..small(Variant::Cdq, "point-mass")
    };
    let out = train(&cfg).unwrap();
    let ReplaySet::Separate(bufs) = out.trainer.replay() else {
        panic!("expected separate buffers");
    };
    assert_eq!(bufs[0].len() + bufs[1].len(), 150);
    for (i, b) in bufs.iter().enumerate() {
        assert!(b.iter_fifo().all(|t| t.component_id == i + 1));
    }
    assert!(out.trainer.updates() > 0);
}

#[test]
fn baselines_act_with_component_one_and_leave_two_untouched() {
    let cfg = AlgoConfig {
        total_steps: 120,
        ..small(Variant::Tqc, "point-mass")
    };
    let init = Trainer::new(cfg.clone()).unwrap();
    let out = train(&cfg).unwrap();
    assert_eq!(out.trainer.policy.components[1], init.policy.components[1]);
    assert_ne!(out.trainer.policy.components[0], init.policy.components[0]);
    let ReplaySet::Shared(buf) = out.trainer.replay() else {
        panic!("expected a shared buffer");
    };
    assert!(buf.iter_fifo().all(|t| t.component_id == 1));
}

#[test]
fn critic_kinds_and_entropy_off() {
    let cfg = AlgoConfig {
        total_steps: 80,
        entropy: false,
        distributional: false,
        ..small(Variant::Cdq, "noisy-bandit")
    };
    let out = train(&cfg).unwrap();
    assert_eq!(out.trainer.critics.kind, CriticKind::Scalar);
    assert_eq!(out.trainer.alpha(), 0.0);
    let s = Tensor::zeros(&[1, 1]);
    let a = Tensor::zeros(&[1, 1]);
    assert_eq!(out.trainer.critics.evaluate(Which::Online, 0, &s, &a).unwrap().shape(), &[1, 1]);
}

#[test]
fn greedy_eval_is_repeatable() {
    let cfg = AlgoConfig {
        total_steps: 100,
        eval_mode: EvalMode::Greedy,
        ..small(Variant::Cdq, "point-mass")
    };
    let mut t = train(&cfg).unwrap().trainer;
    let a = t.evaluate().unwrap();
    let b = t.evaluate().unwrap();
    assert_eq!(a, b);
}

#[test]
fn invalid_config_rejected_at_construction() {
    let err = Trainer::new(AlgoConfig {
        top_k: 9,
        ..small(Variant::Tqc, "point-mass")
    })
    .err()
    .unwrap();
    assert!(err.to_string().contains("top_k"));
}
