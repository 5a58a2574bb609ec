//! The off-policy training loop shared by every variant.
//!
//! Each iteration collects one transition (uniform-random actions during
//! warmup, the acting policy afterwards), then, once the replay holds a
//! batch, performs one critic step, one actor step and one temperature
//! step. Evaluation and bias probes run on their own random streams, so
//! their cadence never changes the training trajectory.
//!
//! ```
//! use cdqlab::trainer::{train, AlgoConfig, Variant};
//!
//! let config = AlgoConfig {
//!     variant: Variant::Cdq,
//!     env: "noisy-bandit".into(),
//!     total_steps: 60,
//!     warmup_steps: 20,
//!     batch_size: 8,
//!     hidden: vec![8],
//!     n_atoms: 5,
//!     top_k: 4,
//!     eval_interval: 30,
//!     bias_interval: 60,
//!     ..AlgoConfig::default()
//! };
//! let out = train(&config).unwrap();
//! assert_eq!(out.trainer.step(), 60);
//! assert!(out.metrics.iter().any(|m| m.metric == "bias" && m.step == 60));
//! ```

mod config;
mod estimators;
mod learn;
mod metrics;

pub use config::{AlgoConfig, ConfigIssue, EvalMode, Variant};
pub use estimators::{AssessedValue, GreedyActor};
pub use learn::{
    actor_losses, assessing_critic, build_targets, critic_losses, temperature_gradient, ActorLosses,
    AssignmentAudit, TargetContext,
};
pub use metrics::{names, MetricRecord};

use std::time::Instant;

use log::{debug, warn};
use rand::Rng;

use crate::autodiff::{AdamConfig, AdamState, Checkpoint, StepOutcome, Tape, Tensor};
use crate::critic::CriticEnsemble;
use crate::diagnostics::{log_ratio_divergence, measure_bias, probe_states, BiasReport, LogRatioReport};
use crate::envs::{Actor, Env, EnvState, McOptions, RewardMode};
use crate::error::{Error, Result};
use crate::policy::{standard_normal, ActingMode, ActingPolicy, MixturePolicy};
use crate::replay::{Batch, ReplaySet, Transition};
use crate::rng::{stream, LabRng, Stream};

/// Seed of the evaluation start states, shared by every run.
pub const EVAL_SEED: u64 = 0xe7a1_5eed;

/// Consecutive skipped updates after which a run is abandoned.
const MAX_CONSECUTIVE_SKIPS: usize = 100;

struct Streams {
    env: LabRng,
    policy: LabRng,
    replay: LabRng,
    assignment: LabRng,
    warmup: LabRng,
    eval: LabRng,
    diagnostics: LabRng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            env: stream(seed, Stream::Env),
            policy: stream(seed, Stream::Policy),
            replay: stream(seed, Stream::Replay),
            assignment: stream(seed, Stream::Assignment),
            warmup: stream(seed, Stream::Warmup),
            eval: stream(seed, Stream::Eval),
            diagnostics: stream(seed, Stream::Diagnostics),
        }
    }
}

/// Running means of training losses between two metric records.
#[derive(Default)]
struct LossMeans {
    critic: (f64, usize),
    actor: [(f64, usize); 2],
}

impl LossMeans {
    fn take(&mut self) -> (Option<f64>, [Option<f64>; 2]) {
        let avg = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
        let out = (avg(self.critic), [avg(self.actor[0]), avg(self.actor[1])]);
        *self = Self::default();
        out
    }
}

/// Complete state of one run.
pub struct Trainer {
    pub config: AlgoConfig,
    pub env: Env,
    pub policy: MixturePolicy,
    pub critics: CriticEnsemble,
    /// `[1, 1]` tensor holding `log(alpha)`.
    pub log_alpha: Tensor,
    actor_opt: [AdamState; 2],
    critic_opt: Vec<AdamState>,
    alpha_opt: AdamState,
    replay: ReplaySet,
    rngs: Streams,
    env_state: EnvState,
    step: usize,
    updates: usize,
    target_entropy: f64,
    audit: AssignmentAudit,
    probes: Vec<EnvState>,
    run_id: String,
    started: Instant,
    skips: usize,
    losses: LossMeans,
}

impl Trainer {
    pub fn new(config: AlgoConfig) -> Result<Self> {
        config.validate()?;
        let env = Env::by_name(&config.env)?.with_gamma(config.gamma)?;
        let spec = env.spec();
        let mut init = stream(config.seed, Stream::Init);
        let policy = MixturePolicy::new(spec.state_dim, spec.action_dim, &config.hidden, &mut init)?;
        let critics = CriticEnsemble::new(
            config.n_critics,
            spec.state_dim,
            spec.action_dim,
            &config.hidden,
            config.critic_kind(),
            &mut init,
        )?;
        let actor_cfg = AdamConfig::with_lr(config.actor_lr);
        let actor_opt = [
            AdamState::new(&policy.components[0].net().params(), actor_cfg),
            AdamState::new(&policy.components[1].net().params(), actor_cfg),
        ];
        let critic_opt = critics
            .online
            .iter()
            .map(|n| AdamState::new(&n.params(), AdamConfig::with_lr(config.critic_lr)))
            .collect();
        let log_alpha = Tensor::scalar(config.init_alpha.ln());
        let alpha_opt = AdamState::new(&[&log_alpha], AdamConfig::with_lr(config.alpha_lr));
        let mut rngs = Streams::new(config.seed);
        let env_state = env.reset_with(&mut rngs.env);
        Ok(Self {
            replay: ReplaySet::new(config.replay_capacity, config.separate_buffers)?,
            probes: probe_states(&env, config.probe_states),
            target_entropy: config.resolved_target_entropy(spec.action_dim),
            run_id: format!("{}-{}-s{}", config.variant, config.env, config.seed),
            config,
            env,
            policy,
            critics,
            log_alpha,
            actor_opt,
            critic_opt,
            alpha_opt,
            rngs,
            env_state,
            step: 0,
            updates: 0,
            audit: AssignmentAudit::default(),
            started: Instant::now(),
            skips: 0,
            losses: LossMeans::default(),
        })
    }

    pub fn with_run_id(mut self, run_id: impl Into<String>) -> Self {
        self.run_id = run_id.into();
        self
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    /// Environment steps taken so far.
    pub fn step(&self) -> usize {
        self.step
    }

    /// Gradient updates performed so far.
    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn alpha(&self) -> f64 {
        if self.config.entropy {
            self.log_alpha.item().exp()
        } else {
            0.0
        }
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy
    }

    pub fn audit(&self) -> &AssignmentAudit {
        &self.audit
    }

    pub fn replay(&self) -> &ReplaySet {
        &self.replay
    }

    pub fn probe_states(&self) -> &[EnvState] {
        &self.probes
    }

    pub fn acting_mode(&self) -> ActingMode {
        if self.config.variant.uses_mixture() {
            ActingMode::Mixture
        } else {
            ActingMode::Component(1)
        }
    }

    fn target_context(&self) -> TargetContext<'_> {
        TargetContext {
            variant: self.config.variant,
            gamma: self.config.gamma,
            top_k: self.config.top_k,
            alpha: self.alpha(),
            policy: &self.policy,
            critics: &self.critics,
        }
    }

    /// Targets for `batch` with caller-chosen next-action noise. Random
    /// critic choices come from `assign_rng`; the run's audit is untouched.
    pub fn compute_targets(&self, batch: &Batch, noise: &[Tensor; 2], assign_rng: &mut LabRng) -> Result<Tensor> {
        build_targets(&self.target_context(), batch, noise, assign_rng, &mut AssignmentAudit::default())
    }

    /// Runs to `total_steps`, handing every record to `sink` as it is made.
    pub fn run(&mut self, sink: &mut dyn FnMut(&MetricRecord) -> Result<()>) -> Result<()> {
        while self.step < self.config.total_steps {
            self.advance(sink)?;
        }
        Ok(())
    }

    /// One iteration: collect, maybe learn, maybe record.
    pub fn advance(&mut self, sink: &mut dyn FnMut(&MetricRecord) -> Result<()>) -> Result<()> {
        let at = self.step;
        self.collect().map_err(|e| Error::Aborted {
            step: at,
            reason: format!("environment step failed: {e}"),
        })?;
        if at >= self.config.warmup_steps && self.replay.min_len() >= self.config.batch_size {
            self.update()?;
        }
        self.step += 1;
        if self.step.is_multiple_of(self.config.eval_interval) {
            self.record_eval(sink)?;
        }
        if self.step.is_multiple_of(self.config.bias_interval) {
            self.record_probes(sink)?;
        }
        Ok(())
    }

    fn collect(&mut self) -> Result<()> {
        let obs = self.env.observe(&self.env_state);
        let mixture = self.config.variant.uses_mixture();
        let (action, component) = if self.step < self.config.warmup_steps {
            let d = self.env.spec().action_dim;
            let rng = &mut self.rngs.warmup;
            let a: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let c = if mixture && rng.random_bool(0.5) { 2 } else { 1 };
            (a, c)
        } else {
            let actor = ActingPolicy {
                policy: &self.policy,
                mode: self.acting_mode(),
            };
            let o = Tensor::matrix(1, obs.len(), obs.clone());
            let s = actor.act_batch(&o, &mut self.rngs.policy).remove(0);
            (s.action, s.component)
        };
        let step = self.env.step(&self.env_state, &action, &mut self.rngs.env)?;
        self.replay.push(Transition {
            s: obs,
            a: action,
            r: step.reward,
            s_next: self.env.observe(&step.state),
            done: step.terminal,
            component_id: component,
        })?;
        self.env_state = if step.done() {
            self.env.reset_with(&mut self.rngs.env)
        } else {
            step.state
        };
        Ok(())
    }

    fn sample_batches(&mut self) -> Result<Vec<Batch>> {
        let b = self.config.batch_size;
        match &self.replay {
            ReplaySet::Shared(buf) => Ok(vec![buf.sample(b, &mut self.rngs.replay)?]),
            ReplaySet::Separate(bufs) => bufs.iter().map(|buf| buf.sample(b, &mut self.rngs.replay)).collect(),
        }
    }

    fn update(&mut self) -> Result<()> {
        let batches = self.sample_batches()?;
        let critic_ok = self.critic_step(&batches)?;
        let actor_ok = self.actor_step(&batches)?;
        if critic_ok && actor_ok {
            self.skips = 0;
            self.updates += 1;
        } else {
            self.skips += 1;
            if self.skips >= MAX_CONSECUTIVE_SKIPS {
                return Err(Error::Aborted {
                    step: self.step,
                    reason: format!("{} consecutive updates skipped on non-finite values", self.skips),
                });
            }
        }
        Ok(())
    }

    /// Regresses the online critics onto the variant's targets, then moves
    /// the target nets. Returns `false` when the step was skipped.
    fn critic_step(&mut self, batches: &[Batch]) -> Result<bool> {
        let d = self.env.spec().action_dim;
        let n = self.critics.len();
        let mut targets = Vec::with_capacity(batches.len());
        for batch in batches {
            let noise = [
                standard_normal(batch.len(), d, &mut self.rngs.policy),
                standard_normal(batch.len(), d, &mut self.rngs.policy),
            ];
            let ctx = TargetContext {
                variant: self.config.variant,
                gamma: self.config.gamma,
                top_k: self.config.top_k,
                alpha: self.alpha(),
                policy: &self.policy,
                critics: &self.critics,
            };
            targets.push(build_targets(&ctx, batch, &noise, &mut self.rngs.assignment, &mut self.audit)?);
        }
        let tape = Tape::new();
        let bound: Vec<_> = self.critics.online.iter().map(|net| net.bind(&tape, true)).collect();
        let mut total: Option<crate::autodiff::Var<'_>> = None;
        let mut values = Vec::new();
        for (bi, (batch, y)) in batches.iter().zip(&targets).enumerate() {
            let inputs = tape.constant(batch.states.concat_cols(&batch.actions));
            // separate buffers: critic i learns only from buffer i
            let which: Vec<&_> = if batches.len() > 1 { vec![&bound[bi]] } else { bound.iter().collect() };
            for loss in critic_losses(&which, self.critics.kind, self.critics.taus(), inputs, y)? {
                values.push(loss.item());
                total = Some(match total {
                    None => loss,
                    Some(t) => t.add(loss),
                });
            }
        }
        let total = total.expect("at least one critic");
        if !values.iter().all(|v| v.is_finite()) {
            warn!("step {}: non-finite critic loss {:?}, update skipped", self.step, values);
            return Ok(false);
        }
        let grads = tape.backward(total)?;
        for i in 0..n {
            let g = bound[i].grads(&grads);
            if self.critic_opt[i].step(&mut self.critics.online[i].params_mut(), &g)? == StepOutcome::SkippedNonFinite {
                return Ok(false);
            }
        }
        self.critics.polyak(self.config.tau)?;
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        self.losses.critic.0 += mean;
        self.losses.critic.1 += 1;
        Ok(true)
    }

    fn actor_step(&mut self, batches: &[Batch]) -> Result<bool> {
        let d = self.env.spec().action_dim;
        let variant = self.config.variant;
        let states = [&batches[0].states, &batches[batches.len() - 1].states];
        let noise = [
            standard_normal(states[0].rows(), d, &mut self.rngs.policy),
            standard_normal(states[1].rows(), d, &mut self.rngs.policy),
        ];
        let alpha = self.alpha();
        let tape = Tape::new();
        let components = [self.policy.components[0].bind(&tape, true), self.policy.components[1].bind(&tape, true)];
        let critics: Vec<_> = self.critics.online.iter().map(|n| n.bind(&tape, false)).collect();
        let out = match actor_losses(&tape, variant, self.config.top_k, alpha, &components, &critics, states, &noise) {
            Ok(out) => out,
            Err(Error::NonFinite(what)) => {
                warn!("step {}: non-finite {what}, update skipped", self.step);
                return Ok(false);
            }
            Err(e) => return Err(e),
        };
        let loss_values: Vec<f64> = out.per_component.iter().map(|l| l.item()).collect();
        let total = out.per_component.iter().skip(1).fold(out.per_component[0], |a, l| a.add(*l));
        let grads = tape.backward(total)?;
        let learners = if variant.uses_mixture() { 2 } else { 1 };
        for c in 0..learners {
            let g = components[c].net.grads(&grads);
            let params = &mut self.policy.components[c].net_mut().params_mut();
            if self.actor_opt[c].step(params, &g)? == StepOutcome::SkippedNonFinite {
                return Ok(false);
            }
        }
        for (c, v) in loss_values.iter().enumerate() {
            self.losses.actor[c].0 += v;
            self.losses.actor[c].1 += 1;
        }
        if self.config.entropy {
            let g = temperature_gradient(&out.log_probs, self.target_entropy);
            self.alpha_opt.step(&mut [&mut self.log_alpha], &[Tensor::scalar(g)])?;
        }
        Ok(true)
    }

    /// Mean undiscounted return over `eval_episodes` episodes from fixed
    /// start states.
    pub fn evaluate(&mut self) -> Result<f64> {
        let mut starts_rng = stream(EVAL_SEED, Stream::Eval);
        let mut states: Vec<EnvState> = (0..self.config.eval_episodes)
            .map(|_| self.env.reset_with(&mut starts_rng))
            .collect();
        let mut alive = vec![true; states.len()];
        let mut totals = vec![0.0; states.len()];
        let stochastic = ActingPolicy {
            policy: &self.policy,
            mode: self.acting_mode(),
        };
        let greedy = GreedyActor {
            policy: &self.policy,
            critics: &self.critics,
            mixture: self.config.variant.uses_mixture(),
        };
        let actor: &dyn Actor = match self.config.eval_mode {
            EvalMode::Stochastic => &stochastic,
            EvalMode::Greedy => &greedy,
        };
        loop {
            let live: Vec<usize> = (0..states.len()).filter(|&i| alive[i]).collect();
            if live.is_empty() {
                break;
            }
            let obs: Vec<Vec<f64>> = live.iter().map(|&i| self.env.observe(&states[i])).collect();
            let acts = actor.act_batch(&Tensor::from_rows(&obs)?, &mut self.rngs.eval);
            for (k, &i) in live.iter().enumerate() {
                let step = self.env.step(&states[i], &acts[k].action, &mut self.rngs.eval)?;
                totals[i] += step.reward;
                alive[i] = !step.done();
                states[i] = step.state;
            }
        }
        Ok(totals.iter().sum::<f64>() / totals.len() as f64)
    }

    /// On-policy bias at the probe states under the variant's own assessment.
    pub fn probe_bias(&mut self) -> Result<BiasReport> {
        let actor = ActingPolicy {
            policy: &self.policy,
            mode: self.acting_mode(),
        };
        let estimator = AssessedValue::new(&self.config, &self.critics);
        let opts = McOptions {
            reward: if self.config.expected_reward_returns {
                RewardMode::Expected
            } else {
                RewardMode::Sampled
            },
            soft_alpha: (self.config.entropy && self.config.soft_bias).then(|| self.alpha()),
        };
        measure_bias(
            &self.env,
            &actor,
            &estimator,
            &self.probes,
            self.config.bias_rollouts,
            self.config.bias_horizon,
            &mut self.rngs.diagnostics,
            opts,
            self.step,
        )
    }

    pub fn probe_log_ratio(&mut self) -> Result<LogRatioReport> {
        let obs: Vec<Vec<f64>> = self.probes.iter().map(|s| self.env.observe(s)).collect();
        log_ratio_divergence(
            &self.policy,
            &Tensor::from_rows(&obs)?,
            self.config.log_ratio_samples,
            &mut self.rngs.diagnostics,
            self.step,
        )
    }

    fn record(&self, metric: &str, value: f64, component: Option<usize>, probes: Option<usize>) -> MetricRecord {
        MetricRecord {
            run_id: self.run_id.clone(),
            step: self.step,
            wall_time: self.started.elapsed().as_secs_f64(),
            metric: metric.to_string(),
            value,
            component,
            probes,
        }
    }

    fn record_eval(&mut self, sink: &mut dyn FnMut(&MetricRecord) -> Result<()>) -> Result<()> {
        let ret = self.evaluate()?;
        debug!("{} step {}: eval return {ret:.3}", self.run_id, self.step);
        sink(&self.record(names::EVAL_RETURN, ret, None, None))?;
        sink(&self.record(names::ALPHA, self.alpha(), None, None))?;
        let (critic, actor) = self.losses.take();
        if let Some(v) = critic {
            sink(&self.record(names::CRITIC_LOSS, v, None, None))?;
        }
        for (c, v) in actor.iter().enumerate() {
            if let Some(v) = v {
                sink(&self.record(names::ACTOR_LOSS, *v, Some(c + 1), None))?;
            }
        }
        Ok(())
    }

    fn record_probes(&mut self, sink: &mut dyn FnMut(&MetricRecord) -> Result<()>) -> Result<()> {
        let bias = self.probe_bias()?;
        let p = Some(bias.probes);
        sink(&self.record(names::BIAS, bias.bias(), None, p))?;
        sink(&self.record(names::BIAS_SE, bias.bias_se, None, p))?;
        sink(&self.record(names::BIAS_ESTIMATE, bias.estimate, None, p))?;
        sink(&self.record(names::BIAS_RETURN, bias.mc_return, None, p))?;
        if self.config.variant.uses_mixture() {
            let ratio = self.probe_log_ratio()?;
            for c in 0..2 {
                sink(&self.record(names::LOG_RATIO, ratio.expectation[c], Some(c + 1), p))?;
            }
        }
        Ok(())
    }

    /// Parameters of every net plus `log_alpha`.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut nets = vec![
            ("actor1".to_string(), self.policy.components[0].net().clone()),
            ("actor2".to_string(), self.policy.components[1].net().clone()),
        ];
        for (i, (o, t)) in self.critics.online.iter().zip(&self.critics.target).enumerate() {
            nets.push((format!("critic{}", i + 1), o.clone()));
            nets.push((format!("critic{}_target", i + 1), t.clone()));
        }
        Checkpoint {
            seed: self.config.seed,
            step: self.step as u64,
            nets,
            scalars: vec![("log_alpha".to_string(), self.log_alpha.item())],
        }
    }
}

/// Final trainer and every record it emitted.
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub metrics: Vec<MetricRecord>,
}

/// Builds a trainer for `config` and runs it to completion.
pub fn train(config: &AlgoConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config.clone())?;
    let mut metrics = Vec::new();
    trainer.run(&mut |m| {
        metrics.push(m.clone());
        Ok(())
    })?;
    Ok(TrainOutcome { trainer, metrics })
}

#[cfg(test)]
mod tests;
