//! Centralized-training/decentralized-execution multi-agent actor-critic.
//!
//! Each vehicle owns an actor that maps its local observation to a raw action
//! in `[0,1]^{2k}` and a critic that scores the joint state and joint action
//! of the whole fleet. Training interleaves, every slot and for every agent:
//! a TD-target critic regression, a policy-gradient actor step, and soft
//! target updates. Execution needs only the local actor.

pub mod nn;
pub mod replay;

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::env::{AgentObservation, Experience, SlotOutcome, VecEnv};
use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;
use nn::{Activation, Gradients, Mlp};
use replay::ReplayBuffer;

pub use nn::soft_update;

/// How the actor update interprets the policy.
///
/// `StochasticGaussian` treats executed actions as draws from a Gaussian
/// centered on the actor output with fixed `policy_std` and ascends
/// `E[grad log pi * Q]`. `Deterministic` ascends the critic directly through
/// the actor output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyVariant {
    StochasticGaussian,
    Deterministic,
}

/// Trainer hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Target-network blend rate per update.
    pub soft_update_rate: f64,
    pub exploration_noise_initial: f64,
    pub exploration_noise_final: f64,
    /// Fraction of total steps over which the noise decays linearly.
    pub exploration_decay_fraction: f64,
    /// Env steps during which actions are drawn uniformly at random.
    pub warmup_steps: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Assumed action standard deviation of the stochastic policy.
    pub policy_std: f64,
    pub policy_variant: PolicyVariant,
    /// Global-norm clip applied to each update's gradient; `None` disables.
    pub grad_clip_norm: Option<f64>,
    /// Standardize critic scores within each actor batch (zero mean, unit
    /// variance) so the policy-gradient step size does not depend on the
    /// reward scale.
    pub normalize_advantages: bool,
    /// Subtract a running mean from rewards when forming TD targets. The
    /// critic then learns a differential value, which keeps the
    /// action-dependent part of Q from being dwarfed by the constant
    /// `mean/(1-gamma)` offset. Shifts every Q by the same constant, so the
    /// induced policy ordering is unchanged.
    pub center_rewards: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 500,
            steps_per_episode: 100,
            batch_size: 64,
            buffer_capacity: 100_000,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            soft_update_rate: 0.01,
            exploration_noise_initial: 0.3,
            exploration_noise_final: 0.05,
            exploration_decay_fraction: 0.5,
            warmup_steps: 1000,
            actor_hidden: vec![128, 128],
            critic_hidden: vec![256, 256],
            policy_std: 0.2,
            policy_variant: PolicyVariant::StochasticGaussian,
            grad_clip_norm: Some(10.0),
            normalize_advantages: true,
            center_rewards: true,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        fn field(cond: bool, field: &'static str, reason: &str) -> Result<()> {
            if cond {
                Ok(())
            } else {
                Err(Error::InvalidConfig {
                    field,
                    reason: reason.into(),
                })
            }
        }
        field(self.episodes > 0, "episodes", "must be positive")?;
        field(self.steps_per_episode > 0, "steps_per_episode", "must be positive")?;
        field(self.batch_size > 0, "batch_size", "must be positive")?;
        field(
            self.buffer_capacity >= self.batch_size,
            "buffer_capacity",
            "must be at least batch_size",
        )?;
        field(self.actor_lr > 0.0, "actor_lr", "must be positive")?;
        field(self.critic_lr > 0.0, "critic_lr", "must be positive")?;
        field(
            (0.0..=1.0).contains(&self.soft_update_rate),
            "soft_update_rate",
            "must lie in [0, 1]",
        )?;
        field(
            self.exploration_noise_initial >= 0.0 && self.exploration_noise_final >= 0.0,
            "exploration_noise_initial",
            "noise levels must be nonnegative",
        )?;
        field(
            self.exploration_decay_fraction > 0.0 && self.exploration_decay_fraction <= 1.0,
            "exploration_decay_fraction",
            "must lie in (0, 1]",
        )?;
        field(!self.actor_hidden.is_empty(), "actor_hidden", "must not be empty")?;
        field(!self.critic_hidden.is_empty(), "critic_hidden", "must not be empty")?;
        field(self.policy_std > 0.0, "policy_std", "must be positive")?;
        if let Some(c) = self.grad_clip_norm {
            field(c > 0.0, "grad_clip_norm", "must be positive when set")?;
        }
        Ok(())
    }
}

/// Exploration noise level at a given global step.
pub fn exploration_noise_std(cfg: &TrainConfig, global_step: usize, total_steps: usize) -> f64 {
    let decay_steps = (total_steps as f64 * cfg.exploration_decay_fraction).max(1.0);
    let t = global_step as f64 / decay_steps;
    if t >= 1.0 {
        return cfg.exploration_noise_final;
    }
    cfg.exploration_noise_initial + t * (cfg.exploration_noise_final - cfg.exploration_noise_initial)
}

/// One agent's four networks. Targets start as exact copies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentNets {
    pub actor: Mlp,
    pub target_actor: Mlp,
    pub critic: Mlp,
    pub target_critic: Mlp,
}

impl AgentNets {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        critic_input_dim: usize,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Self {
        let mut actor_dims = vec![obs_dim];
        actor_dims.extend_from_slice(&cfg.actor_hidden);
        actor_dims.push(act_dim);
        let mut actor_acts = vec![Activation::Tanh; cfg.actor_hidden.len()];
        actor_acts.push(Activation::Sigmoid);
        let actor = Mlp::new(&actor_dims, &actor_acts, rng);

        let mut critic_dims = vec![critic_input_dim];
        critic_dims.extend_from_slice(&cfg.critic_hidden);
        critic_dims.push(1);
        let mut critic_acts = vec![Activation::Tanh; cfg.critic_hidden.len()];
        critic_acts.push(Activation::Identity);
        let critic = Mlp::new(&critic_dims, &critic_acts, rng);

        Self {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
        }
    }
}

/// Maps raw observation encodings to order-one network inputs: sizes by the
/// maximum task size, capacities by server capacity, delays by the deadline,
/// positions by road length, gain through a scaled log.
#[derive(Debug, Clone)]
pub struct ObsNormalizer {
    k: usize,
    max_task_size: f64,
    cycles_per_byte: f64,
    deadline_s: f64,
    f_server_hz: f64,
    road_length_m: f64,
}

impl ObsNormalizer {
    pub fn from_config(c: &ScenarioConfig) -> Self {
        Self {
            k: c.k_tasks,
            max_task_size: c.task_size_range_bytes[1],
            cycles_per_byte: c.cycles_per_byte,
            deadline_s: c.deadline_s,
            f_server_hz: c.f_server_hz,
            road_length_m: c.road_length_m,
        }
    }

    pub fn obs_dim(&self) -> usize {
        AgentObservation::encoded_len(self.k)
    }

    /// Normalizes one raw encoding in place into `out`.
    pub fn normalize_into(&self, raw: &[f64], out: &mut [f64]) {
        let k = self.k;
        debug_assert_eq!(raw.len(), self.obs_dim());
        debug_assert_eq!(out.len(), self.obs_dim());
        for i in 0..k {
            out[3 * i] = raw[3 * i] / self.max_task_size;
            out[3 * i + 1] = raw[3 * i + 1] / self.cycles_per_byte;
            out[3 * i + 2] = raw[3 * i + 2] / self.deadline_s;
        }
        for i in 0..k {
            out[3 * k + i] = raw[3 * k + i] / self.f_server_hz;
        }
        out[4 * k] = raw[4 * k] / self.road_length_m;
        out[4 * k + 1] = raw[4 * k + 1] / self.road_length_m;
        out[4 * k + 2] = (raw[4 * k + 2].max(1e-30).log10() + 12.0) / 6.0;
    }

    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; raw.len()];
        self.normalize_into(raw, &mut out);
        out
    }
}

/// Action selection mode for [`act`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActMode {
    /// Deterministic actor output.
    Greedy,
    /// Actor output plus Gaussian noise, clamped to `[0,1]`.
    Explore { noise_std: f64 },
    /// Uniform random action (warmup).
    Uniform,
}

/// Computes one agent's raw action from its normalized observation.
pub fn act<R: Rng + ?Sized>(
    actor: &Mlp,
    obs_norm: &[f64],
    mode: ActMode,
    rng: &mut R,
) -> Vec<f64> {
    match mode {
        ActMode::Uniform => (0..actor.output_dim()).map(|_| rng.gen_range(0.0..=1.0)).collect(),
        ActMode::Greedy => actor.forward_one(obs_norm),
        ActMode::Explore { noise_std } => {
            let mut a = actor.forward_one(obs_norm);
            if noise_std > 0.0 {
                let noise = Normal::new(0.0, noise_std).expect("valid std");
                for v in &mut a {
                    *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
                }
            }
            a
        }
    }
}

/// Scores one joint state/action pair. The concatenated encoding must match
/// the critic's input layout exactly.
pub fn critic_q(critic: &Mlp, joint_state_norm: &[f64], joint_action: &[f64]) -> Result<f64> {
    let total = joint_state_norm.len() + joint_action.len();
    if total != critic.input_dim() {
        return Err(Error::LayoutMismatch {
            expected: critic.input_dim(),
            got: total,
        });
    }
    let mut input = Vec::with_capacity(total);
    input.extend_from_slice(joint_state_norm);
    input.extend_from_slice(joint_action);
    Ok(critic.forward_one(&input)[0])
}

/// Bootstrapped TD targets: `y = r + gamma * Q'(S', A')` with the next joint
/// action reassembled from the target actors on the next observations.
pub fn td_targets(
    rewards: &Array1<f64>,
    next_states_norm: &Array2<f64>,
    target_actors: &[&Mlp],
    obs_dim: usize,
    target_critic: &Mlp,
    discount: f64,
) -> Result<Array1<f64>> {
    let m = next_states_norm.nrows();
    let n_agents = target_actors.len();
    if next_states_norm.ncols() != n_agents * obs_dim {
        return Err(Error::LayoutMismatch {
            expected: n_agents * obs_dim,
            got: next_states_norm.ncols(),
        });
    }
    let act_dims: usize = target_actors.iter().map(|a| a.output_dim()).sum();
    if target_critic.input_dim() != next_states_norm.ncols() + act_dims {
        return Err(Error::LayoutMismatch {
            expected: target_critic.input_dim(),
            got: next_states_norm.ncols() + act_dims,
        });
    }
    let mut input = Array2::zeros((m, target_critic.input_dim()));
    input
        .slice_mut(s![.., ..next_states_norm.ncols()])
        .assign(next_states_norm);
    let mut col = next_states_norm.ncols();
    for (i, actor) in target_actors.iter().enumerate() {
        let local = next_states_norm.slice(s![.., i * obs_dim..(i + 1) * obs_dim]);
        let actions = actor.forward(local);
        input
            .slice_mut(s![.., col..col + actor.output_dim()])
            .assign(&actions);
        col += actor.output_dim();
    }
    let q_next = target_critic.forward(input.view());
    Ok(rewards + &(discount * &q_next.index_axis(Axis(1), 0)))
}

/// Critic values for a batch of joint inputs (state and action concatenated).
pub fn critic_values(critic: &Mlp, input: &Array2<f64>) -> Result<Array1<f64>> {
    if input.ncols() != critic.input_dim() {
        return Err(Error::LayoutMismatch {
            expected: critic.input_dim(),
            got: input.ncols(),
        });
    }
    Ok(critic.forward(input.view()).index_axis(Axis(1), 0).to_owned())
}

/// Mean squared TD-error loss and its parameter gradient.
pub fn critic_loss_and_grads(
    critic: &Mlp,
    input: &Array2<f64>,
    targets: &Array1<f64>,
) -> Result<(f64, Gradients)> {
    if input.ncols() != critic.input_dim() {
        return Err(Error::LayoutMismatch {
            expected: critic.input_dim(),
            got: input.ncols(),
        });
    }
    let m = input.nrows() as f64;
    let cache = critic.forward_cached(input.view());
    let q = cache.output().index_axis(Axis(1), 0).to_owned();
    let delta = targets - &q;
    let loss = delta.iter().map(|d| d * d).sum::<f64>() / m;
    // dL/dq = -2*delta/m
    let dloss = delta.mapv(|d| -2.0 * d / m).insert_axis(Axis(1));
    let (grads, _) = critic.backward(&cache, dloss);
    Ok((loss, grads))
}

/// One descent step on the mean squared TD error. Returns the pre-update
/// loss; aborts if the loss or gradient stops being finite.
pub fn critic_update(
    critic: &mut Mlp,
    input: &Array2<f64>,
    targets: &Array1<f64>,
    critic_lr: f64,
    grad_clip_norm: Option<f64>,
) -> Result<f64> {
    let (loss, mut grads) = critic_loss_and_grads(critic, input, targets)?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite("critic loss or gradient".into()));
    }
    if let Some(c) = grad_clip_norm {
        grads.clip_global_norm(c);
    }
    critic.gradient_step(&grads, -critic_lr);
    Ok(loss)
}

/// Running mean of every reward the trainer has observed.
#[derive(Debug, Clone, Default)]
pub(crate) struct RewardCenter {
    sum: f64,
    count: u64,
}

impl RewardCenter {
    pub fn record(&mut self, rewards: &[f64]) {
        for r in rewards {
            self.sum += r;
        }
        self.count += rewards.len() as u64;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Standardizes a batch of critic scores to zero mean and unit variance.
pub fn standardize(values: &Array1<f64>) -> Array1<f64> {
    let m = values.len() as f64;
    let mean = values.sum() / m;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    let std = var.sqrt().max(1e-8);
    values.mapv(|v| (v - mean) / std)
}

/// Policy-gradient estimate for the Gaussian policy: objective
/// `J = mean_i w_i * log pi(a_i | s_i)` with `w_i` the critic scores
/// (optionally centered by the batch mean), gradient taken with `w_i` held
/// constant. Returns `(J, grad_theta J)`; ascend to improve.
pub fn actor_gradient_stochastic(
    actor: &Mlp,
    local_obs_norm: &Array2<f64>,
    actions_taken: &Array2<f64>,
    q_values: &Array1<f64>,
    policy_std: f64,
    subtract_baseline: bool,
) -> (f64, Gradients) {
    let m = local_obs_norm.nrows() as f64;
    let baseline = if subtract_baseline {
        q_values.sum() / m
    } else {
        0.0
    };
    let cache = actor.forward_cached(local_obs_norm.view());
    let mu = cache.output();
    let var = policy_std * policy_std;

    let mut objective = 0.0;
    let mut dj_dmu = Array2::zeros(mu.dim());
    for i in 0..mu.nrows() {
        let w = q_values[i] - baseline;
        let mut log_pi = 0.0;
        for j in 0..mu.ncols() {
            let diff = actions_taken[[i, j]] - mu[[i, j]];
            log_pi -= diff * diff / (2.0 * var);
            dj_dmu[[i, j]] = w * diff / var / m;
        }
        objective += w * log_pi / m;
    }
    let (grads, _) = actor.backward(&cache, dj_dmu);
    (objective, grads)
}

/// Deterministic-policy gradient: ascends `J = mean_i Q(S_i, A_i)` where the
/// agent's slice of the joint action is replaced by its actor output.
/// `action_col` is the column of `joint_input` where that slice starts.
pub fn actor_gradient_deterministic(
    actor: &Mlp,
    critic: &Mlp,
    local_obs_norm: &Array2<f64>,
    joint_input: &Array2<f64>,
    action_col: usize,
) -> Result<(f64, Gradients)> {
    let m = joint_input.nrows();
    let act_dim = actor.output_dim();
    if action_col + act_dim > joint_input.ncols() || joint_input.ncols() != critic.input_dim() {
        return Err(Error::LayoutMismatch {
            expected: critic.input_dim(),
            got: joint_input.ncols(),
        });
    }
    let actor_cache = actor.forward_cached(local_obs_norm.view());
    let mut input = joint_input.clone();
    input
        .slice_mut(s![.., action_col..action_col + act_dim])
        .assign(actor_cache.output());
    let critic_cache = critic.forward_cached(input.view());
    let objective = critic_cache.output().sum() / m as f64;

    let dj_dq = Array2::from_elem((m, 1), 1.0 / m as f64);
    let (_, dinput) = critic.backward(&critic_cache, dj_dq);
    let dj_dmu = dinput
        .slice(s![.., action_col..action_col + act_dim])
        .to_owned();
    let (grads, _) = actor.backward(&actor_cache, dj_dmu);
    Ok((objective, grads))
}

/// Applies an ascent step to the actor with optional gradient clipping.
pub fn actor_apply_update(
    actor: &mut Mlp,
    mut grads: Gradients,
    actor_lr: f64,
    grad_clip_norm: Option<f64>,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("actor gradient".into()));
    }
    if let Some(c) = grad_clip_norm {
        grads.clip_global_norm(c);
    }
    actor.gradient_step(&grads, actor_lr);
    Ok(())
}

/// Per-episode training metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    /// Mean per-step reward, one entry per agent.
    pub mean_reward: Vec<f64>,
    /// Mean critic loss over this episode's updates (0 before updates begin).
    pub critic_loss: f64,
    /// Mean actor objective estimate over this episode's updates.
    pub actor_objective: f64,
    /// Mean per-vehicle completion delay over all slots, seconds.
    pub mean_total_delay_s: f64,
    /// Deadline misses across all vehicles and slots.
    pub deadline_violations: u64,
    /// Mean executed aggregate allocation per slot, GHz.
    pub resource_usage_ghz: f64,
    /// Slots whose pre-projection aggregate exceeded server capacity.
    pub capacity_overflow_events: u64,
    /// Tasks whose effective allocation hit the singularity clamp.
    pub alloc_clamp_events: u64,
}

impl EpisodeMetrics {
    pub fn mean_reward_all(&self) -> f64 {
        self.mean_reward.iter().sum::<f64>() / self.mean_reward.len().max(1) as f64
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub agents: Vec<AgentNets>,
    pub history: Vec<EpisodeMetrics>,
    /// Final cursor of the trainer RNG stream.
    pub trainer_rng_word_pos: u128,
    /// Final cursor of the environment RNG stream.
    pub env_rng_word_pos: u128,
}

pub(crate) struct SlotAccumulator {
    pub reward_sums: Vec<f64>,
    pub delay_sum: f64,
    pub delay_count: u64,
    pub violations: u64,
    pub resource_ghz_sum: f64,
    pub slots: u64,
    pub overflow_events: u64,
    pub clamp_events: u64,
}

impl SlotAccumulator {
    pub fn new(n_agents: usize) -> Self {
        Self {
            reward_sums: vec![0.0; n_agents],
            delay_sum: 0.0,
            delay_count: 0,
            violations: 0,
            resource_ghz_sum: 0.0,
            slots: 0,
            overflow_events: 0,
            clamp_events: 0,
        }
    }

    pub fn record(&mut self, rewards: &[f64], outcome: &SlotOutcome) {
        for (sum, r) in self.reward_sums.iter_mut().zip(rewards) {
            *sum += r;
        }
        for v in &outcome.vehicles {
            // Infeasible slots (no usable rate with work offloaded) are
            // excluded from the delay mean; they still count as violations.
            if v.total_delay_s.is_finite() {
                self.delay_sum += v.total_delay_s;
                self.delay_count += 1;
            }
            self.violations += v.deadline_violations as u64;
            self.resource_ghz_sum += v.alloc_hz.iter().sum::<f64>() / 1e9;
        }
        if outcome.capacity_overflow_hz > 0.0 {
            self.overflow_events += 1;
        }
        self.clamp_events += outcome.alloc_clamp_events as u64;
        self.slots += 1;
    }

    pub fn into_metrics(
        self,
        episode: usize,
        steps: usize,
        critic_loss: f64,
        actor_objective: f64,
    ) -> EpisodeMetrics {
        EpisodeMetrics {
            episode,
            mean_reward: self
                .reward_sums
                .iter()
                .map(|s| s / steps.max(1) as f64)
                .collect(),
            critic_loss,
            actor_objective,
            mean_total_delay_s: self.delay_sum / self.delay_count.max(1) as f64,
            deadline_violations: self.violations,
            resource_usage_ghz: self.resource_ghz_sum / self.slots.max(1) as f64,
            capacity_overflow_events: self.overflow_events,
            alloc_clamp_events: self.clamp_events,
        }
    }
}

fn normalize_joint(
    normalizer: &ObsNormalizer,
    obs: &[Vec<f64>],
    row: &mut [f64],
) {
    let d = normalizer.obs_dim();
    for (i, o) in obs.iter().enumerate() {
        normalizer.normalize_into(o, &mut row[i * d..(i + 1) * d]);
    }
}

/// Builds the joint-state / joint-action / reward / next-state arrays for one
/// agent's minibatch.
pub(crate) fn assemble_batch(
    batch: &[&Experience],
    normalizer: &ObsNormalizer,
    n_agents: usize,
    act_dim: usize,
    agent: usize,
) -> (Array2<f64>, Array2<f64>, Array1<f64>, Array2<f64>) {
    let m = batch.len();
    let d = normalizer.obs_dim();
    let mut states = Array2::zeros((m, n_agents * d));
    let mut next_states = Array2::zeros((m, n_agents * d));
    let mut actions = Array2::zeros((m, n_agents * act_dim));
    let mut rewards = Array1::zeros(m);
    for (i, e) in batch.iter().enumerate() {
        normalize_joint(normalizer, &e.obs, states.row_mut(i).as_slice_mut().unwrap());
        normalize_joint(
            normalizer,
            &e.next_obs,
            next_states.row_mut(i).as_slice_mut().unwrap(),
        );
        for (a_idx, a) in e.actions.iter().enumerate() {
            for (j, v) in a.iter().enumerate() {
                actions[[i, a_idx * act_dim + j]] = *v;
            }
        }
        rewards[i] = e.rewards[agent];
    }
    (states, actions, rewards, next_states)
}

/// Runs the full training loop and returns the learned networks plus
/// per-episode metrics. Fully determined by the environment seed and
/// `cfg.seed`.
pub fn train(env: &mut VecEnv, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let scenario = env.config().clone();
    let n_agents = scenario.n_vehicles;
    let act_dim = 2 * scenario.k_tasks;
    let normalizer = ObsNormalizer::from_config(&scenario);
    let obs_dim = normalizer.obs_dim();
    let critic_input_dim = n_agents * (obs_dim + act_dim);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut agents: Vec<AgentNets> = (0..n_agents)
        .map(|_| AgentNets::new(obs_dim, act_dim, critic_input_dim, cfg, &mut rng))
        .collect();
    let mut buffer: ReplayBuffer<Experience> = ReplayBuffer::new(cfg.buffer_capacity);
    let total_steps = cfg.episodes * cfg.steps_per_episode;
    let mut history = Vec::with_capacity(cfg.episodes);
    let mut global_step = 0usize;
    let mut reward_center = RewardCenter::default();

    for episode in 0..cfg.episodes {
        let obs = env.reset()?;
        let mut obs_enc: Vec<Vec<f64>> = obs.iter().map(AgentObservation::encode).collect();
        let mut acc = SlotAccumulator::new(n_agents);
        let mut loss_sum = 0.0;
        let mut obj_sum = 0.0;
        let mut update_count = 0u64;

        for step in 0..cfg.steps_per_episode {
            let noise_std = exploration_noise_std(cfg, global_step, total_steps);
            let raw_actions: Vec<Vec<f64>> = (0..n_agents)
                .map(|i| {
                    let mode = if global_step < cfg.warmup_steps {
                        ActMode::Uniform
                    } else {
                        ActMode::Explore { noise_std }
                    };
                    act(
                        &agents[i].actor,
                        &normalizer.normalize(&obs_enc[i]),
                        mode,
                        &mut rng,
                    )
                })
                .collect();
            let action = env.project_action(&raw_actions)?;
            let (next_obs, rewards, outcome) = env.step(&action)?;
            let next_enc: Vec<Vec<f64>> = next_obs.iter().map(AgentObservation::encode).collect();
            acc.record(&rewards, &outcome);
            reward_center.record(&rewards);
            buffer.push(Experience {
                obs: obs_enc,
                actions: raw_actions,
                rewards,
                next_obs: next_enc.clone(),
            });
            obs_enc = next_enc;

            if global_step >= cfg.warmup_steps && buffer.len() >= cfg.batch_size {
                let reward_offset = if cfg.center_rewards {
                    reward_center.mean()
                } else {
                    0.0
                };
                for agent_idx in 0..n_agents {
                    let batch = buffer
                        .sample(cfg.batch_size, &mut rng)
                        .expect("buffer holds at least one batch");
                    let (states, actions, rewards_n, next_states) =
                        assemble_batch(&batch, &normalizer, n_agents, act_dim, agent_idx);

                    let target_actors: Vec<&Mlp> =
                        agents.iter().map(|a| &a.target_actor).collect();
                    let targets = td_targets(
                        &rewards_n.mapv(|r| r - reward_offset),
                        &next_states,
                        &target_actors,
                        obs_dim,
                        &agents[agent_idx].target_critic,
                        scenario.discount,
                    )?;

                    let mut input = Array2::zeros((cfg.batch_size, critic_input_dim));
                    input
                        .slice_mut(s![.., ..n_agents * obs_dim])
                        .assign(&states);
                    input
                        .slice_mut(s![.., n_agents * obs_dim..])
                        .assign(&actions);

                    let loss = critic_update(
                        &mut agents[agent_idx].critic,
                        &input,
                        &targets,
                        cfg.critic_lr,
                        cfg.grad_clip_norm,
                    )
                    .map_err(|e| train_context(e, episode, step))?;

                    let local_obs = states
                        .slice(s![.., agent_idx * obs_dim..(agent_idx + 1) * obs_dim])
                        .to_owned();
                    let (objective, grads) = match cfg.policy_variant {
                        PolicyVariant::StochasticGaussian => {
                            let q = critic_values(&agents[agent_idx].critic, &input)?;
                            let weights = if cfg.normalize_advantages {
                                standardize(&q)
                            } else {
                                q
                            };
                            let own_actions = actions
                                .slice(s![
                                    ..,
                                    agent_idx * act_dim..(agent_idx + 1) * act_dim
                                ])
                                .to_owned();
                            actor_gradient_stochastic(
                                &agents[agent_idx].actor,
                                &local_obs,
                                &own_actions,
                                &weights,
                                cfg.policy_std,
                                true,
                            )
                        }
                        PolicyVariant::Deterministic => actor_gradient_deterministic(
                            &agents[agent_idx].actor,
                            &agents[agent_idx].critic,
                            &local_obs,
                            &input,
                            n_agents * obs_dim + agent_idx * act_dim,
                        )?,
                    };
                    actor_apply_update(
                        &mut agents[agent_idx].actor,
                        grads,
                        cfg.actor_lr,
                        cfg.grad_clip_norm,
                    )
                    .map_err(|e| train_context(e, episode, step))?;

                    let rate = cfg.soft_update_rate;
                    let agent = &mut agents[agent_idx];
                    soft_update(&mut agent.target_critic, &agent.critic, rate)?;
                    soft_update(&mut agent.target_actor, &agent.actor, rate)?;

                    loss_sum += loss;
                    obj_sum += objective;
                    update_count += 1;
                }
            }
            global_step += 1;
        }

        let denom = update_count.max(1) as f64;
        history.push(acc.into_metrics(
            episode,
            cfg.steps_per_episode,
            loss_sum / denom,
            obj_sum / denom,
        ));
    }

    Ok(TrainOutput {
        agents,
        history,
        trainer_rng_word_pos: rng.get_word_pos(),
        env_rng_word_pos: env.rng_word_pos(),
    })
}

fn train_context(e: Error, episode: usize, step: usize) -> Error {
    match e {
        Error::NonFinite(what) => {
            Error::NonFinite(format!("{what} (episode {episode}, step {step})"))
        }
        other => other,
    }
}

/// Aggregate statistics of an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub episodes: usize,
    /// Mean per-step reward per agent.
    pub mean_reward: Vec<f64>,
    pub mean_total_delay_s: f64,
    /// Mean executed aggregate allocation per slot, GHz.
    pub mean_resource_ghz: f64,
    pub deadline_violations: u64,
}

impl EvalStats {
    pub fn mean_reward_all(&self) -> f64 {
        self.mean_reward.iter().sum::<f64>() / self.mean_reward.len().max(1) as f64
    }
}

/// Rolls out a policy (any mapping from local observation to raw action) and
/// reports aggregate statistics. `on_slot` sees every executed slot, in
/// order, for trace export.
pub fn run_policy<P, F>(
    env: &mut VecEnv,
    episodes: usize,
    steps_per_episode: usize,
    mut policy: P,
    mut on_slot: F,
) -> Result<EvalStats>
where
    P: FnMut(usize, &AgentObservation) -> Vec<f64>,
    F: FnMut(usize, usize, &crate::env::JointAction, &SlotOutcome),
{
    let n_agents = env.config().n_vehicles;
    let mut acc = SlotAccumulator::new(n_agents);
    for episode in 0..episodes {
        let mut obs = env.reset()?;
        for step in 0..steps_per_episode {
            let raw: Vec<Vec<f64>> = obs
                .iter()
                .enumerate()
                .map(|(i, o)| policy(i, o))
                .collect();
            let action = env.project_action(&raw)?;
            let (next_obs, rewards, outcome) = env.step(&action)?;
            acc.record(&rewards, &outcome);
            on_slot(episode, step, &action, &outcome);
            obs = next_obs;
        }
    }
    let total_steps = episodes * steps_per_episode;
    Ok(EvalStats {
        episodes,
        mean_reward: acc
            .reward_sums
            .iter()
            .map(|s| s / total_steps.max(1) as f64)
            .collect(),
        mean_total_delay_s: acc.delay_sum / acc.delay_count.max(1) as f64,
        mean_resource_ghz: acc.resource_ghz_sum / acc.slots.max(1) as f64,
        deadline_violations: acc.violations,
    })
}

/// Which trainer produced a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Marl,
    SharedBaseline,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Marl => "marl",
            Algorithm::SharedBaseline => "shared-baseline",
        }
    }
}

/// Cursor into a seeded RNG stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngCursor {
    pub seed: u64,
    pub word_pos: u128,
}

const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume evaluation of a trained policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub algorithm: Algorithm,
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
    /// One entry per agent; the shared baseline stores a single entry.
    pub agents: Vec<AgentNets>,
    pub trainer_rng: RngCursor,
    pub env_rng: RngCursor,
}

impl Checkpoint {
    pub fn from_training(
        algorithm: Algorithm,
        scenario: ScenarioConfig,
        train: TrainConfig,
        output: &TrainOutput,
    ) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            algorithm,
            trainer_rng: RngCursor {
                seed: train.seed,
                word_pos: output.trainer_rng_word_pos,
            },
            env_rng: RngCursor {
                seed: scenario.seed,
                word_pos: output.env_rng_word_pos,
            },
            scenario,
            train,
            agents: output.agents.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::Checkpoint(format!("serialization failed: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&raw)
            .map_err(|e| Error::Checkpoint(format!("deserialization failed: {e}")))?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (expected {CHECKPOINT_VERSION})",
                ckpt.format_version
            )));
        }
        if ckpt.agents.is_empty() {
            return Err(Error::Checkpoint("checkpoint holds no networks".into()));
        }
        Ok(ckpt)
    }

    /// The actor that drives agent `i` at execution time.
    pub fn actor_for(&self, i: usize) -> &Mlp {
        match self.algorithm {
            Algorithm::Marl => &self.agents[i].actor,
            Algorithm::SharedBaseline => &self.agents[0].actor,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tiny_scenario() -> ScenarioConfig {
        ScenarioConfig {
            n_vehicles: 2,
            k_tasks: 1,
            seed: 5,
            ..ScenarioConfig::default()
        }
    }

    fn tiny_train() -> TrainConfig {
        TrainConfig {
            episodes: 1,
            steps_per_episode: 2,
            batch_size: 1,
            buffer_capacity: 16,
            warmup_steps: 0,
            actor_hidden: vec![8],
            critic_hidden: vec![8],
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn act_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = TrainConfig {
            actor_hidden: vec![8],
            critic_hidden: vec![8],
            ..TrainConfig::default()
        };
        let nets = AgentNets::new(15, 6, 2 * (15 + 6), &cfg, &mut rng);
        let obs = vec![0.5; 15];

        // Output dimensionality is 2K = 6 for K = 3.
        let a = act(&nets.actor, &obs, ActMode::Greedy, &mut rng);
        assert_eq!(a.len(), 6);
        let b = act(&nets.actor, &obs, ActMode::Greedy, &mut rng);
        assert_eq!(a, b);
        // Zero noise equals the greedy output.
        let c = act(
            &nets.actor,
            &obs,
            ActMode::Explore { noise_std: 0.0 },
            &mut rng,
        );
        assert_eq!(a, c);
        let d = act(&nets.actor, &obs, ActMode::Uniform, &mut rng);
        assert!(d.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn critic_q_layout_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = tiny_train();
        let nets = AgentNets::new(7, 2, 2 * (7 + 2), &cfg, &mut rng);
        let state = vec![0.1; 14];
        let action = vec![0.5; 4];
        let q = critic_q(&nets.critic, &state, &action).unwrap();
        assert!(q.is_finite());
        assert_eq!(q, critic_q(&nets.critic, &state, &action).unwrap());
        assert!(critic_q(&nets.critic, &state, &action[..3]).is_err());

        // Swapping two agents' state blocks changes the input, hence (for a
        // generic critic) the value.
        let mut swapped = state.clone();
        swapped[0] = 0.9;
        let q2 = critic_q(&nets.critic, &swapped, &action).unwrap();
        assert_ne!(q, q2);
    }

    #[test]
    fn td_target_reference_value() {
        // reward = 1, gamma = 0.95, Q' = 2 => y = 2.9. Use a bias-only
        // "network" built by zeroing weights and setting the output bias.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = tiny_train();
        let obs_dim = 3;
        let act_dim = 1;
        let mut nets = AgentNets::new(obs_dim, act_dim, obs_dim + act_dim, &cfg, &mut rng);
        for i in 0..nets.target_critic.num_params() {
            nets.target_critic.set_param(i, 0.0);
        }
        // Last parameter is the output-layer bias under the flat ordering.
        let last = nets.target_critic.num_params() - 1;
        nets.target_critic.set_param(last, 2.0);

        let rewards = Array1::from(vec![1.0]);
        let next_states = Array2::zeros((1, obs_dim));
        let targets = td_targets(
            &rewards,
            &next_states,
            &[&nets.target_actor],
            obs_dim,
            &nets.target_critic,
            0.95,
        )
        .unwrap();
        assert_relative_eq!(targets[0], 2.9, max_relative = 1e-12);

        // Zero-weight target critic and zero reward give a zero target.
        for i in 0..nets.target_critic.num_params() {
            nets.target_critic.set_param(i, 0.0);
        }
        let targets = td_targets(
            &Array1::zeros(1),
            &next_states,
            &[&nets.target_actor],
            obs_dim,
            &nets.target_critic,
            0.95,
        )
        .unwrap();
        assert_eq!(targets[0], 0.0);
    }

    #[test]
    fn critic_update_reference_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = tiny_train();
        let mut nets = AgentNets::new(2, 1, 3, &cfg, &mut rng);

        // Single sample with delta = 2 has loss 4.
        let input = Array2::from_shape_vec((1, 3), vec![0.1, 0.2, 0.3]).unwrap();
        let q = critic_values(&nets.critic, &input).unwrap()[0];
        let targets = Array1::from(vec![q + 2.0]);
        let loss = critic_update(&mut nets.critic, &input, &targets, 1e-9, None).unwrap();
        assert_relative_eq!(loss, 4.0, max_relative = 1e-9);

        // Zero residual: loss 0 and parameters essentially unchanged.
        let before = nets.critic.clone();
        let q = critic_values(&nets.critic, &input).unwrap();
        let loss = critic_update(&mut nets.critic, &input, &q, 1e-3, None).unwrap();
        assert!(loss.abs() < 1e-24);
        for i in 0..before.num_params() {
            assert_relative_eq!(nets.critic.param(i), before.param(i), epsilon = 1e-12);
        }
    }

    #[test]
    fn stochastic_gradient_zero_q_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = tiny_train();
        let nets = AgentNets::new(2, 2, 8, &cfg, &mut rng);
        let obs = Array2::from_shape_vec((3, 2), vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let actions = Array2::from_shape_vec((3, 2), vec![0.4; 6]).unwrap();
        let q = Array1::zeros(3);
        let (obj, grads) = actor_gradient_stochastic(&nets.actor, &obs, &actions, &q, 0.2, false);
        assert_eq!(obj, 0.0);
        assert_eq!(grads.global_norm(), 0.0);
    }

    #[test]
    fn train_smoke_and_determinism() {
        let scenario = tiny_scenario();
        let cfg = tiny_train();

        let mut env1 = VecEnv::new(scenario.clone()).unwrap();
        let out1 = train(&mut env1, &cfg).unwrap();
        assert_eq!(out1.history.len(), 1);
        assert_eq!(out1.agents.len(), 2);
        assert!(out1.history[0].mean_reward.iter().all(|r| r.is_finite()));

        let mut env2 = VecEnv::new(scenario).unwrap();
        let out2 = train(&mut env2, &cfg).unwrap();
        assert_eq!(out1.history, out2.history);
        for (a, b) in out1.agents.iter().zip(&out2.agents) {
            for i in 0..a.actor.num_params() {
                assert_eq!(a.actor.param(i), b.actor.param(i));
            }
        }
    }

    #[test]
    fn targets_equal_online_at_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = tiny_train();
        let nets = AgentNets::new(5, 2, 14, &cfg, &mut rng);
        for i in 0..nets.actor.num_params() {
            assert_eq!(nets.actor.param(i), nets.target_actor.param(i));
        }
        for i in 0..nets.critic.num_params() {
            assert_eq!(nets.critic.param(i), nets.target_critic.param(i));
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let scenario = tiny_scenario();
        let cfg = tiny_train();
        let mut env = VecEnv::new(scenario.clone()).unwrap();
        let out = train(&mut env, &cfg).unwrap();
        let ckpt = Checkpoint::from_training(Algorithm::Marl, scenario, cfg, &out);

        let dir = std::env::temp_dir().join("dtvec-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("test.ckpt.json");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.format_version, 1);
        assert_eq!(loaded.algorithm, Algorithm::Marl);
        assert_eq!(loaded.agents.len(), 2);
        for i in 0..ckpt.agents[0].actor.num_params() {
            assert_eq!(
                loaded.agents[0].actor.param(i),
                ckpt.agents[0].actor.param(i)
            );
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn exploration_schedule_endpoints() {
        let cfg = TrainConfig::default();
        let total = 1000;
        assert_eq!(exploration_noise_std(&cfg, 0, total), 0.3);
        let mid = exploration_noise_std(&cfg, 250, total);
        assert!(mid < 0.3 && mid > 0.05);
        assert_eq!(exploration_noise_std(&cfg, 500, total), 0.05);
        assert_eq!(exploration_noise_std(&cfg, 999, total), 0.05);
    }
}
