//! Reference policies and the shared-network baseline trainer.
//!
//! The fixed policies give the experiments comparison floors. The shared
//! baseline reproduces a scheme where one actor-critic pair is shared by all
//! agents, the critic sees only the acting agent's local state and action,
//! and exactly one agent refreshes its action per step while the others
//! replay their previous ones.

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{AgentObservation, JointAction, VecEnv};
use crate::error::{Error, Result};
use crate::marl::replay::ReplayBuffer;
use crate::marl::{
    act, actor_apply_update, actor_gradient_deterministic, actor_gradient_stochastic,
    critic_update, critic_values, exploration_noise_std, soft_update, td_targets, ActMode,
    AgentNets, ObsNormalizer, PolicyVariant, SlotAccumulator, TrainConfig, TrainOutput,
};
use crate::scenario::ScenarioConfig;

/// Everything runs on the vehicle: zero offload, minimum allocation.
pub fn policy_all_local(config: &ScenarioConfig) -> JointAction {
    JointAction {
        per_agent: (0..config.n_vehicles)
            .map(|_| crate::env::AgentAction {
                offload_ratio: vec![0.0; config.k_tasks],
                alloc_hz: vec![config.f_alloc_min_hz; config.k_tasks],
            })
            .collect(),
    }
}

/// Everything offloads and the server is split evenly across all tasks,
/// clamped to the allocation bounds.
pub fn policy_full_offload_equal_split(config: &ScenarioConfig) -> JointAction {
    let share = config.f_server_hz / (config.n_vehicles * config.k_tasks) as f64;
    let alloc = share.clamp(config.f_alloc_min_hz, config.f_alloc_max_hz);
    JointAction {
        per_agent: (0..config.n_vehicles)
            .map(|_| crate::env::AgentAction {
                offload_ratio: vec![1.0; config.k_tasks],
                alloc_hz: vec![alloc; config.k_tasks],
            })
            .collect(),
    }
}

/// Uniform raw actions, to be projected by the environment.
pub fn policy_random<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Vec<Vec<f64>> {
    (0..config.n_vehicles)
        .map(|_| (0..2 * config.k_tasks).map(|_| rng.gen_range(0.0..=1.0)).collect())
        .collect()
}

/// One agent's locally observed transition.
#[derive(Debug, Clone)]
struct LocalTransition {
    obs: Vec<f64>,
    action: Vec<f64>,
    reward: f64,
    next_obs: Vec<f64>,
}

/// Trains the shared baseline: a single actor and a single local critic serve
/// every agent; per step only the round-robin acting agent picks a fresh
/// action and contributes a transition, the rest replay their previous
/// actions. Training machinery (warmup, noise schedule, updates, soft
/// targets) matches the full trainer.
pub fn shared_baseline_train(env: &mut VecEnv, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let scenario = env.config().clone();
    let n_agents = scenario.n_vehicles;
    let act_dim = 2 * scenario.k_tasks;
    let normalizer = ObsNormalizer::from_config(&scenario);
    let obs_dim = normalizer.obs_dim();
    // The shared critic scores only the acting agent's state and action.
    let critic_input_dim = obs_dim + act_dim;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut nets = AgentNets::new(obs_dim, act_dim, critic_input_dim, cfg, &mut rng);
    let mut buffer: ReplayBuffer<LocalTransition> = ReplayBuffer::new(cfg.buffer_capacity);
    let total_steps = cfg.episodes * cfg.steps_per_episode;
    let mut history = Vec::with_capacity(cfg.episodes);
    let mut global_step = 0usize;
    let mut reward_center = crate::marl::RewardCenter::default();

    for episode in 0..cfg.episodes {
        let obs = env.reset()?;
        let mut obs_enc: Vec<Vec<f64>> = obs.iter().map(AgentObservation::encode).collect();
        // Every agent picks an initial action; afterwards only the acting
        // agent refreshes.
        let mut current_actions: Vec<Vec<f64>> = (0..n_agents)
            .map(|i| {
                let mode = if global_step < cfg.warmup_steps {
                    ActMode::Uniform
                } else {
                    ActMode::Explore {
                        noise_std: exploration_noise_std(cfg, global_step, total_steps),
                    }
                };
                act(&nets.actor, &normalizer.normalize(&obs_enc[i]), mode, &mut rng)
            })
            .collect();
        let mut acc = SlotAccumulator::new(n_agents);
        let mut loss_sum = 0.0;
        let mut obj_sum = 0.0;
        let mut update_count = 0u64;

        for step in 0..cfg.steps_per_episode {
            let acting = step % n_agents;
            if step > 0 {
                let mode = if global_step < cfg.warmup_steps {
                    ActMode::Uniform
                } else {
                    ActMode::Explore {
                        noise_std: exploration_noise_std(cfg, global_step, total_steps),
                    }
                };
                current_actions[acting] = act(
                    &nets.actor,
                    &normalizer.normalize(&obs_enc[acting]),
                    mode,
                    &mut rng,
                );
            }
            let action = env.project_action(&current_actions)?;
            let (next_obs, rewards, outcome) = env.step(&action)?;
            let next_enc: Vec<Vec<f64>> = next_obs.iter().map(AgentObservation::encode).collect();
            acc.record(&rewards, &outcome);
            reward_center.record(&rewards);
            buffer.push(LocalTransition {
                obs: obs_enc[acting].clone(),
                action: current_actions[acting].clone(),
                reward: rewards[acting],
                next_obs: next_enc[acting].clone(),
            });
            obs_enc = next_enc;

            if global_step >= cfg.warmup_steps && buffer.len() >= cfg.batch_size {
                let reward_offset = if cfg.center_rewards {
                    reward_center.mean()
                } else {
                    0.0
                };
                let batch = buffer
                    .sample(cfg.batch_size, &mut rng)
                    .expect("buffer holds at least one batch");
                let m = batch.len();
                let mut states = Array2::zeros((m, obs_dim));
                let mut next_states = Array2::zeros((m, obs_dim));
                let mut actions = Array2::zeros((m, act_dim));
                let mut rewards_arr = Array1::zeros(m);
                for (i, t) in batch.iter().enumerate() {
                    normalizer
                        .normalize_into(&t.obs, states.row_mut(i).as_slice_mut().unwrap());
                    normalizer.normalize_into(
                        &t.next_obs,
                        next_states.row_mut(i).as_slice_mut().unwrap(),
                    );
                    for (j, v) in t.action.iter().enumerate() {
                        actions[[i, j]] = *v;
                    }
                    rewards_arr[i] = t.reward - reward_offset;
                }
                let targets = td_targets(
                    &rewards_arr,
                    &next_states,
                    &[&nets.target_actor],
                    obs_dim,
                    &nets.target_critic,
                    scenario.discount,
                )?;
                let mut input = Array2::zeros((m, critic_input_dim));
                input.slice_mut(s![.., ..obs_dim]).assign(&states);
                input.slice_mut(s![.., obs_dim..]).assign(&actions);
                let loss = critic_update(
                    &mut nets.critic,
                    &input,
                    &targets,
                    cfg.critic_lr,
                    cfg.grad_clip_norm,
                )
                .map_err(|e| shared_context(e, episode, step))?;

                let (objective, grads) = match cfg.policy_variant {
                    PolicyVariant::StochasticGaussian => {
                        let q = critic_values(&nets.critic, &input)?;
                        let weights = if cfg.normalize_advantages {
                            crate::marl::standardize(&q)
                        } else {
                            q
                        };
                        actor_gradient_stochastic(
                            &nets.actor,
                            &states,
                            &actions,
                            &weights,
                            cfg.policy_std,
                            true,
                        )
                    }
                    PolicyVariant::Deterministic => actor_gradient_deterministic(
                        &nets.actor,
                        &nets.critic,
                        &states,
                        &input,
                        obs_dim,
                    )?,
                };
                actor_apply_update(&mut nets.actor, grads, cfg.actor_lr, cfg.grad_clip_norm)
                    .map_err(|e| shared_context(e, episode, step))?;

                soft_update(&mut nets.target_critic, &nets.critic, cfg.soft_update_rate)?;
                soft_update(&mut nets.target_actor, &nets.actor, cfg.soft_update_rate)?;

                loss_sum += loss;
                obj_sum += objective;
                update_count += 1;
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
        agents: vec![nets],
        history,
        trainer_rng_word_pos: rng.get_word_pos(),
        env_rng_word_pos: env.rng_word_pos(),
    })
}

fn shared_context(e: Error, episode: usize, step: usize) -> Error {
    match e {
        Error::NonFinite(what) => Error::NonFinite(format!(
            "{what} (shared baseline, episode {episode}, step {step})"
        )),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::marl::run_policy;

    fn tiny_scenario() -> ScenarioConfig {
        ScenarioConfig {
            n_vehicles: 2,
            k_tasks: 1,
            seed: 11,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn all_local_matches_reference_delay() {
        let mut cfg = ScenarioConfig::default();
        cfg.n_vehicles = 2;
        cfg.task_size_range_bytes = [100.0, 100.0]; // pin d for the closed form
        let mut env = VecEnv::new(cfg.clone()).unwrap();
        env.reset().unwrap();
        let action = policy_all_local(&cfg);
        let (_, _, outcome) = env.step(&action).unwrap();
        for v in &outcome.vehicles {
            assert_relative_eq!(v.total_delay_s, 5.0e-3, max_relative = 1e-12);
        }
    }

    #[test]
    fn equal_split_share() {
        let cfg = ScenarioConfig::default(); // N=4, K=3
        let action = policy_full_offload_equal_split(&cfg);
        for a in &action.per_agent {
            for f in &a.alloc_hz {
                assert_relative_eq!(*f, 100e9 / 12.0, max_relative = 1e-12);
            }
            assert!(a.offload_ratio.iter().all(|w| *w == 1.0));
        }
    }

    #[test]
    fn random_policy_reproducible() {
        let cfg = ScenarioConfig::default();
        let a = policy_random(&cfg, &mut ChaCha8Rng::seed_from_u64(4));
        let b = policy_random(&cfg, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|v| v.len() == 6));
    }

    #[test]
    fn projected_baselines_satisfy_bounds() {
        let cfg = ScenarioConfig::default();
        let mut env = VecEnv::new(cfg.clone()).unwrap();
        env.reset().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let raw = policy_random(&cfg, &mut rng);
        let action = env.project_action(&raw).unwrap();
        for a in &action.per_agent {
            assert!(a.offload_ratio.iter().all(|w| (0.0..=1.0).contains(w)));
            assert!(a
                .alloc_hz
                .iter()
                .all(|f| *f >= cfg.f_alloc_min_hz && *f <= cfg.f_alloc_max_hz));
        }
    }

    #[test]
    fn shared_baseline_smoke_and_determinism() {
        let scenario = tiny_scenario();
        let cfg = TrainConfig {
            episodes: 1,
            steps_per_episode: 4,
            batch_size: 1,
            buffer_capacity: 16,
            warmup_steps: 0,
            actor_hidden: vec![8],
            critic_hidden: vec![8],
            seed: 2,
            ..TrainConfig::default()
        };
        let mut env1 = VecEnv::new(scenario.clone()).unwrap();
        let out1 = shared_baseline_train(&mut env1, &cfg).unwrap();
        assert_eq!(out1.history.len(), 1);
        assert_eq!(out1.agents.len(), 1);

        let mut env2 = VecEnv::new(scenario).unwrap();
        let out2 = shared_baseline_train(&mut env2, &cfg).unwrap();
        assert_eq!(out1.history, out2.history);
    }

    #[test]
    fn run_policy_collects_stats() {
        let scenario = tiny_scenario();
        let mut env = VecEnv::new(scenario.clone()).unwrap();
        let action_dim = 2 * scenario.k_tasks;
        let mut slots_seen = 0;
        let stats = run_policy(
            &mut env,
            2,
            5,
            |_, _| vec![0.0; action_dim],
            |_, _, _, _| slots_seen += 1,
        )
        .unwrap();
        assert_eq!(slots_seen, 10);
        assert_eq!(stats.mean_reward.len(), 2);
        assert!(stats.mean_total_delay_s > 0.0);
        assert!(stats.mean_resource_ghz > 0.0);
    }
}
