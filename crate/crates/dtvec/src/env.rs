//! The multi-agent decision environment.
//!
//! One step spans one slot: every vehicle generates `k_tasks` tasks, the
//! twins pick offloading ratios and edge allocations, delays and rewards are
//! evaluated, then vehicles move, fading evolves, and fresh tasks and
//! estimation errors are drawn for the next slot. Episodes never terminate
//! early; deadline misses are penalized through the reward and counted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelState};
use crate::delay::{self, DelayBreakdown, OffloadDecision, Task};
use crate::error::{Error, Result};
use crate::scenario::{advance_vehicles, spawn_fleet, ScenarioConfig, VehicleState};

/// When a task's edge branch is infeasible (offload with zero rate), its
/// execution delay is infinite; the reward evaluates it as this many
/// deadlines so rewards stay finite.
const INFEASIBLE_DEADLINE_FACTOR: f64 = 10.0;

/// What one agent observes at the start of a slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentObservation {
    /// The vehicle's tasks for this slot.
    pub tasks: Vec<Task>,
    /// Per-task estimation error of the twin's allocation, Hz.
    pub dt_error_hz: Vec<f64>,
    /// Vehicle position, meters.
    pub position_m: [f64; 2],
    /// Current channel gain to the base station, linear.
    pub gain: f64,
}

impl AgentObservation {
    /// Length of the flat encoding for `k` tasks: `3k` task fields, `k`
    /// errors, 2 position coordinates, 1 gain.
    pub fn encoded_len(k: usize) -> usize {
        4 * k + 3
    }

    /// Flat numeric encoding. Layout, in order: for each task
    /// `(size_bytes, cycles_per_byte, deadline_s)`, then the `k` estimation
    /// errors, then `(x_m, y_m)`, then the gain.
    pub fn encode(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::encoded_len(self.tasks.len()));
        for t in &self.tasks {
            out.push(t.size_bytes);
            out.push(t.cycles_per_byte);
            out.push(t.deadline_s);
        }
        out.extend_from_slice(&self.dt_error_hz);
        out.push(self.position_m[0]);
        out.push(self.position_m[1]);
        out.push(self.gain);
        out
    }

    /// Inverse of [`encode`](Self::encode).
    pub fn decode(buf: &[f64], k: usize) -> Result<Self> {
        if buf.len() != Self::encoded_len(k) {
            return Err(Error::LayoutMismatch {
                expected: Self::encoded_len(k),
                got: buf.len(),
            });
        }
        let tasks = (0..k)
            .map(|i| Task {
                size_bytes: buf[3 * i],
                cycles_per_byte: buf[3 * i + 1],
                deadline_s: buf[3 * i + 2],
            })
            .collect();
        let dt_error_hz = buf[3 * k..4 * k].to_vec();
        Ok(Self {
            tasks,
            dt_error_hz,
            position_m: [buf[4 * k], buf[4 * k + 1]],
            gain: buf[4 * k + 2],
        })
    }
}

/// Projected decisions for one vehicle: `k_tasks` ratios and allocations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAction {
    pub offload_ratio: Vec<f64>,
    pub alloc_hz: Vec<f64>,
}

/// Projected decisions for the whole fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointAction {
    pub per_agent: Vec<AgentAction>,
}

impl JointAction {
    /// Aggregate allocated capacity across all vehicles and tasks, Hz.
    pub fn total_alloc_hz(&self) -> f64 {
        self.per_agent
            .iter()
            .map(|a| a.alloc_hz.iter().sum::<f64>())
            .sum()
    }
}

/// Everything that happened to one vehicle in one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSlotOutcome {
    pub breakdowns: Vec<DelayBreakdown>,
    /// Completion time of the slowest task, seconds.
    pub total_delay_s: f64,
    pub reward: f64,
    /// Tasks whose execution delay exceeded their deadline.
    pub deadline_violations: usize,
    /// Uplink rate used this slot, bit/s.
    pub rate_bps: f64,
    /// Channel gain used this slot, linear.
    pub gain: f64,
    /// Estimation errors in force this slot, Hz.
    pub dt_errors_hz: Vec<f64>,
    /// Executed (projected) allocations, Hz.
    pub alloc_hz: Vec<f64>,
    /// Executed offloading ratios.
    pub offload_ratios: Vec<f64>,
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotOutcome {
    pub vehicles: Vec<VehicleSlotOutcome>,
    /// How far the aggregate load `sum(f + df)` exceeded server capacity, Hz.
    /// Zero whenever the capacity constraint held.
    pub capacity_overflow_hz: f64,
    /// Number of tasks whose effective allocation hit the singularity clamp.
    pub alloc_clamp_events: usize,
}

/// One stored transition: everything the trainers need to replay a slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    /// Encoded observation per agent.
    pub obs: Vec<Vec<f64>>,
    /// Raw (pre-projection) action per agent, each in `[0,1]^{2k}`.
    pub actions: Vec<Vec<f64>>,
    /// Reward per agent.
    pub rewards: Vec<f64>,
    /// Encoded next observation per agent.
    pub next_obs: Vec<Vec<f64>>,
}

/// Constraint status of one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// Aggregate capacity overflow, Hz (zero when satisfied).
    pub capacity_overflow_hz: f64,
    /// Per-vehicle count of deadline violations.
    pub deadline_violations: Vec<usize>,
    /// Transmit power within its cap (fixed per config, always true).
    pub power_ok: bool,
    /// Every ratio within [0, 1] (guaranteed post-projection).
    pub ratios_ok: bool,
}

impl ConstraintReport {
    pub fn total_deadline_violations(&self) -> usize {
        self.deadline_violations.iter().sum()
    }
}

/// The slot-level simulator for the whole fleet.
pub struct VecEnv {
    config: ScenarioConfig,
    rng: ChaCha8Rng,
    fleet: Vec<VehicleState>,
    channel: ChannelState,
    tasks: Vec<Vec<Task>>,
    dt_errors_hz: Vec<Vec<f64>>,
    initialized: bool,
}

impl VecEnv {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            config,
            rng,
            fleet: Vec::new(),
            channel: ChannelState {
                small_scale: Vec::new(),
                large_scale: Vec::new(),
                gain: Vec::new(),
            },
            tasks: Vec::new(),
            dt_errors_hz: Vec::new(),
            initialized: false,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    /// Position of the environment RNG within its stream, for checkpoints.
    pub fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn set_rng_word_pos(&mut self, pos: u128) {
        self.rng.set_word_pos(pos);
    }

    /// Starts a fresh episode: new fleet, fresh channel, first batch of tasks
    /// and estimation errors. The RNG stream continues across resets, so
    /// consecutive episodes differ while the whole run stays reproducible.
    pub fn reset(&mut self) -> Result<Vec<AgentObservation>> {
        self.fleet = spawn_fleet(&self.config, &mut self.rng);
        self.channel = ChannelState::init(&self.fleet, self.config.bs_position_m, &mut self.rng)?;
        self.draw_tasks();
        self.draw_dt_errors();
        self.initialized = true;
        Ok(self.observations())
    }

    fn draw_tasks(&mut self) {
        let [d_min, d_max] = self.config.task_size_range_bytes;
        let c = self.config.cycles_per_byte;
        let t = self.config.deadline_s;
        self.tasks = (0..self.config.n_vehicles)
            .map(|_| {
                (0..self.config.k_tasks)
                    .map(|_| Task {
                        size_bytes: if d_min == d_max {
                            d_min
                        } else {
                            self.rng.gen_range(d_min..=d_max)
                        },
                        cycles_per_byte: c,
                        deadline_s: t,
                    })
                    .collect()
            })
            .collect();
    }

    fn draw_dt_errors(&mut self) {
        let [e_min, e_max] = self.config.dt_error_range_hz;
        self.dt_errors_hz = (0..self.config.n_vehicles)
            .map(|_| {
                (0..self.config.k_tasks)
                    .map(|_| match self.config.dt_error_fixed_hz {
                        Some(fixed) => fixed,
                        None if e_min == e_max => e_min,
                        None => self.rng.gen_range(e_min..=e_max),
                    })
                    .collect()
            })
            .collect();
    }

    /// Current observations without advancing the environment.
    pub fn observations(&self) -> Vec<AgentObservation> {
        (0..self.config.n_vehicles)
            .map(|i| AgentObservation {
                tasks: self.tasks[i].clone(),
                dt_error_hz: self.dt_errors_hz[i].clone(),
                position_m: self.fleet[i].position_m,
                gain: self.channel.gain[i],
            })
            .collect()
    }

    /// Maps raw actor outputs in `[0,1]^{2k}` per agent onto the feasible
    /// decision set: the first `k` components become offloading ratios, the
    /// rest interpolate the allocation bounds. With the hard cap enabled,
    /// allocations are rescaled proportionally so the aggregate load meets
    /// server capacity with equality whenever it would otherwise exceed it.
    pub fn project_action(&self, raw: &[Vec<f64>]) -> Result<JointAction> {
        let n = self.config.n_vehicles;
        let k = self.config.k_tasks;
        if raw.len() != n {
            return Err(Error::LayoutMismatch {
                expected: n,
                got: raw.len(),
            });
        }
        for a in raw {
            if a.len() != 2 * k {
                return Err(Error::LayoutMismatch {
                    expected: 2 * k,
                    got: a.len(),
                });
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain {
                    op: "project_action",
                    reason: "raw action components must be finite".into(),
                });
            }
        }
        let f_min = self.config.f_alloc_min_hz;
        let f_max = self.config.f_alloc_max_hz;
        let mut per_agent: Vec<AgentAction> = raw
            .iter()
            .map(|a| AgentAction {
                offload_ratio: a[..k].iter().map(|v| v.clamp(0.0, 1.0)).collect(),
                alloc_hz: a[k..]
                    .iter()
                    .map(|v| f_min + v.clamp(0.0, 1.0) * (f_max - f_min))
                    .collect(),
            })
            .collect();

        if self.config.hard_cap {
            let total_err: f64 = self.dt_errors_hz.iter().flatten().sum();
            let target = self.config.f_server_hz - total_err;
            let total_alloc: f64 = per_agent
                .iter()
                .map(|a| a.alloc_hz.iter().sum::<f64>())
                .sum();
            if total_alloc > target {
                rescale_to_capacity(&mut per_agent, target, f_min);
            }
        }
        Ok(JointAction { per_agent })
    }

    /// Executes one slot with an already-projected action. Returns the next
    /// observations, per-agent rewards, and the full slot outcome.
    pub fn step(
        &mut self,
        action: &JointAction,
    ) -> Result<(Vec<AgentObservation>, Vec<f64>, SlotOutcome)> {
        if !self.initialized {
            return Err(Error::Domain {
                op: "step",
                reason: "environment must be reset before stepping".into(),
            });
        }
        let n = self.config.n_vehicles;
        let k = self.config.k_tasks;
        if action.per_agent.len() != n {
            return Err(Error::LayoutMismatch {
                expected: n,
                got: action.per_agent.len(),
            });
        }

        let mut vehicles = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        let mut clamp_events = 0usize;
        for i in 0..n {
            let agent = &action.per_agent[i];
            if agent.offload_ratio.len() != k || agent.alloc_hz.len() != k {
                return Err(Error::LayoutMismatch {
                    expected: k,
                    got: agent.offload_ratio.len().min(agent.alloc_hz.len()),
                });
            }
            let gain = self.channel.gain[i];
            let rate_bps = channel::v2i_rate(
                self.config.bandwidth_hz,
                self.config.tx_power_w,
                gain,
                self.config.noise_power_w,
            );
            let mut breakdowns = Vec::with_capacity(k);
            for j in 0..k {
                let decision = OffloadDecision {
                    offload_ratio: agent.offload_ratio[j],
                    dt_alloc_hz: agent.alloc_hz[j],
                };
                let (b, clamped) = delay::task_breakdown(
                    &self.tasks[i][j],
                    &decision,
                    rate_bps,
                    self.dt_errors_hz[i][j],
                    self.config.f_local_hz,
                );
                if clamped {
                    clamp_events += 1;
                }
                breakdowns.push(b);
            }
            let total_delay_s = delay::vehicle_total_delay(&breakdowns)?;
            let deadline_violations = breakdowns
                .iter()
                .zip(&self.tasks[i])
                .filter(|(b, t)| b.t_exe_s > t.deadline_s)
                .count();
            let reward = vehicle_reward(
                &breakdowns,
                &self.tasks[i],
                &self.dt_errors_hz[i],
                &agent.alloc_hz,
                &self.config,
            );
            rewards.push(reward);
            vehicles.push(VehicleSlotOutcome {
                breakdowns,
                total_delay_s,
                reward,
                deadline_violations,
                rate_bps,
                gain,
                dt_errors_hz: self.dt_errors_hz[i].clone(),
                alloc_hz: agent.alloc_hz.clone(),
                offload_ratios: agent.offload_ratio.clone(),
            });
        }

        let total_err: f64 = self.dt_errors_hz.iter().flatten().sum();
        let capacity_overflow_hz =
            (action.total_alloc_hz() + total_err - self.config.f_server_hz).max(0.0);

        // Slot transition: mobility, fading, fresh tasks and errors.
        self.fleet = advance_vehicles(
            &self.fleet,
            self.config.slot_duration_s,
            self.config.road_length_m,
        );
        self.channel = channel::update_small_scale(
            &self.channel,
            &self.fleet,
            self.config.bs_position_m,
            self.config.fading_corr,
            self.config.path_loss_exp,
            self.config.fading_mode,
            &mut self.rng,
        )?;
        self.draw_tasks();
        self.draw_dt_errors();

        Ok((
            self.observations(),
            rewards,
            SlotOutcome {
                vehicles,
                capacity_overflow_hz,
                alloc_clamp_events: clamp_events,
            },
        ))
    }

    /// Constraint status for an executed slot.
    pub fn check_constraints(action: &JointAction, outcome: &SlotOutcome) -> ConstraintReport {
        ConstraintReport {
            capacity_overflow_hz: outcome.capacity_overflow_hz,
            deadline_violations: outcome
                .vehicles
                .iter()
                .map(|v| v.deadline_violations)
                .collect(),
            power_ok: true,
            ratios_ok: action
                .per_agent
                .iter()
                .all(|a| a.offload_ratio.iter().all(|w| (0.0..=1.0).contains(w))),
        }
    }
}

/// Scales allocations proportionally so their sum meets `target` with
/// equality while respecting the lower bound: tasks that would fall below
/// `f_min` are pinned there and the rest are rescaled to fill what remains.
/// Config validation guarantees the bound-feasible total never exceeds the
/// target, so this terminates with the capacity constraint satisfied.
fn rescale_to_capacity(per_agent: &mut [AgentAction], target: f64, f_min: f64) {
    let mut pinned: Vec<Vec<bool>> = per_agent
        .iter()
        .map(|a| vec![false; a.alloc_hz.len()])
        .collect();
    loop {
        let mut pinned_sum = 0.0;
        let mut free_sum = 0.0;
        for (a, pins) in per_agent.iter().zip(&pinned) {
            for (f, &p) in a.alloc_hz.iter().zip(pins) {
                if p {
                    pinned_sum += f_min;
                } else {
                    free_sum += *f;
                }
            }
        }
        if free_sum <= 0.0 {
            break;
        }
        let scale = (target - pinned_sum) / free_sum;
        let mut newly_pinned = false;
        for (a, pins) in per_agent.iter().zip(&mut pinned) {
            for (f, p) in a.alloc_hz.iter().zip(pins.iter_mut()) {
                if !*p && *f * scale < f_min {
                    *p = true;
                    newly_pinned = true;
                }
            }
        }
        if !newly_pinned {
            for (a, pins) in per_agent.iter_mut().zip(&pinned) {
                for (f, &p) in a.alloc_hz.iter_mut().zip(pins) {
                    *f = if p { f_min } else { *f * scale };
                }
            }
            break;
        }
    }
}

/// Per-vehicle slot reward: deadline slack minus server usage,
/// `sum_k [ beta*(T_k - t_exe_k)/K - eta*(df_k + f_k - F_server)/N ]`,
/// with capacities expressed in GHz and delays in seconds. An infinite
/// execution delay (infeasible edge branch) is evaluated as ten deadlines.
pub fn vehicle_reward(
    breakdowns: &[DelayBreakdown],
    tasks: &[Task],
    dt_errors_hz: &[f64],
    alloc_hz: &[f64],
    config: &ScenarioConfig,
) -> f64 {
    let k = breakdowns.len() as f64;
    let n = config.n_vehicles as f64;
    let f_server_ghz = config.f_server_hz / 1e9;
    breakdowns
        .iter()
        .zip(tasks)
        .zip(dt_errors_hz.iter().zip(alloc_hz))
        .map(|((b, task), (df, f))| {
            let t_exe = if b.t_exe_s.is_finite() {
                b.t_exe_s
            } else {
                INFEASIBLE_DEADLINE_FACTOR * task.deadline_s
            };
            let slack = config.reward_beta * (task.deadline_s - t_exe) / k;
            let usage = config.reward_eta * ((df + f) / 1e9 - f_server_ghz) / n;
            slack - usage
        })
        .sum()
}

/// Discounted sum of a finite reward sequence: `sum_t gamma^t * r_t`.
pub fn discounted_return(rewards: &[f64], discount: f64) -> f64 {
    rewards
        .iter()
        .rev()
        .fold(0.0, |acc, r| r + discount * acc)
}
