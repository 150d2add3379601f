//! Scenario configuration and vehicle mobility.
//!
//! All quantities are stored in base SI units: Hz, watts, bytes, seconds,
//! meters. Every random draw flows from one seeded generator per run, so two
//! runs with equal seed and config produce bit-identical trajectories.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::FadingMode;
use crate::error::{Error, Result};

/// Full description of one simulated scenario.
///
/// The single source of truth for physical parameters, fleet geometry, and
/// seeding. `default()` gives the reference parameter set; everything else is
/// loaded from a config file or overridden on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Number of vehicles (one agent each).
    pub n_vehicles: usize,
    /// Tasks generated per vehicle per slot.
    pub k_tasks: usize,
    /// Uplink bandwidth per orthogonal sub-band, Hz.
    pub bandwidth_hz: f64,
    /// Vehicle transmit power, watts.
    pub tx_power_w: f64,
    /// Additive noise power, watts.
    pub noise_power_w: f64,
    /// Small-scale fading correlation coefficient, in [0, 1].
    pub fading_corr: f64,
    /// Path loss exponent used by the literal fading recursion.
    pub path_loss_exp: f64,
    /// Small-scale fading update rule.
    pub fading_mode: FadingMode,
    /// Task size range [min, max], bytes.
    pub task_size_range_bytes: [f64; 2],
    /// CPU cycles required per byte of task data.
    pub cycles_per_byte: f64,
    /// Per-task completion deadline, seconds.
    pub deadline_s: f64,
    /// Edge server capacity, Hz.
    pub f_server_hz: f64,
    /// Per-vehicle local CPU speed, Hz.
    pub f_local_hz: f64,
    /// Digital-twin estimation error range [min, max], Hz.
    pub dt_error_range_hz: [f64; 2],
    /// When set, every estimation error is pinned to this constant instead of
    /// being drawn from `dt_error_range_hz` (fixed-error evaluation runs).
    pub dt_error_fixed_hz: Option<f64>,
    /// Reward weight on deadline slack.
    pub reward_beta: f64,
    /// Reward weight on server resource usage.
    pub reward_eta: f64,
    /// Discount factor, in (0, 1).
    pub discount: f64,
    /// Road segment length, meters.
    pub road_length_m: f64,
    /// Base station position, meters (perpendicular offset from the road axis).
    pub bs_position_m: [f64; 2],
    /// Vehicle speed range [min, max], m/s.
    pub vehicle_speed_range_mps: [f64; 2],
    /// Slot duration, seconds.
    pub slot_duration_s: f64,
    /// Lower bound of the per-task edge allocation, Hz.
    pub f_alloc_min_hz: f64,
    /// Upper bound of the per-task edge allocation, Hz.
    pub f_alloc_max_hz: f64,
    /// When true, allocations are rescaled at projection time so the aggregate
    /// server load never exceeds `f_server_hz`; when false, overflow is only
    /// reported.
    pub hard_cap: bool,
    /// Master seed for scenario randomness.
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_vehicles: 4,
            k_tasks: 3,
            bandwidth_hz: 5.0e7,
            tx_power_w: 0.2,
            noise_power_w: 1.0e-14,
            fading_corr: 0.2,
            path_loss_exp: 2.0,
            fading_mode: FadingMode::GaussMarkov,
            task_size_range_bytes: [100.0, 150.0],
            cycles_per_byte: 0.25e6,
            deadline_s: 0.2,
            f_server_hz: 1.0e11,
            f_local_hz: 5.0e9,
            dt_error_range_hz: [-0.5e9, 0.5e9],
            dt_error_fixed_hz: None,
            reward_beta: 10.0,
            reward_eta: 0.5,
            discount: 0.95,
            road_length_m: 1000.0,
            bs_position_m: [500.0, 20.0],
            vehicle_speed_range_mps: [10.0, 30.0],
            slot_duration_s: 0.2,
            f_alloc_min_hz: 1.0e9,
            f_alloc_max_hz: 2.0e10,
            hard_cap: true,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    /// Checks every invariant; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        fn positive(field: &'static str, v: f64) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig {
                    field,
                    reason: format!("must be strictly positive and finite, got {v}"),
                })
            }
        }
        fn ordered(field: &'static str, r: [f64; 2]) -> Result<()> {
            if r[0] <= r[1] && r[0].is_finite() && r[1].is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig {
                    field,
                    reason: format!("range must satisfy min <= max, got [{}, {}]", r[0], r[1]),
                })
            }
        }

        if self.n_vehicles == 0 {
            return Err(Error::InvalidConfig {
                field: "n_vehicles",
                reason: "must be at least 1".into(),
            });
        }
        if self.k_tasks == 0 {
            return Err(Error::InvalidConfig {
                field: "k_tasks",
                reason: "must be at least 1".into(),
            });
        }
        positive("bandwidth_hz", self.bandwidth_hz)?;
        positive("tx_power_w", self.tx_power_w)?;
        positive("noise_power_w", self.noise_power_w)?;
        if !(0.0..=1.0).contains(&self.fading_corr) {
            return Err(Error::InvalidConfig {
                field: "fading_corr",
                reason: format!("must lie in [0, 1], got {}", self.fading_corr),
            });
        }
        positive("path_loss_exp", self.path_loss_exp)?;
        ordered("task_size_range_bytes", self.task_size_range_bytes)?;
        positive("task_size_range_bytes", self.task_size_range_bytes[0])?;
        positive("cycles_per_byte", self.cycles_per_byte)?;
        positive("deadline_s", self.deadline_s)?;
        positive("f_server_hz", self.f_server_hz)?;
        positive("f_local_hz", self.f_local_hz)?;
        ordered("dt_error_range_hz", self.dt_error_range_hz)?;
        positive("reward_beta", self.reward_beta)?;
        positive("reward_eta", self.reward_eta)?;
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::InvalidConfig {
                field: "discount",
                reason: format!("must lie in (0, 1), got {}", self.discount),
            });
        }
        positive("road_length_m", self.road_length_m)?;
        ordered("vehicle_speed_range_mps", self.vehicle_speed_range_mps)?;
        positive("vehicle_speed_range_mps", self.vehicle_speed_range_mps[0])?;
        positive("slot_duration_s", self.slot_duration_s)?;
        positive("f_alloc_min_hz", self.f_alloc_min_hz)?;
        positive("f_alloc_max_hz", self.f_alloc_max_hz)?;
        if self.f_alloc_min_hz > self.f_alloc_max_hz {
            return Err(Error::InvalidConfig {
                field: "f_alloc_min_hz",
                reason: "must not exceed f_alloc_max_hz".into(),
            });
        }
        // Keeps the estimated-time denominator away from zero for every
        // admissible allocation and error draw.
        if self.f_alloc_min_hz + self.dt_error_range_hz[0] <= 0.0 {
            return Err(Error::InvalidConfig {
                field: "f_alloc_min_hz",
                reason: format!(
                    "f_alloc_min_hz + dt_error_range_hz.min must be positive, got {}",
                    self.f_alloc_min_hz + self.dt_error_range_hz[0]
                ),
            });
        }
        if let Some(fixed) = self.dt_error_fixed_hz {
            if self.f_alloc_min_hz + fixed <= 0.0 {
                return Err(Error::InvalidConfig {
                    field: "dt_error_fixed_hz",
                    reason: format!(
                        "f_alloc_min_hz + dt_error_fixed_hz must be positive, got {}",
                        self.f_alloc_min_hz + fixed
                    ),
                });
            }
        }
        // With the hard cap on, the proportional rescale must be able to reach
        // the cap without pushing any allocation below its lower bound.
        let idle_load = self.n_vehicles as f64
            * self.k_tasks as f64
            * (self.f_alloc_min_hz + self.dt_error_range_hz[1].max(0.0));
        if self.hard_cap && idle_load > self.f_server_hz {
            return Err(Error::InvalidConfig {
                field: "f_server_hz",
                reason: format!(
                    "minimum aggregate load {idle_load} Hz exceeds server capacity; \
                     lower n_vehicles, k_tasks, or f_alloc_min_hz"
                ),
            });
        }
        Ok(())
    }

    /// Maximum number of CPU cycles a single task can require.
    pub fn max_task_cycles(&self) -> f64 {
        self.task_size_range_bytes[1] * self.cycles_per_byte
    }
}

/// One vehicle on the road segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Position, meters. Vehicles travel along the x axis; y stays 0.
    pub position_m: [f64; 2],
    /// Speed magnitude, m/s.
    pub speed_mps: f64,
    /// Direction of travel along the road axis, +1 or -1.
    pub direction: f64,
}

impl VehicleState {
    /// Euclidean distance to a point, meters.
    pub fn distance_to_m(&self, point_m: [f64; 2]) -> f64 {
        let dx = self.position_m[0] - point_m[0];
        let dy = self.position_m[1] - point_m[1];
        (dx * dx + dy * dy).sqrt()
    }
}

/// Draws the initial fleet: positions uniform on the road, speeds uniform in
/// the configured range, directions equiprobable.
pub fn spawn_fleet<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Vec<VehicleState> {
    let [v_min, v_max] = config.vehicle_speed_range_mps;
    (0..config.n_vehicles)
        .map(|_| {
            let x = rng.gen_range(0.0..=config.road_length_m);
            let speed = if v_min == v_max {
                v_min
            } else {
                rng.gen_range(v_min..=v_max)
            };
            let direction = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            VehicleState {
                position_m: [x, 0.0],
                speed_mps: speed,
                direction,
            }
        })
        .collect()
}

/// Advances every vehicle by one slot, reflecting at the road ends.
pub fn advance_vehicles(
    states: &[VehicleState],
    slot_duration_s: f64,
    road_length_m: f64,
) -> Vec<VehicleState> {
    states
        .iter()
        .map(|v| {
            let mut x = v.position_m[0] + v.direction * v.speed_mps * slot_duration_s;
            let mut dir = v.direction;
            loop {
                if x < 0.0 {
                    x = -x;
                    dir = -dir;
                } else if x > road_length_m {
                    x = 2.0 * road_length_m - x;
                    dir = -dir;
                } else {
                    break;
                }
            }
            VehicleState {
                position_m: [x, v.position_m[1]],
                speed_mps: v.speed_mps,
                direction: dir,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn defaults_match_reference_parameters() {
        let c = ScenarioConfig::default();
        assert_eq!(c.bandwidth_hz, 5.0e7);
        assert_eq!(c.tx_power_w, 0.2);
        assert_eq!(c.noise_power_w, 1.0e-14);
        assert_eq!(c.fading_corr, 0.2);
        assert_eq!(c.path_loss_exp, 2.0);
        assert_eq!(c.k_tasks, 3);
        assert_eq!(c.task_size_range_bytes, [100.0, 150.0]);
        assert_eq!(c.cycles_per_byte, 0.25e6);
        assert_eq!(c.deadline_s, 0.2);
        assert_eq!(c.f_server_hz, 1.0e11);
        assert_eq!(c.f_local_hz, 5.0e9);
        assert_eq!(c.dt_error_range_hz, [-0.5e9, 0.5e9]);
        assert_eq!(c.reward_eta, 0.5);
        assert_eq!(c.reward_beta, 10.0);
        assert_eq!(c.discount, 0.95);
        c.validate().unwrap();
    }

    #[test]
    fn validate_rejects_bad_fields() {
        let mut c = ScenarioConfig::default();
        c.discount = 1.0;
        assert!(matches!(
            c.validate(),
            Err(Error::InvalidConfig { field: "discount", .. })
        ));

        let mut c = ScenarioConfig::default();
        c.fading_corr = 1.5;
        assert!(c.validate().is_err());

        let mut c = ScenarioConfig::default();
        c.dt_error_range_hz = [-2.0e9, 0.5e9]; // would allow a vanishing denominator
        assert!(c.validate().is_err());

        let mut c = ScenarioConfig::default();
        c.task_size_range_bytes = [150.0, 100.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn spawn_fleet_empty_and_deterministic() {
        let mut c = ScenarioConfig::default();
        c.n_vehicles = 0;
        assert!(spawn_fleet(&c, &mut ChaCha8Rng::seed_from_u64(3)).is_empty());

        c.n_vehicles = 4;
        let a = spawn_fleet(&c, &mut ChaCha8Rng::seed_from_u64(3));
        let b = spawn_fleet(&c, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        for v in &a {
            assert!(v.position_m[0] >= 0.0 && v.position_m[0] <= c.road_length_m);
            assert!(v.speed_mps >= 10.0 && v.speed_mps <= 30.0);
            assert!(v.direction == 1.0 || v.direction == -1.0);
        }
    }

    #[test]
    fn advance_shifts_by_speed_times_slot() {
        let v = VehicleState {
            position_m: [100.0, 0.0],
            speed_mps: 20.0,
            direction: 1.0,
        };
        let out = advance_vehicles(&[v], 0.2, 1000.0);
        assert_eq!(out[0].position_m[0], 104.0);
        assert_eq!(out[0].speed_mps, 20.0);

        let unchanged = advance_vehicles(&[v], 0.0, 1000.0);
        assert_eq!(unchanged[0].position_m[0], 100.0);
    }

    #[test]
    fn advance_reflects_at_boundaries() {
        let v = VehicleState {
            position_m: [999.0, 0.0],
            speed_mps: 20.0,
            direction: 1.0,
        };
        let out = advance_vehicles(&[v], 0.2, 1000.0);
        assert!(out[0].position_m[0] >= 0.0 && out[0].position_m[0] <= 1000.0);
        assert_eq!(out[0].position_m[0], 997.0);
        assert_eq!(out[0].direction, -1.0);

        let v = VehicleState {
            position_m: [1.0, 0.0],
            speed_mps: 20.0,
            direction: -1.0,
        };
        let out = advance_vehicles(&[v], 0.2, 1000.0);
        assert_eq!(out[0].position_m[0], 3.0);
        assert_eq!(out[0].direction, 1.0);
    }
}
