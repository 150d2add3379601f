//! Exact grid-search oracle for the single-slot allocation problem.
//!
//! Enumerates every combination of offloading ratio and edge allocation on a
//! finite grid, rejects points that violate the per-task deadline or the
//! aggregate server capacity, and returns the point minimizing each vehicle's
//! completion delay. Used as a baseline and as ground truth in tests.

use serde::{Deserialize, Serialize};

use crate::delay::{task_breakdown, OffloadDecision, Task};
use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;

/// Default cap on the number of grid points an oracle call may evaluate.
pub const DEFAULT_ENUM_BUDGET: u64 = 10_000_000;

/// Decision context for one vehicle in a single slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P1Vehicle {
    pub tasks: Vec<Task>,
    /// Uplink rate in force this slot, bit/s.
    pub rate_bps: f64,
    /// Per-task estimation error, Hz.
    pub dt_error_hz: Vec<f64>,
}

/// A single-slot problem instance for the whole fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P1Instance {
    pub vehicles: Vec<P1Vehicle>,
    pub f_local_hz: f64,
    pub f_server_hz: f64,
}

impl P1Instance {
    pub fn validate(&self) -> Result<()> {
        if self.vehicles.is_empty() {
            return Err(Error::Domain {
                op: "brute_force_p1",
                reason: "instance has no vehicles".into(),
            });
        }
        if self.f_local_hz <= 0.0 || self.f_server_hz <= 0.0 {
            return Err(Error::Domain {
                op: "brute_force_p1",
                reason: "capacities must be positive".into(),
            });
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            if v.tasks.is_empty() || v.tasks.len() != v.dt_error_hz.len() {
                return Err(Error::Domain {
                    op: "brute_force_p1",
                    reason: format!("vehicle {i}: tasks and errors must be nonempty and congruent"),
                });
            }
        }
        Ok(())
    }
}

/// Discretization of the decision space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Offloading ratio grid, sorted, within [0, 1].
    pub omega: Vec<f64>,
    /// Allocation grid, sorted, Hz.
    pub alloc_hz: Vec<f64>,
}

impl GridSpec {
    /// The shipped default: eleven ratio steps and ten evenly spaced
    /// allocations across the configured bounds.
    pub fn default_for(config: &ScenarioConfig) -> Self {
        let omega = (0..=10).map(|i| i as f64 / 10.0).collect();
        let n = 10usize;
        let lo = config.f_alloc_min_hz;
        let hi = config.f_alloc_max_hz;
        let alloc_hz = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect();
        Self { omega, alloc_hz }
    }

    pub fn validate(&self) -> Result<()> {
        if self.omega.is_empty() || self.alloc_hz.is_empty() {
            return Err(Error::Domain {
                op: "brute_force_p1",
                reason: "grids must be nonempty".into(),
            });
        }
        if !self.omega.windows(2).all(|w| w[0] <= w[1])
            || !self.alloc_hz.windows(2).all(|w| w[0] <= w[1])
        {
            return Err(Error::Domain {
                op: "brute_force_p1",
                reason: "grids must be sorted ascending".into(),
            });
        }
        if self.omega.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Domain {
                op: "brute_force_p1",
                reason: "omega grid must lie in [0, 1]".into(),
            });
        }
        if self.alloc_hz.iter().any(|f| *f <= 0.0) {
            return Err(Error::Domain {
                op: "brute_force_p1",
                reason: "alloc grid must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Optimal decisions and the resulting per-vehicle delays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P1Solution {
    pub decisions: Vec<Vec<OffloadDecision>>,
    pub delays_s: Vec<f64>,
}

/// One vehicle's evaluated grid point.
#[derive(Debug, Clone)]
struct Candidate {
    delay_s: f64,
    alloc_sum_hz: f64,
    omegas: Vec<f64>,
    allocs: Vec<f64>,
}

/// Strict "better than" with deterministic tie-breaking: smaller delay, then
/// smaller aggregate allocation, then lexicographically smaller ratios, then
/// lexicographically smaller allocations.
fn candidate_better(a: &Candidate, b: &Candidate) -> bool {
    if a.delay_s != b.delay_s {
        return a.delay_s < b.delay_s;
    }
    if a.alloc_sum_hz != b.alloc_sum_hz {
        return a.alloc_sum_hz < b.alloc_sum_hz;
    }
    if a.omegas != b.omegas {
        return a.omegas < b.omegas;
    }
    a.allocs < b.allocs
}

/// Evaluates one vehicle's combo; `None` when a deadline is violated.
fn evaluate_combo(
    vehicle: &P1Vehicle,
    f_local_hz: f64,
    omegas: &[f64],
    allocs: &[f64],
) -> Option<Candidate> {
    let mut worst = f64::NEG_INFINITY;
    for (k, task) in vehicle.tasks.iter().enumerate() {
        let decision = OffloadDecision {
            offload_ratio: omegas[k],
            dt_alloc_hz: allocs[k],
        };
        let (b, _) = task_breakdown(
            task,
            &decision,
            vehicle.rate_bps,
            vehicle.dt_error_hz[k],
            f_local_hz,
        );
        if !(b.t_exe_s <= task.deadline_s) {
            return None;
        }
        worst = worst.max(b.t_exe_s);
    }
    Some(Candidate {
        delay_s: worst,
        alloc_sum_hz: allocs.iter().sum(),
        omegas: omegas.to_vec(),
        allocs: allocs.to_vec(),
    })
}

/// All deadline-feasible grid points for one vehicle.
fn vehicle_candidates(
    vehicle: &P1Vehicle,
    f_local_hz: f64,
    grids: &GridSpec,
) -> Vec<Candidate> {
    let k = vehicle.tasks.len();
    let per_task = grids.omega.len() * grids.alloc_hz.len();
    let mut digits = vec![0usize; k];
    let mut omegas = vec![0.0; k];
    let mut allocs = vec![0.0; k];
    let mut out = Vec::new();
    loop {
        for (i, &d) in digits.iter().enumerate() {
            omegas[i] = grids.omega[d % grids.omega.len()];
            allocs[i] = grids.alloc_hz[d / grids.omega.len()];
        }
        if let Some(c) = evaluate_combo(vehicle, f_local_hz, &omegas, &allocs) {
            out.push(c);
        }
        // Mixed-radix increment.
        let mut pos = 0;
        loop {
            if pos == k {
                return out;
            }
            digits[pos] += 1;
            if digits[pos] < per_task {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
    }
}

/// Exhaustively solves the discretized single-slot problem.
///
/// When the aggregate capacity constraint is slack at the per-vehicle optima,
/// each vehicle's delay is minimized independently. Otherwise the product
/// space is searched jointly, keeping only capacity-feasible combinations and
/// minimizing (worst delay, total delay, total allocation) with the same
/// deterministic tie-breaking. Exceeding `budget` evaluations is refused with
/// the required count; an empty feasible set is reported explicitly.
pub fn brute_force_p1(
    instance: &P1Instance,
    grids: &GridSpec,
    budget: u64,
) -> Result<P1Solution> {
    instance.validate()?;
    grids.validate()?;

    let per_task = (grids.omega.len() * grids.alloc_hz.len()) as u128;
    let per_vehicle: Vec<u128> = instance
        .vehicles
        .iter()
        .map(|v| per_task.pow(v.tasks.len() as u32))
        .collect();
    let independent_cost: u128 = per_vehicle.iter().sum();
    if independent_cost > budget as u128 {
        return Err(Error::BudgetExceeded {
            required: independent_cost,
            budget,
        });
    }

    let candidates: Vec<Vec<Candidate>> = instance
        .vehicles
        .iter()
        .map(|v| vehicle_candidates(v, instance.f_local_hz, grids))
        .collect();
    if candidates.iter().any(|c| c.is_empty()) {
        return Err(Error::Infeasible);
    }

    let total_err: f64 = instance.vehicles.iter().flat_map(|v| &v.dt_error_hz).sum();

    // Independent optima, valid whenever the capacity constraint stays slack.
    let best_each: Vec<&Candidate> = candidates
        .iter()
        .map(|list| {
            list.iter()
                .reduce(|best, c| if candidate_better(c, best) { c } else { best })
                .expect("nonempty candidate list")
        })
        .collect();
    let total_alloc: f64 = best_each.iter().map(|c| c.alloc_sum_hz).sum();
    if total_alloc + total_err <= instance.f_server_hz {
        return Ok(P1Solution {
            decisions: best_each
                .iter()
                .map(|c| {
                    c.omegas
                        .iter()
                        .zip(&c.allocs)
                        .map(|(&offload_ratio, &dt_alloc_hz)| OffloadDecision {
                            offload_ratio,
                            dt_alloc_hz,
                        })
                        .collect()
                })
                .collect(),
            delays_s: best_each.iter().map(|c| c.delay_s).collect(),
        });
    }

    // Capacity binds: search the joint product space.
    let joint_cost: u128 = candidates.iter().map(|c| c.len() as u128).product();
    if independent_cost + joint_cost > budget as u128 {
        return Err(Error::BudgetExceeded {
            required: independent_cost + joint_cost,
            budget,
        });
    }

    let n = candidates.len();
    let mut indices = vec![0usize; n];
    let mut best: Option<(f64, f64, f64, Vec<usize>)> = None; // (worst, sum, alloc, picks)
    loop {
        let picked: Vec<&Candidate> = indices
            .iter()
            .enumerate()
            .map(|(v, &i)| &candidates[v][i])
            .collect();
        let alloc: f64 = picked.iter().map(|c| c.alloc_sum_hz).sum();
        if alloc + total_err <= instance.f_server_hz {
            let worst = picked.iter().map(|c| c.delay_s).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = picked.iter().map(|c| c.delay_s).sum();
            let better = match &best {
                None => true,
                Some((bw, bs, ba, b_idx)) => {
                    if worst != *bw {
                        worst < *bw
                    } else if sum != *bs {
                        sum < *bs
                    } else if alloc != *ba {
                        alloc < *ba
                    } else {
                        let current: Vec<&Candidate> = b_idx
                            .iter()
                            .enumerate()
                            .map(|(v, &i)| &candidates[v][i])
                            .collect();
                        let new_omegas: Vec<f64> =
                            picked.iter().flat_map(|c| c.omegas.clone()).collect();
                        let old_omegas: Vec<f64> =
                            current.iter().flat_map(|c| c.omegas.clone()).collect();
                        if new_omegas != old_omegas {
                            new_omegas < old_omegas
                        } else {
                            let new_allocs: Vec<f64> =
                                picked.iter().flat_map(|c| c.allocs.clone()).collect();
                            let old_allocs: Vec<f64> =
                                current.iter().flat_map(|c| c.allocs.clone()).collect();
                            new_allocs < old_allocs
                        }
                    }
                }
            };
            if better {
                best = Some((worst, sum, alloc, indices.clone()));
            }
        }
        // Advance the product counter.
        let mut pos = 0;
        loop {
            if pos == n {
                return match best {
                    Some((_, _, _, picks)) => Ok(P1Solution {
                        decisions: picks
                            .iter()
                            .enumerate()
                            .map(|(v, &i)| {
                                let c = &candidates[v][i];
                                c.omegas
                                    .iter()
                                    .zip(&c.allocs)
                                    .map(|(&offload_ratio, &dt_alloc_hz)| OffloadDecision {
                                        offload_ratio,
                                        dt_alloc_hz,
                                    })
                                    .collect()
                            })
                            .collect(),
                        delays_s: picks
                            .iter()
                            .enumerate()
                            .map(|(v, &i)| candidates[v][i].delay_s)
                            .collect(),
                    }),
                    None => Err(Error::Infeasible),
                };
            }
            indices[pos] += 1;
            if indices[pos] < candidates[pos].len() {
                break;
            }
            indices[pos] = 0;
            pos += 1;
        }
    }
}

/// On-disk form of a single-slot instance plus its search grids.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct P1InstanceFile {
    pub f_local_hz: f64,
    pub f_server_hz: f64,
    pub omega_grid: Vec<f64>,
    pub alloc_grid_hz: Vec<f64>,
    #[serde(default)]
    pub enumeration_budget: Option<u64>,
    pub vehicle: Vec<P1VehicleFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct P1VehicleFile {
    pub rate_bps: f64,
    pub task: Vec<P1TaskFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct P1TaskFile {
    pub size_bytes: f64,
    pub cycles_per_byte: f64,
    pub deadline_s: f64,
    #[serde(default)]
    pub dt_error_hz: f64,
}

impl P1InstanceFile {
    pub fn parse(toml_str: &str) -> Result<Self> {
        toml::from_str(toml_str).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_parts(&self) -> (P1Instance, GridSpec, u64) {
        let vehicles = self
            .vehicle
            .iter()
            .map(|v| P1Vehicle {
                tasks: v
                    .task
                    .iter()
                    .map(|t| Task {
                        size_bytes: t.size_bytes,
                        cycles_per_byte: t.cycles_per_byte,
                        deadline_s: t.deadline_s,
                    })
                    .collect(),
                rate_bps: v.rate_bps,
                dt_error_hz: v.task.iter().map(|t| t.dt_error_hz).collect(),
            })
            .collect();
        (
            P1Instance {
                vehicles,
                f_local_hz: self.f_local_hz,
                f_server_hz: self.f_server_hz,
            },
            GridSpec {
                omega: self.omega_grid.clone(),
                alloc_hz: self.alloc_grid_hz.clone(),
            },
            self.enumeration_budget.unwrap_or(DEFAULT_ENUM_BUDGET),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single_task_instance(rate_bps: f64, dt_error_hz: f64) -> P1Instance {
        P1Instance {
            vehicles: vec![P1Vehicle {
                tasks: vec![Task {
                    size_bytes: 100.0,
                    cycles_per_byte: 0.25e6,
                    deadline_s: 0.2,
                }],
                rate_bps,
                dt_error_hz: vec![dt_error_hz],
            }],
            f_local_hz: 5e9,
            f_server_hz: 100e9,
        }
    }

    #[test]
    fn coarse_grid_prefers_full_offload_at_max_alloc() {
        let instance = single_task_instance(7.06e8, 0.0);
        let grids = GridSpec {
            omega: vec![0.0, 0.5, 1.0],
            alloc_hz: vec![5e9, 10e9, 20e9],
        };
        let sol = brute_force_p1(&instance, &grids, DEFAULT_ENUM_BUDGET).unwrap();
        assert_eq!(sol.decisions[0][0].offload_ratio, 1.0);
        assert_eq!(sol.decisions[0][0].dt_alloc_hz, 20e9);
        assert_relative_eq!(sol.delays_s[0], 1.2511331444759207e-3, max_relative = 1e-12);
    }

    #[test]
    fn deep_fade_forces_local_optimum() {
        let instance = single_task_instance(0.0, 0.0);
        let grids = GridSpec {
            omega: (0..=10).map(|i| i as f64 / 10.0).collect(),
            alloc_hz: vec![1e9, 10e9, 20e9],
        };
        let sol = brute_force_p1(&instance, &grids, DEFAULT_ENUM_BUDGET).unwrap();
        assert_eq!(sol.decisions[0][0].offload_ratio, 0.0);
        assert_relative_eq!(sol.delays_s[0], 5.0e-3, max_relative = 1e-12);
    }

    #[test]
    fn tie_break_prefers_smaller_omega() {
        // Effectively free transmission and equal compute speeds: omega 0.4
        // and 0.6 tie on delay; the smaller ratio wins.
        let instance = P1Instance {
            vehicles: vec![P1Vehicle {
                tasks: vec![Task {
                    size_bytes: 100.0,
                    cycles_per_byte: 0.25e6,
                    deadline_s: 0.2,
                }],
                rate_bps: 1e30,
                dt_error_hz: vec![0.0],
            }],
            f_local_hz: 5e9,
            f_server_hz: 100e9,
        };
        let grids = GridSpec {
            omega: vec![0.4, 0.6],
            alloc_hz: vec![5e9],
        };
        let sol = brute_force_p1(&instance, &grids, DEFAULT_ENUM_BUDGET).unwrap();
        assert_eq!(sol.decisions[0][0].offload_ratio, 0.4);
        assert_relative_eq!(sol.delays_s[0], 3.0e-3, max_relative = 1e-9);
    }

    #[test]
    fn budget_guard_reports_required_count() {
        let instance = P1Instance {
            vehicles: vec![P1Vehicle {
                tasks: vec![
                    Task { size_bytes: 100.0, cycles_per_byte: 0.25e6, deadline_s: 0.2 };
                    4
                ],
                rate_bps: 7e8,
                dt_error_hz: vec![0.0; 4],
            }],
            f_local_hz: 5e9,
            f_server_hz: 100e9,
        };
        let grids = GridSpec {
            omega: (0..=10).map(|i| i as f64 / 10.0).collect(),
            alloc_hz: (1..=10).map(|i| i as f64 * 2e9).collect(),
        };
        // (11*10)^4 = 146_410_000 > 10^6.
        match brute_force_p1(&instance, &grids, 1_000_000) {
            Err(Error::BudgetExceeded { required, budget }) => {
                assert_eq!(required, 146_410_000);
                assert_eq!(budget, 1_000_000);
            }
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn infeasible_when_no_point_meets_deadline() {
        let mut instance = single_task_instance(10.0, 0.0); // ~80 s transfer
        instance.vehicles[0].tasks[0].deadline_s = 1e-6;
        instance.f_local_hz = 1e6; // 25 s local
        let grids = GridSpec {
            omega: vec![0.0, 0.5, 1.0],
            alloc_hz: vec![1e9],
        };
        assert!(matches!(
            brute_force_p1(&instance, &grids, DEFAULT_ENUM_BUDGET),
            Err(Error::Infeasible)
        ));
    }

    #[test]
    fn joint_filter_respects_capacity() {
        // Two vehicles, one task each; server fits only one large allocation.
        let task = Task {
            size_bytes: 100.0,
            cycles_per_byte: 0.25e6,
            deadline_s: 0.2,
        };
        let instance = P1Instance {
            vehicles: vec![
                P1Vehicle {
                    tasks: vec![task],
                    rate_bps: 7.06e8,
                    dt_error_hz: vec![0.0],
                },
                P1Vehicle {
                    tasks: vec![task],
                    rate_bps: 7.06e8,
                    dt_error_hz: vec![0.0],
                },
            ],
            f_local_hz: 5e9,
            f_server_hz: 25e9,
        };
        let grids = GridSpec {
            omega: vec![0.0, 1.0],
            alloc_hz: vec![5e9, 20e9],
        };
        let sol = brute_force_p1(&instance, &grids, DEFAULT_ENUM_BUDGET).unwrap();
        let total: f64 = sol
            .decisions
            .iter()
            .flat_map(|v| v.iter().map(|d| d.dt_alloc_hz))
            .sum();
        assert!(total <= 25e9);
        // Independent optima (both at 20 GHz) would need 40 GHz.
        let worst = sol.delays_s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(worst <= 0.2);
    }

    #[test]
    fn enlarging_alloc_grid_never_hurts() {
        let instance = single_task_instance(7.06e8, 0.1e9);
        let small = GridSpec {
            omega: (0..=10).map(|i| i as f64 / 10.0).collect(),
            alloc_hz: vec![1e9, 5e9],
        };
        let big = GridSpec {
            omega: (0..=10).map(|i| i as f64 / 10.0).collect(),
            alloc_hz: vec![1e9, 5e9, 10e9, 20e9],
        };
        let d_small = brute_force_p1(&instance, &small, DEFAULT_ENUM_BUDGET)
            .unwrap()
            .delays_s[0];
        let d_big = brute_force_p1(&instance, &big, DEFAULT_ENUM_BUDGET)
            .unwrap()
            .delays_s[0];
        assert!(d_big <= d_small);
    }

    #[test]
    fn instance_file_round_trip() {
        let text = r#"
f_local_hz = 5e9
f_server_hz = 100e9
omega_grid = [0.0, 0.5, 1.0]
alloc_grid_hz = [5e9, 10e9, 20e9]

[[vehicle]]
rate_bps = 7.06e8

[[vehicle.task]]
size_bytes = 100.0
cycles_per_byte = 250000.0
deadline_s = 0.2
dt_error_hz = 0.0
"#;
        let file = P1InstanceFile::parse(text).unwrap();
        let (instance, grids, budget) = file.to_parts();
        assert_eq!(budget, DEFAULT_ENUM_BUDGET);
        let sol = brute_force_p1(&instance, &grids, budget).unwrap();
        assert_eq!(sol.decisions[0][0].offload_ratio, 1.0);
        assert_eq!(sol.decisions[0][0].dt_alloc_hz, 20e9);

        assert!(P1InstanceFile::parse("nonsense = [").is_err());
    }
}
