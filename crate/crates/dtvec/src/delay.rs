//! Per-task delay model: local execution, edge execution with the digital
//! twin's estimation bias, parallel-branch combination, and per-vehicle
//! totals.
//!
//! Workload is `size_bytes * cycles_per_byte` CPU cycles; transmission moves
//! `8 * size_bytes` bits over the uplink. The local and offloaded fractions of
//! one task start simultaneously, so a task finishes when the slower branch
//! does, and a vehicle finishes when its slowest task does.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp on the effective edge allocation `f + df`, Hz. Keeps the bias
/// denominator bounded away from zero; with the shipped allocation bounds and
/// error range the clamp never fires.
pub const ALLOC_EPSILON_HZ: f64 = 1.0e7;

/// One computing task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Task {
    /// Task size, bytes.
    pub size_bytes: f64,
    /// CPU cycles required per byte.
    pub cycles_per_byte: f64,
    /// Completion deadline, seconds.
    pub deadline_s: f64,
}

impl Task {
    /// Total workload in CPU cycles.
    pub fn cycles(&self) -> f64 {
        self.size_bytes * self.cycles_per_byte
    }
}

/// The digital twin's decision for one task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffloadDecision {
    /// Fraction of the task executed at the edge, in [0, 1].
    pub offload_ratio: f64,
    /// Edge capacity the twin reserves for the task, Hz.
    pub dt_alloc_hz: f64,
}

/// All delay components for one task in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayBreakdown {
    /// Local-branch processing delay, seconds.
    pub t_local_s: f64,
    /// Uplink transmission delay of the offloaded bytes, seconds.
    pub t_tx_s: f64,
    /// Edge processing delay at the estimated allocation, seconds.
    pub t_edge_compute_s: f64,
    /// Estimation bias: correction from estimated to actual allocation,
    /// seconds. Negative when the twin overestimates the shortfall, i.e. when
    /// the actual capacity exceeds the estimate.
    pub dt_bias_s: f64,
    /// Total edge-branch delay, seconds.
    pub t_edge_s: f64,
    /// Task completion delay: the slower of the two branches, seconds.
    pub t_exe_s: f64,
}

/// Edge-branch components before combining with the local branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeDelay {
    pub t_tx_s: f64,
    pub t_edge_compute_s: f64,
    pub dt_bias_s: f64,
    pub t_edge_s: f64,
    /// True when the effective allocation hit the `ALLOC_EPSILON_HZ` clamp.
    pub alloc_clamped: bool,
}

/// Delay of the locally executed fraction: `(1-w) * d * c / f_local`.
pub fn local_delay(task: &Task, offload_ratio: f64, f_local_hz: f64) -> f64 {
    (1.0 - offload_ratio) * task.cycles() / f_local_hz
}

/// Effective edge capacity actually available to the task, with the
/// singularity clamp applied. Returns the clamped value and whether the clamp
/// fired.
pub fn effective_alloc_hz(dt_alloc_hz: f64, dt_error_hz: f64) -> (f64, bool) {
    let eff = dt_alloc_hz + dt_error_hz;
    if eff < ALLOC_EPSILON_HZ {
        (ALLOC_EPSILON_HZ, true)
    } else {
        (eff, false)
    }
}

/// Bias of the estimated edge processing time:
/// `-w*d*c*df / (f * (df + f))`, seconds. Positive when the twin
/// underestimates the available capacity (`df < 0`), negative when it
/// overestimates.
pub fn estimation_bias(
    task: &Task,
    offload_ratio: f64,
    dt_alloc_hz: f64,
    dt_error_hz: f64,
) -> f64 {
    debug_assert!(dt_alloc_hz > 0.0);
    let (eff, clamped) = effective_alloc_hz(dt_alloc_hz, dt_error_hz);
    let err = if clamped { eff - dt_alloc_hz } else { dt_error_hz };
    -(offload_ratio * task.cycles() * err) / (dt_alloc_hz * eff)
}

/// Edge-branch delay: uplink transfer, edge processing at the estimated
/// allocation, and the estimation bias. A positive offload with no usable
/// rate yields an infinite edge delay, which downstream code treats as a
/// deadline violation.
pub fn edge_delay(
    task: &Task,
    offload_ratio: f64,
    rate_bps: f64,
    dt_alloc_hz: f64,
    dt_error_hz: f64,
) -> EdgeDelay {
    if offload_ratio <= 0.0 {
        return EdgeDelay {
            t_tx_s: 0.0,
            t_edge_compute_s: 0.0,
            dt_bias_s: 0.0,
            t_edge_s: 0.0,
            alloc_clamped: false,
        };
    }
    let (_, alloc_clamped) = effective_alloc_hz(dt_alloc_hz, dt_error_hz);
    let t_edge_compute_s = offload_ratio * task.cycles() / dt_alloc_hz;
    let dt_bias_s = estimation_bias(task, offload_ratio, dt_alloc_hz, dt_error_hz);
    if rate_bps <= 0.0 {
        return EdgeDelay {
            t_tx_s: f64::INFINITY,
            t_edge_compute_s,
            dt_bias_s,
            t_edge_s: f64::INFINITY,
            alloc_clamped,
        };
    }
    let t_tx_s = offload_ratio * task.size_bytes * 8.0 / rate_bps;
    EdgeDelay {
        t_tx_s,
        t_edge_compute_s,
        dt_bias_s,
        t_edge_s: t_tx_s + t_edge_compute_s + dt_bias_s,
        alloc_clamped,
    }
}

/// Completion delay of one task: both branches run in parallel.
pub fn exec_delay(t_local_s: f64, t_edge_s: f64) -> f64 {
    t_local_s.max(t_edge_s)
}

/// Full per-task breakdown for one decision. Returns the breakdown and
/// whether the allocation clamp fired.
pub fn task_breakdown(
    task: &Task,
    decision: &OffloadDecision,
    rate_bps: f64,
    dt_error_hz: f64,
    f_local_hz: f64,
) -> (DelayBreakdown, bool) {
    let t_local_s = local_delay(task, decision.offload_ratio, f_local_hz);
    let edge = edge_delay(
        task,
        decision.offload_ratio,
        rate_bps,
        decision.dt_alloc_hz,
        dt_error_hz,
    );
    (
        DelayBreakdown {
            t_local_s,
            t_tx_s: edge.t_tx_s,
            t_edge_compute_s: edge.t_edge_compute_s,
            dt_bias_s: edge.dt_bias_s,
            t_edge_s: edge.t_edge_s,
            t_exe_s: exec_delay(t_local_s, edge.t_edge_s),
        },
        edge.alloc_clamped,
    )
}

/// Time for a vehicle to complete all of its tasks: the slowest task wins.
pub fn vehicle_total_delay(breakdowns: &[DelayBreakdown]) -> Result<f64> {
    if breakdowns.is_empty() {
        return Err(Error::Domain {
            op: "vehicle_total_delay",
            reason: "no task breakdowns supplied".into(),
        });
    }
    Ok(breakdowns
        .iter()
        .map(|b| b.t_exe_s)
        .fold(f64::NEG_INFINITY, f64::max))
}
