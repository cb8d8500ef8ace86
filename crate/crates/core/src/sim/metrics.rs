//! Performance metrics computed from a trace alone.

use serde::{Deserialize, Serialize};

use super::scenario::ScenarioConfig;
use super::trace::TraceRow;
use crate::vehicle::wrap_angle;

/// Fraction of the final slots averaged for steady-state errors.
pub const STEADY_STATE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub slots: usize,
    /// Mean distance to the reference position, cm.
    pub avg_euclidean_error_cm: f64,
    /// Mean absolute wrapped heading error, deg.
    pub avg_step_heading_error_deg: f64,
    /// Point task only: mean position error over the final slots, cm.
    pub steady_state_position_error_cm: Option<f64>,
    /// Point task only: mean heading error over the final slots, deg.
    pub steady_state_heading_error_deg: Option<f64>,
    pub final_position_error_cm: f64,
    /// Slots in which the physical discs overlap an obstacle.
    pub collision_count: usize,
    /// Smallest physical clearance, m; `None` without obstacles.
    pub min_clearance_m: Option<f64>,
    /// Slots in which the actuator had no control for the slot.
    pub starvation_events: usize,
    pub sc_loss_rate: f64,
    pub ca_loss_rate: f64,
    pub solver_nonconverged: usize,
    pub softened_solves: usize,
}

fn position_error(r: &TraceRow) -> f64 {
    (r.x - r.ref_x).hypot(r.y - r.ref_y)
}

fn heading_error(r: &TraceRow) -> f64 {
    wrap_angle(r.theta - r.ref_theta).abs()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Metrics of `trace`; an empty trace gives all zeros.
pub fn compute_metrics(trace: &[TraceRow], sc: &ScenarioConfig) -> Metrics {
    let n = trace.len();
    let steady = if sc.task.is_point() && n > 0 {
        let count = ((n as f64 * STEADY_STATE_FRACTION).ceil() as usize).clamp(1, n);
        let tail = &trace[n - count..];
        (Some(100.0 * mean(tail.iter().map(position_error))), Some(mean(tail.iter().map(heading_error)).to_degrees()))
    } else {
        (None, None)
    };
    let rate = |count: usize| if n == 0 { 0.0 } else { count as f64 / n as f64 };
    let min_clearance = if sc.obstacles.is_empty() { None } else { Some(trace.iter().map(|r| r.clearance).fold(f64::INFINITY, f64::min)) };
    Metrics {
        slots: n,
        avg_euclidean_error_cm: 100.0 * mean(trace.iter().map(position_error)),
        avg_step_heading_error_deg: mean(trace.iter().map(heading_error)).to_degrees(),
        steady_state_position_error_cm: steady.0,
        steady_state_heading_error_deg: steady.1,
        final_position_error_cm: trace.last().map_or(0.0, |r| 100.0 * position_error(r)),
        collision_count: trace.iter().filter(|r| r.clearance < 0.0).count(),
        min_clearance_m: min_clearance.filter(|c| c.is_finite()),
        starvation_events: trace.iter().filter(|r| r.starved).count(),
        sc_loss_rate: rate(trace.iter().filter(|r| r.sc_lost).count()),
        ca_loss_rate: rate(trace.iter().filter(|r| r.ca_lost).count()),
        solver_nonconverged: trace.iter().filter(|r| !r.solver_converged).count(),
        softened_solves: trace.iter().filter(|r| r.solver_softened).count(),
    }
}
