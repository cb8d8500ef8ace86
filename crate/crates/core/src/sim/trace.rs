//! One record per simulated slot.

use serde::{Deserialize, Serialize};

/// Column order of [`TraceRow`], as written to CSV.
pub const TRACE_COLUMNS: [&str; 34] = [
    "k",
    "time",
    "x",
    "y",
    "theta",
    "z_r",
    "z_alpha",
    "zc_r",
    "zc_alpha",
    "est_x",
    "est_y",
    "est_theta",
    "ref_x",
    "ref_y",
    "ref_theta",
    "u_v",
    "u_omega",
    "cmd_v",
    "cmd_omega",
    "tau_sc",
    "tau_ca",
    "sc_lost",
    "ca_lost",
    "sc_fresh",
    "ca_fresh",
    "starved",
    "ekf_updated",
    "solver_iterations",
    "solver_kkt",
    "solver_converged",
    "solver_softened",
    "solver_cost",
    "processing_delay",
    "clearance",
];

/// State of the loop at slot `k`, before the plant advances.
///
/// `zc_*` is the compensated measurement fed to the estimator, `NaN` when no
/// fresh measurement arrived. `clearance` is the smallest distance between
/// the robot's physical disc and an obstacle disc, `inf` without obstacles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub time: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub z_r: f64,
    pub z_alpha: f64,
    pub zc_r: f64,
    pub zc_alpha: f64,
    pub est_x: f64,
    pub est_y: f64,
    pub est_theta: f64,
    pub ref_x: f64,
    pub ref_y: f64,
    pub ref_theta: f64,
    /// Input the actuator applied.
    pub u_v: f64,
    pub u_omega: f64,
    /// Head of the sequence the controller emitted this slot.
    pub cmd_v: f64,
    pub cmd_omega: f64,
    pub tau_sc: usize,
    pub tau_ca: usize,
    pub sc_lost: bool,
    pub ca_lost: bool,
    pub sc_fresh: bool,
    pub ca_fresh: bool,
    pub starved: bool,
    pub ekf_updated: bool,
    pub solver_iterations: usize,
    pub solver_kkt: f64,
    pub solver_converged: bool,
    pub solver_softened: bool,
    pub solver_cost: f64,
    /// Slots between solving and entering the control-to-actuator link.
    pub processing_delay: usize,
    pub clearance: f64,
}
