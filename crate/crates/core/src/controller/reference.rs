//! Reference trajectories for point stabilization and closed-curve tracking.
//!
//! Curves are parameterized by `phase = 2 pi * t / period`, one traversal per
//! period. Heading and input references come from the analytic derivatives.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::vehicle::{ControlInput, State};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceTrajectory {
    /// Park at a fixed pose.
    Point { goal: State },
    /// `(r cos phase, r sin phase)`.
    Circle { radius: f64, period: f64 },
    /// `(a sin phase, a sin phase cos phase)`.
    Eight { amplitude: f64, period: f64 },
}

/// One reference sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReferencePoint {
    pub state: State,
    pub input: ControlInput,
}

impl ReferenceTrajectory {
    /// Reference at continuous time `t`.
    pub fn sample(&self, t: f64) -> ReferencePoint {
        let (pos, vel, acc) = match *self {
            ReferenceTrajectory::Point { goal } => {
                return ReferencePoint { state: goal, input: ControlInput::ZERO };
            }
            ReferenceTrajectory::Circle { radius, period } => {
                let rate = 2.0 * PI / period;
                let (s, c) = (rate * t).sin_cos();
                (
                    [radius * c, radius * s],
                    [-radius * rate * s, radius * rate * c],
                    [-radius * rate * rate * c, -radius * rate * rate * s],
                )
            }
            ReferenceTrajectory::Eight { amplitude, period } => {
                let rate = 2.0 * PI / period;
                let phase = rate * t;
                let (s, c) = phase.sin_cos();
                let (s2, c2) = (2.0 * phase).sin_cos();
                // y = a/2 sin(2 phase)
                (
                    [amplitude * s, 0.5 * amplitude * s2],
                    [amplitude * rate * c, amplitude * rate * c2],
                    [-amplitude * rate * rate * s, -2.0 * amplitude * rate * rate * s2],
                )
            }
        };
        let speed2 = vel[0] * vel[0] + vel[1] * vel[1];
        let heading = vel[1].atan2(vel[0]);
        let omega = if speed2 > 0.0 { (vel[0] * acc[1] - vel[1] * acc[0]) / speed2 } else { 0.0 };
        ReferencePoint { state: State::new(pos[0], pos[1], heading), input: ControlInput::new(speed2.sqrt(), omega) }
    }

    /// Reference at slot `k`.
    pub fn at_slot(&self, k: usize, dt: f64) -> ReferencePoint {
        self.sample(k as f64 * dt)
    }

    pub fn is_point(&self) -> bool {
        matches!(self, ReferenceTrajectory::Point { .. })
    }
}

/// References for slots `k..=k + horizon`.
///
/// Headings are unwrapped along the window so consecutive samples never jump
/// by `2 pi`.
pub fn reference_window(traj: &ReferenceTrajectory, k: usize, horizon: usize, dt: f64) -> Vec<ReferencePoint> {
    let mut window: Vec<ReferencePoint> = (0..=horizon).map(|i| traj.at_slot(k + i, dt)).collect();
    for i in 1..window.len() {
        let prev = window[i - 1].state.theta;
        let cur = &mut window[i].state.theta;
        *cur = prev + crate::vehicle::wrap_angle(*cur - prev);
    }
    window
}
