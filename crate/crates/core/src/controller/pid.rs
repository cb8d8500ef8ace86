use serde::{Deserialize, Serialize};

use super::reference::ReferencePoint;
use crate::error::ConfigError;
use crate::vehicle::{wrap_angle, ControlInput, State};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidGains {
    pub kp_v: f64,
    pub ki_v: f64,
    pub kd_v: f64,
    pub kp_omega: f64,
    pub ki_omega: f64,
    pub kd_omega: f64,
    /// Integrator clamp, applied to both loops.
    pub integral_limit: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self { kp_v: 1.0, ki_v: 0.0, kd_v: 0.0, kp_omega: 2.0, ki_omega: 0.0, kd_omega: 0.0, integral_limit: 1.0 }
    }
}

impl PidGains {
    pub fn validate(&self, prefix: &str) -> Result<(), ConfigError> {
        let all = [self.kp_v, self.ki_v, self.kd_v, self.kp_omega, self.ki_omega, self.kd_omega];
        if all.iter().any(|g| !g.is_finite()) {
            return Err(ConfigError::new(format!("{prefix}.pid"), "gains must be finite"));
        }
        if !(self.integral_limit >= 0.0) {
            return Err(ConfigError::new(format!("{prefix}.pid.integral_limit"), "must be non-negative"));
        }
        Ok(())
    }
}

/// Two decoupled PID loops: speed from the along-track distance to the
/// reference point, turn rate from the heading error toward it.
#[derive(Debug, Clone, Default)]
pub struct PidController {
    gains: PidGains,
    integral: [f64; 2],
    previous: Option<[f64; 2]>,
}

/// Distance below which the heading loop tracks the reference heading
/// instead of the bearing to the point.
const NEAR_DISTANCE: f64 = 1e-3;

impl PidController {
    pub fn new(gains: PidGains) -> Self {
        Self { gains, integral: [0.0; 2], previous: None }
    }

    pub fn reset(&mut self) {
        self.integral = [0.0; 2];
        self.previous = None;
    }

    /// Errors `(distance along heading, heading error)`.
    fn errors(state: &State, reference: &ReferencePoint) -> [f64; 2] {
        let dx = reference.state.x - state.x;
        let dy = reference.state.y - state.y;
        let distance = dx.hypot(dy);
        if distance < NEAR_DISTANCE {
            return [0.0, wrap_angle(reference.state.theta - state.theta)];
        }
        let bearing = dy.atan2(dx);
        let mut heading_error = wrap_angle(bearing - state.theta);
        let mut along = distance;
        // Reverse toward points behind the vehicle.
        if heading_error.abs() > std::f64::consts::FRAC_PI_2 {
            along = -distance;
            heading_error = wrap_angle(heading_error + std::f64::consts::PI);
        }
        [along, heading_error]
    }

    pub fn control(&mut self, state: &State, reference: &ReferencePoint, dt: f64, v_max: f64, omega_max: f64) -> ControlInput {
        let g = self.gains;
        let e = Self::errors(state, reference);
        let lim = g.integral_limit;
        for (acc, err) in self.integral.iter_mut().zip(e) {
            *acc = (*acc + err * dt).clamp(-lim, lim);
        }
        let de = match self.previous {
            Some(p) if dt > 0.0 => [(e[0] - p[0]) / dt, wrap_angle(e[1] - p[1]) / dt],
            _ => [0.0; 2],
        };
        self.previous = Some(e);
        let v = g.kp_v * e[0] + g.ki_v * self.integral[0] + g.kd_v * de[0];
        let omega = g.kp_omega * e[1] + g.ki_omega * self.integral[1] + g.kd_omega * de[1];
        ControlInput::new(v, omega).saturate(v_max, omega_max)
    }
}

/// Single stateless PID evaluation: proportional response with fresh
/// integrator and derivative state.
pub fn pid_baseline(state: &State, reference: &ReferencePoint, gains: &PidGains, dt: f64, v_max: f64, omega_max: f64) -> ControlInput {
    PidController::new(*gains).control(state, reference, dt, v_max, omega_max)
}
