use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix3x2, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use super::reference::ReferencePoint;
use crate::error::ConfigError;
use crate::vehicle::{wrap_angle, ControlInput, State};

pub const RICCATI_TOLERANCE: f64 = 1e-9;
pub const RICCATI_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LqrWeights {
    pub q: [f64; 3],
    pub r: [f64; 2],
    /// Linearization speed used when the reference speed is below it.
    pub min_linearization_speed: f64,
}

impl Default for LqrWeights {
    fn default() -> Self {
        Self { q: [10.0, 10.0, 1.0], r: [1.0, 1.0], min_linearization_speed: 0.1 }
    }
}

impl LqrWeights {
    pub fn validate(&self, prefix: &str) -> Result<(), ConfigError> {
        if self.q.iter().any(|w| !(*w >= 0.0)) || self.r.iter().any(|w| !(*w > 0.0)) {
            return Err(ConfigError::new(format!("{prefix}.lqr"), "q must be >= 0 and r > 0"));
        }
        if !(self.min_linearization_speed > 0.0) {
            return Err(ConfigError::new(format!("{prefix}.lqr.min_linearization_speed"), "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RiccatiDivergence {
    pub iterations: usize,
}

/// Iterates the discrete algebraic Riccati equation from `p0` until the
/// max-abs change is below [`RICCATI_TOLERANCE`]. Returns `(P, K, iterations)`
/// with `u = -K x`.
#[allow(clippy::type_complexity)]
pub fn solve_dare<const N: usize, const M: usize>(
    a: &SMatrix<f64, N, N>,
    b: &SMatrix<f64, N, M>,
    q: &SMatrix<f64, N, N>,
    r: &SMatrix<f64, M, M>,
    p0: &SMatrix<f64, N, N>,
) -> Result<(SMatrix<f64, N, N>, SMatrix<f64, M, N>, usize), RiccatiDivergence> {
    let mut p = *p0;
    for it in 1..=RICCATI_MAX_ITERATIONS {
        let s = r + b.transpose() * p * b;
        let inv = s.try_inverse().ok_or(RiccatiDivergence { iterations: it })?;
        let k = inv * b.transpose() * p * a;
        let next = q + a.transpose() * p * a - a.transpose() * p * b * k;
        let next = (next + next.transpose()) * 0.5;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(RiccatiDivergence { iterations: it });
        }
        let change = (next - p).amax();
        p = next;
        if change < RICCATI_TOLERANCE {
            let s = r + b.transpose() * p * b;
            let k = s.try_inverse().ok_or(RiccatiDivergence { iterations: it })? * b.transpose() * p * a;
            return Ok((p, k, it));
        }
    }
    Err(RiccatiDivergence { iterations: RICCATI_MAX_ITERATIONS })
}

/// Error-state linearization of the Euler unicycle about `(s_ref, u_ref)`.
pub fn linearize(reference: &ReferencePoint, dt: f64, v_floor: f64) -> (Matrix3<f64>, Matrix3x2<f64>) {
    let v = reference.input.v;
    let v = if v.abs() < v_floor { v_floor } else { v };
    let (s, c) = reference.state.theta.sin_cos();
    #[rustfmt::skip]
    let a = Matrix3::new(
        1.0, 0.0, -dt * v * s,
        0.0, 1.0, dt * v * c,
        0.0, 0.0, 1.0,
    );
    #[rustfmt::skip]
    let b = Matrix3x2::new(
        dt * c, 0.0,
        dt * s, 0.0,
        0.0, dt,
    );
    (a, b)
}

/// Time-varying LQR tracker that warm starts each Riccati solve from the
/// previous cost-to-go.
#[derive(Debug, Clone, Default)]
pub struct LqrController {
    weights: LqrWeights,
    p: Option<Matrix3<f64>>,
    gain: Option<Matrix2x3<f64>>,
    divergence_events: usize,
}

impl LqrController {
    pub fn new(weights: LqrWeights) -> Self {
        Self { weights, p: None, gain: None, divergence_events: 0 }
    }

    pub fn divergence_events(&self) -> usize {
        self.divergence_events
    }

    /// Returns the saturated input and whether the Riccati solve diverged
    /// (in which case the previous gain was reused).
    pub fn control(&mut self, state: &State, reference: &ReferencePoint, dt: f64, v_max: f64, omega_max: f64) -> (ControlInput, bool) {
        let w = &self.weights;
        let (a, b) = linearize(reference, dt, w.min_linearization_speed);
        let q = Matrix3::from_diagonal(&Vector3::from(w.q));
        let r = Matrix2::from_diagonal(&nalgebra::Vector2::from(w.r));
        let p0 = self.p.unwrap_or(q);
        let (gain, diverged) = match solve_dare(&a, &b, &q, &r, &p0) {
            Ok((p, k, _)) => {
                self.p = Some(p);
                self.gain = Some(k);
                (k, false)
            }
            Err(_) => {
                self.divergence_events += 1;
                (self.gain.unwrap_or_else(Matrix2x3::zeros), true)
            }
        };
        let e = Vector3::new(state.x - reference.state.x, state.y - reference.state.y, wrap_angle(state.theta - reference.state.theta));
        let du = gain * e;
        (ControlInput::new(reference.input.v - du[0], reference.input.omega - du[1]).saturate(v_max, omega_max), diverged)
    }
}

/// One LQR evaluation about the head of `window` with a cold Riccati start.
pub fn lqr_baseline(state: &State, window: &[ReferencePoint], dt: f64, weights: &LqrWeights, v_max: f64, omega_max: f64) -> ControlInput {
    LqrController::new(*weights).control(state, &window[0], dt, v_max, omega_max).0
}
