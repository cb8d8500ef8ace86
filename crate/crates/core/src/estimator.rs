//! Extended Kalman filter for the unicycle observed by the range-bearing
//! beacon.
//!
//! Process noise is expressed on the two inputs and mapped into the state
//! through the input Jacobian, so `q_proc` is 2x2 rather than 3x3.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix3x2, Vector2};
use thiserror::Error;

use crate::vehicle::{self, wrap_angle, ControlInput, Measurement, MeasurementNoiseParams, ProcessNoiseParams, State};

/// Below this range the measurement Jacobian is treated as singular.
pub const R_MIN: f64 = 1e-6;

/// Largest innovation-covariance condition number accepted in an update.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfBelief {
    pub mean: State,
    pub cov: Matrix3<f64>,
}

impl EkfBelief {
    pub fn new(mean: State, cov: Matrix3<f64>) -> Self {
        Self { mean, cov }
    }

    /// Belief with a diagonal covariance.
    pub fn with_variances(mean: State, variances: [f64; 3]) -> Self {
        Self::new(mean, Matrix3::from_diagonal(&variances.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfNoise {
    /// Covariance of the input disturbances `(d_v, d_omega)`.
    pub q_proc: Matrix2<f64>,
    /// Covariance of the sensor noise `(n_r, n_alpha)`.
    pub r_meas: Matrix2<f64>,
}

impl EkfNoise {
    pub fn from_params(p: &ProcessNoiseParams, m: &MeasurementNoiseParams) -> Self {
        Self {
            q_proc: Matrix2::new(p.sigma_v.powi(2), 0.0, 0.0, p.sigma_omega.powi(2)),
            r_meas: Matrix2::new(m.sigma_r.powi(2), 0.0, 0.0, m.sigma_alpha.powi(2)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EstimatorError {
    #[error("state within {R_MIN} m of the beacon; measurement Jacobian undefined")]
    NearOrigin,
    #[error("innovation covariance ill-conditioned (condition number {0:e})")]
    IllConditioned(f64),
}

/// State and disturbance Jacobians of the Euler step at `(s, u)`.
pub fn jacobians_dynamics(s: &State, u: &ControlInput, dt: f64) -> (Matrix3<f64>, Matrix3x2<f64>) {
    let (sin, cos) = s.theta.sin_cos();
    #[rustfmt::skip]
    let a = Matrix3::new(
        1.0, 0.0, -dt * u.v * sin,
        0.0, 1.0, dt * u.v * cos,
        0.0, 0.0, 1.0,
    );
    #[rustfmt::skip]
    let b = Matrix3x2::new(
        dt * cos, 0.0,
        dt * sin, 0.0,
        0.0, dt,
    );
    (a, b)
}

/// Measurement Jacobians at `s`; the noise Jacobian is the identity.
pub fn jacobians_measurement(s: &State) -> Result<(Matrix2x3<f64>, Matrix2<f64>), EstimatorError> {
    let r2 = s.x * s.x + s.y * s.y;
    let r = r2.sqrt();
    if r < R_MIN {
        return Err(EstimatorError::NearOrigin);
    }
    #[rustfmt::skip]
    let c = Matrix2x3::new(
        s.x / r, s.y / r, 0.0,
        -s.y / r2, s.x / r2, 0.0,
    );
    Ok((c, Matrix2::identity()))
}

fn symmetrize(p: &Matrix3<f64>) -> Matrix3<f64> {
    (p + p.transpose()) * 0.5
}

/// Time update through the nominal dynamics.
pub fn predict(b: &EkfBelief, u: &ControlInput, dt: f64, n: &EkfNoise) -> EkfBelief {
    let (a, bm) = jacobians_dynamics(&b.mean, u, dt);
    let mean = vehicle::step_unchecked(b.mean, *u, dt);
    let cov = a * b.cov * a.transpose() + bm * n.q_proc * bm.transpose();
    EkfBelief { mean, cov: symmetrize(&cov) }
}

/// Innovation `z - h(mean)` with the bearing component wrapped.
pub fn innovation(z: &Measurement, mean: &State) -> Vector2<f64> {
    let predicted = vehicle::measure(mean);
    Vector2::new(z.r - predicted.r, wrap_angle(z.alpha - predicted.alpha))
}

/// Kalman gain and innovation covariance for a measurement at `b`.
pub fn gain(b: &EkfBelief, n: &EkfNoise) -> Result<(nalgebra::Matrix3x2<f64>, Matrix2x3<f64>, Matrix2<f64>), EstimatorError> {
    let (c, _) = jacobians_measurement(&b.mean)?;
    let s = c * b.cov * c.transpose() + n.r_meas;
    let s = (s + s.transpose()) * 0.5;
    let eig = s.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(cond <= MAX_INNOVATION_CONDITION) {
        return Err(EstimatorError::IllConditioned(cond));
    }
    let s_inv = s.try_inverse().ok_or(EstimatorError::IllConditioned(cond))?;
    Ok((b.cov * c.transpose() * s_inv, c, s))
}

/// Measurement update. On error the caller keeps the prior.
pub fn update(b: &EkfBelief, z: &Measurement, n: &EkfNoise) -> Result<EkfBelief, EstimatorError> {
    let (k, c, _) = gain(b, n)?;
    let nu = innovation(z, &b.mean);
    let mean = State::from_vector(&(b.mean.to_vector() + k * nu));
    let cov = (Matrix3::identity() - k * c) * b.cov;
    Ok(EkfBelief { mean, cov: symmetrize(&cov) })
}
