//! Unicycle kinematics and the range-bearing beacon sensor.
//!
//! The beacon sits at the world origin. Headings are carried unwrapped through
//! integration; [`wrap_angle`] is only applied when comparing angles.

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::InvalidArgument;

/// Planar pose of the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl State {
    pub const fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.theta)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    /// Euclidean distance between the positions of two poses.
    pub fn distance_to(&self, other: &State) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Commanded linear and angular speed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub v: f64,
    pub omega: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput { v: 0.0, omega: 0.0 };

    pub const fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite() && self.omega.is_finite()
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.v, self.omega)
    }

    pub fn within_bounds(&self, v_max: f64, omega_max: f64) -> bool {
        self.v.abs() <= v_max && self.omega.abs() <= omega_max
    }

    /// Component-wise saturation to `|v| <= v_max`, `|omega| <= omega_max`.
    pub fn saturate(self, v_max: f64, omega_max: f64) -> Self {
        Self::new(self.v.clamp(-v_max, v_max), self.omega.clamp(-omega_max, omega_max))
    }
}

/// Standard deviations of the additive input disturbances.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProcessNoiseParams {
    pub sigma_v: f64,
    pub sigma_omega: f64,
}

/// A range-bearing observation relative to the beacon.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measurement {
    pub r: f64,
    pub alpha: f64,
}

impl Measurement {
    pub const fn new(r: f64, alpha: f64) -> Self {
        Self { r, alpha }
    }

    pub fn is_finite(&self) -> bool {
        self.r.is_finite() && self.alpha.is_finite()
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.r, self.alpha)
    }

    /// Cartesian point the measurement refers to.
    pub fn position(&self) -> (f64, f64) {
        (self.r * self.alpha.cos(), self.r * self.alpha.sin())
    }
}

/// Standard deviations of the additive sensor noise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeasurementNoiseParams {
    pub sigma_r: f64,
    pub sigma_alpha: f64,
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Noise-free forward Euler step of the unicycle.
pub fn step(s: State, u: ControlInput, dt: f64) -> Result<State, InvalidArgument> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(InvalidArgument::new("dt", "must be positive and finite"));
    }
    if !s.is_finite() {
        return Err(InvalidArgument::new("state", "must be finite"));
    }
    if !u.is_finite() {
        return Err(InvalidArgument::new("input", "must be finite"));
    }
    Ok(step_unchecked(s, u, dt))
}

/// [`step`] without argument validation, for inner solver loops.
#[inline]
pub(crate) fn step_unchecked(s: State, u: ControlInput, dt: f64) -> State {
    let (sin, cos) = s.theta.sin_cos();
    State::new(s.x + dt * u.v * cos, s.y + dt * u.v * sin, s.theta + dt * u.omega)
}

/// Euler step with Gaussian disturbances added to both inputs.
///
/// Two standard normals are drawn per call regardless of the noise levels so
/// the stream stays aligned across configurations.
pub fn step_disturbed<R: Rng + ?Sized>(
    s: State,
    u: ControlInput,
    dt: f64,
    p: &ProcessNoiseParams,
    rng: &mut R,
) -> Result<State, InvalidArgument> {
    let nv: f64 = rng.sample(StandardNormal);
    let nw: f64 = rng.sample(StandardNormal);
    let mut disturbed = u;
    if p.sigma_v > 0.0 {
        disturbed.v += p.sigma_v * nv;
    }
    if p.sigma_omega > 0.0 {
        disturbed.omega += p.sigma_omega * nw;
    }
    step(s, disturbed, dt)
}

/// Noise-free range and bearing of the vehicle from the beacon.
pub fn measure(s: &State) -> Measurement {
    if s.x == 0.0 && s.y == 0.0 {
        return Measurement::new(0.0, 0.0);
    }
    Measurement::new(s.x.hypot(s.y), s.y.atan2(s.x))
}

/// [`measure`] plus independent Gaussian range and bearing noise.
pub fn measure_noisy<R: Rng + ?Sized>(
    s: &State,
    m: &MeasurementNoiseParams,
    rng: &mut R,
) -> Measurement {
    let nr: f64 = rng.sample(StandardNormal);
    let na: f64 = rng.sample(StandardNormal);
    let mut z = measure(s);
    if m.sigma_r > 0.0 {
        z.r = (z.r + m.sigma_r * nr).max(0.0);
    }
    if m.sigma_alpha > 0.0 {
        z.alpha = wrap_angle(z.alpha + m.sigma_alpha * na);
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn step_examples() {
        let s = step(State::new(0.0, 0.0, 0.0), ControlInput::new(1.0, 0.0), 0.01).unwrap();
        assert_eq!(s, State::new(0.01, 0.0, 0.0));

        let s = step(State::new(0.0, 0.0, PI / 2.0), ControlInput::new(1.0, 0.0), 0.01).unwrap();
        assert!(close(s.x, 0.0, 1e-15) && close(s.y, 0.01, 1e-15));
        assert_eq!(s.theta, PI / 2.0);

        let s = step(State::new(1.0, 1.0, 0.0), ControlInput::new(0.0, 0.5), 0.1).unwrap();
        assert_eq!(s, State::new(1.0, 1.0, 0.05));
    }

    #[test]
    fn step_rejects_bad_arguments() {
        let u = ControlInput::new(1.0, 0.0);
        assert!(step(State::new(f64::NAN, 0.0, 0.0), u, 0.01).is_err());
        assert!(step(State::default(), ControlInput::new(f64::INFINITY, 0.0), 0.01).is_err());
        assert!(step(State::default(), u, 0.0).is_err());
        assert!(step(State::default(), u, -0.1).is_err());
    }

    #[test]
    fn euler_converges_at_first_order() {
        // Constant inputs: exact arc solution of the continuous unicycle.
        let (v, w, t_end) = (1.0, 0.8, 2.0);
        let s0 = State::new(0.3, -0.2, 0.4);
        let exact = State::new(
            s0.x + v / w * ((s0.theta + w * t_end).sin() - s0.theta.sin()),
            s0.y - v / w * ((s0.theta + w * t_end).cos() - s0.theta.cos()),
            s0.theta + w * t_end,
        );
        let err = |n: usize| {
            let dt = t_end / n as f64;
            let mut s = s0;
            for _ in 0..n {
                s = step(s, ControlInput::new(v, w), dt).unwrap();
            }
            s.distance_to(&exact)
        };
        for n in [50, 100, 200, 400] {
            let ratio = err(n) / err(2 * n);
            assert!((1.8..=2.2).contains(&ratio), "n={n} ratio={ratio}");
        }
    }

    #[test]
    fn zero_noise_matches_deterministic_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ProcessNoiseParams::default();
        let s = State::new(0.2, -1.0, 2.5);
        let u = ControlInput::new(0.7, -0.3);
        assert_eq!(step_disturbed(s, u, 0.01, &p, &mut rng).unwrap(), step(s, u, 0.01).unwrap());

        let m = MeasurementNoiseParams::default();
        assert_eq!(measure_noisy(&s, &m, &mut rng), measure(&s));
    }

    #[test]
    fn disturbed_step_is_seed_deterministic() {
        let p = ProcessNoiseParams { sigma_v: 0.005, sigma_omega: 0.0349 };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut s = State::default();
            for _ in 0..100 {
                s = step_disturbed(s, ControlInput::new(1.0, 0.2), 0.01, &p, &mut rng).unwrap();
            }
            s
        };
        let (a, b) = (run(), run());
        assert_eq!(a.x.to_bits(), b.x.to_bits());
        assert_eq!(a.y.to_bits(), b.y.to_bits());
        assert_eq!(a.theta.to_bits(), b.theta.to_bits());
    }

    #[test]
    fn disturbed_step_mean_increment() {
        let p = ProcessNoiseParams { sigma_v: 0.005, sigma_omega: 0.0349 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let sum: f64 = (0..n)
            .map(|_| {
                step_disturbed(State::default(), ControlInput::new(1.0, 0.0), 0.01, &p, &mut rng)
                    .unwrap()
                    .x
            })
            .sum();
        let mean = sum / n as f64;
        let tol = 3.0 * 0.01 * 0.005 / (n as f64).sqrt();
        assert!(close(mean, 0.01, tol), "mean {mean}");
    }

    #[test]
    fn measure_examples() {
        let z = measure(&State::new(3.0, 4.0, 1.0));
        assert!(close(z.r, 5.0, 1e-15));
        assert!(close(z.alpha, 4f64.atan2(3.0), 1e-15));
        assert!(close(z.alpha, 0.92730, 1e-5));
        assert_eq!(measure(&State::new(1.0, 0.0, 2.0)), Measurement::new(1.0, 0.0));
        assert_eq!(measure(&State::new(0.0, 0.0, 2.0)), Measurement::new(0.0, 0.0));
        // Second and third quadrant bearings.
        assert!(close(measure(&State::new(-1.0, 1.0, 0.0)).alpha, 3.0 * PI / 4.0, 1e-15));
        assert!(close(measure(&State::new(-1.0, -1.0, 0.0)).alpha, -3.0 * PI / 4.0, 1e-15));
    }

    #[test]
    fn noisy_range_std() {
        let m = MeasurementNoiseParams { sigma_r: 0.1, sigma_alpha: 0.0349 };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = State::new(3.0, 4.0, 0.0);
        let n = 100_000;
        let rs: Vec<f64> = (0..n).map(|_| measure_noisy(&s, &m, &mut rng).r).collect();
        let mean = rs.iter().sum::<f64>() / n as f64;
        let var = rs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(close(var.sqrt(), 0.1, 0.005), "std {}", var.sqrt());
    }

    #[test]
    fn noisy_range_is_clamped() {
        let m = MeasurementNoiseParams { sigma_r: 0.1, sigma_alpha: 0.0349 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = State::new(0.01, 0.0, 0.0);
        for _ in 0..10_000 {
            let z = measure_noisy(&s, &m, &mut rng);
            assert!(z.r >= 0.0);
            assert!(z.alpha > -PI && z.alpha <= PI);
        }
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!(close(wrap_angle(-PI), PI, 1e-15));
        assert!(close(wrap_angle(3.0 * PI), PI, 1e-12));
        assert!(close(wrap_angle(2.0 * PI + 0.1), 0.1, 1e-12));
        assert!(close(wrap_angle(-0.1), -0.1, 1e-15));
    }

    proptest! {
        #[test]
        fn heading_update_is_linear(theta in -10.0..10.0f64, v in -1.0..1.0f64, w in -3.0..3.0f64) {
            let dt = 0.01;
            let s = step(State::new(0.0, 0.0, theta), ControlInput::new(v, w), dt).unwrap();
            prop_assert!((s.theta - theta - dt * w).abs() <= 4.0 * f64::EPSILON * (theta.abs() + 1.0));
        }

        #[test]
        fn measure_inverts_polar(r in 1e-3..100.0f64, alpha in -3.14159..3.14159f64) {
            let z = measure(&State::new(r * alpha.cos(), r * alpha.sin(), 0.0));
            prop_assert!((z.r - r).abs() <= 1e-12 * r.max(1.0));
            prop_assert!((z.alpha - alpha).abs() <= 1e-12);
        }
    }
}
