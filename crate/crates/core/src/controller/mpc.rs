//! Direct multiple-shooting MPC.
//!
//! Decision variables are the stage blocks `z_i = (x_i, y_i, theta_i, v_i,
//! omega_i)` for `i = 0..=N`, with `s_0` pinned to the initial state. The
//! nonlinear program is solved by a primal-dual interior-point method with
//! slack variables for the input box and the squared-distance obstacle
//! constraints. Each Newton system keeps the stage-wise structure of multiple
//! shooting: inequality terms fold into the stage Hessians and the shooting
//! constraints are satisfied to first order by a Riccati recursion. Steps are
//! globalized with an exact-penalty merit function.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix3x2, Matrix5, Vector2, Vector3, Vector5};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::obstacle::ObstacleForecast;
use super::reference::ReferencePoint;
use crate::error::ConfigError;
use crate::vehicle::{self, ControlInput, State};

/// Maximum rotation speed, 140 deg/s.
pub const OMEGA_MAX_DEFAULT: f64 = 140.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Cap on Newton iterations.
    pub max_iterations: usize,
    /// Bound on dynamics defects (m, rad) and obstacle violations (m^2).
    pub kkt_tolerance: f64,
    /// Bound on the reduced Lagrangian gradient with respect to the inputs.
    pub stationarity_tolerance: f64,
    /// Bound on the complementarity products.
    pub complementarity_tolerance: f64,
    /// Barrier parameter for a cold start.
    pub barrier_initial: f64,
    /// Barrier parameter for a warm start.
    pub barrier_warm: f64,
    /// Factor by which the barrier parameter shrinks once a barrier
    /// subproblem is solved.
    pub barrier_decay: f64,
    /// Weight of the `l1` penalty on obstacle-constraint intrusion (in
    /// squared metres). Large enough that the softened constraints are exact
    /// whenever the hard ones can be met.
    pub obstacle_penalty: f64,
    pub warm_start: bool,
    /// A receding-horizon controller also solves from a cold start every
    /// this many slots and keeps the cheaper solution. Zero disables it.
    pub restart_interval: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            kkt_tolerance: 1e-6,
            stationarity_tolerance: 1e-4,
            complementarity_tolerance: 1e-7,
            barrier_initial: 1e-1,
            barrier_warm: 1e-3,
            barrier_decay: 5.0,
            obstacle_penalty: 1e4,
            warm_start: true,
            restart_interval: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    /// Diagonal of the state-error weight.
    pub weight_q: [f64; 3],
    /// Diagonal of the input-error weight.
    pub weight_r: [f64; 2],
    /// Multiplier on the stage cost at `i = N`.
    pub terminal_weight: f64,
    pub v_max: f64,
    pub omega_max: f64,
    /// Physical radius, used for collision scoring.
    pub robot_radius: f64,
    /// Inflated radius used in the obstacle constraints.
    pub safety_margin: f64,
    pub solver: SolverConfig,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 100,
            dt: 0.01,
            weight_q: [10.0, 10.0, 0.1],
            weight_r: [0.1, 0.01],
            terminal_weight: 1.0,
            v_max: 1.0,
            omega_max: OMEGA_MAX_DEFAULT,
            robot_radius: 0.34,
            safety_margin: 0.54,
            solver: SolverConfig::default(),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self, prefix: &str) -> Result<(), ConfigError> {
        let f = |name: &str| format!("{prefix}.{name}");
        if self.horizon < 1 {
            return Err(ConfigError::new(f("horizon"), "must be >= 1"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(ConfigError::new(f("dt"), "must be positive"));
        }
        if self.weight_q.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(ConfigError::new(f("weight_q"), "weights must be finite and non-negative"));
        }
        if self.weight_r.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(ConfigError::new(f("weight_r"), "weights must be finite and non-negative"));
        }
        if !(self.terminal_weight >= 0.0) || !self.terminal_weight.is_finite() {
            return Err(ConfigError::new(f("terminal_weight"), "must be finite and non-negative"));
        }
        if !(self.v_max > 0.0) {
            return Err(ConfigError::new(f("v_max"), "must be positive"));
        }
        if !(self.omega_max > 0.0) {
            return Err(ConfigError::new(f("omega_max"), "must be positive"));
        }
        if !(self.robot_radius >= 0.0) {
            return Err(ConfigError::new(f("robot_radius"), "must be non-negative"));
        }
        if !(self.safety_margin >= self.robot_radius) {
            return Err(ConfigError::new(f("safety_margin"), "must be at least robot_radius"));
        }
        let s = &self.solver;
        let positive = [
            ("solver.kkt_tolerance", s.kkt_tolerance),
            ("solver.stationarity_tolerance", s.stationarity_tolerance),
            ("solver.complementarity_tolerance", s.complementarity_tolerance),
            ("solver.barrier_initial", s.barrier_initial),
            ("solver.barrier_warm", s.barrier_warm),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ConfigError::new(f(name), "must be positive"));
            }
        }
        if !(s.barrier_decay > 1.0) {
            return Err(ConfigError::new(f("solver.barrier_decay"), "must exceed 1"));
        }
        if !(s.obstacle_penalty > 0.0) || !s.obstacle_penalty.is_finite() {
            return Err(ConfigError::new(f("solver.obstacle_penalty"), "must be positive"));
        }
        if s.max_iterations < 1 {
            return Err(ConfigError::new(f("solver.max_iterations"), "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("non-finite cost or iterate")]
    NonFinite,
    #[error("reference window has {got} samples, expected {expected}")]
    ReferenceLength { got: usize, expected: usize },
    #[error("obstacle forecast has {got} steps, expected {expected}")]
    ForecastLength { got: usize, expected: usize },
    #[error("initial state is not finite")]
    InvalidInitial,
}

/// Optimal trajectory and solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub states: Vec<State>,
    pub controls: Vec<ControlInput>,
    pub cost: f64,
    pub iterations: usize,
    /// Largest of the scaled stationarity, feasibility and complementarity
    /// errors; `<= 1` on convergence.
    pub kkt_residual: f64,
    /// Largest dynamics defect (m, rad).
    pub max_defect: f64,
    /// Largest intrusion into an inflated obstacle (m, >= 0).
    pub constraint_violation_max: f64,
    pub converged: bool,
    /// An obstacle constraint was relaxed because the initial state already
    /// violated it.
    pub softened: bool,
    slacks: Vec<f64>,
}

impl MpcSolution {
    /// Tracking cost plus the obstacle penalty on any remaining intrusion.
    pub fn penalized_cost(&self, cfg: &MpcConfig) -> f64 {
        self.cost + cfg.solver.obstacle_penalty * self.constraint_violation_max
    }

    /// Largest `||s_{i+1} - f(s_i, u_i)||_inf` along the trajectory.
    pub fn dynamics_defect(&self, dt: f64) -> f64 {
        self.states
            .windows(2)
            .zip(&self.controls)
            .map(|(s, u)| {
                let next = vehicle::step_unchecked(s[0], *u, dt);
                (s[1].x - next.x).abs().max((s[1].y - next.y).abs()).max((s[1].theta - next.theta).abs())
            })
            .fold(0.0, f64::max)
    }
}

type Block = Vector5<f64>;

const BOX_PER_STAGE: usize = 4;
/// Fraction-to-boundary floor.
const TAU_MIN: f64 = 0.99;
/// Multiplier safeguard band around `mu / t`.
const DUAL_SAFEGUARD: f64 = 1e10;
const ARMIJO: f64 = 1e-4;
const REGULARIZATION: f64 = 1e-9;
const INERTIA_SHIFT_INITIAL: f64 = 1e-6;
const INERTIA_SHIFT_MAX: f64 = 1e8;
const PURSUIT_GAINS: [f64; 2] = [1.0, 2.0];

#[inline]
fn state_of(z: &Block) -> Vector3<f64> {
    Vector3::new(z[0], z[1], z[2])
}

#[inline]
fn dynamics(z: &Block, dt: f64) -> Vector3<f64> {
    let (s, c) = z[2].sin_cos();
    Vector3::new(z[0] + dt * z[3] * c, z[1] + dt * z[3] * s, z[2] + dt * z[4])
}

/// `(df/ds, df/du)` for one stage.
#[inline]
fn dynamics_jacobians(z: &Block, dt: f64) -> (Matrix3<f64>, Matrix3x2<f64>) {
    let (s, c) = z[2].sin_cos();
    #[rustfmt::skip]
    let a = Matrix3::new(
        1.0, 0.0, -dt * z[3] * s,
        0.0, 1.0, dt * z[3] * c,
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

struct Problem<'a> {
    cfg: &'a MpcConfig,
    horizon: usize,
    x0: Vector3<f64>,
    s_ref: Vec<Vector3<f64>>,
    u_ref: Vec<Vector2<f64>>,
    forecast: &'a ObstacleForecast,
    /// Squared inflated radius per obstacle.
    rho2: Vec<f64>,
    /// Per inequality: whether it is an obstacle constraint with an elastic
    /// variable.
    elastic: Vec<bool>,
    u_lo: Vector2<f64>,
    u_hi: Vector2<f64>,
}

/// Per-stage quantities of one Newton system.
#[derive(Clone)]
struct Stage {
    /// Objective gradient.
    grad: Block,
    /// Gradient of the condensed barrier subproblem.
    grad_kkt: Block,
    /// Gauss-Newton Hessian including the inequality terms.
    hess: Matrix5<f64>,
    a: Matrix3<f64>,
    b: Matrix3x2<f64>,
    /// `f(z_i) - s_{i+1}`.
    gap: Vector3<f64>,
}

impl Problem<'_> {
    fn n_obs(&self) -> usize {
        self.rho2.len()
    }

    fn constraints_at(&self, i: usize) -> usize {
        BOX_PER_STAGE + if i >= 1 { self.n_obs() } else { 0 }
    }

    fn offset(&self, i: usize) -> usize {
        BOX_PER_STAGE * i + self.n_obs() * i.saturating_sub(1)
    }

    fn constraint_count(&self) -> usize {
        self.offset(self.horizon + 1)
    }

    /// Value `h <= 0` and gradient of constraint `c` at stage `i`.
    fn constraint(&self, z: &[Block], i: usize, c: usize) -> (f64, Block) {
        let zi = &z[i];
        match c {
            0 => (zi[3] - self.u_hi[0], Block::new(0.0, 0.0, 0.0, 1.0, 0.0)),
            1 => (self.u_lo[0] - zi[3], Block::new(0.0, 0.0, 0.0, -1.0, 0.0)),
            2 => (zi[4] - self.u_hi[1], Block::new(0.0, 0.0, 0.0, 0.0, 1.0)),
            3 => (self.u_lo[1] - zi[4], Block::new(0.0, 0.0, 0.0, 0.0, -1.0)),
            _ => {
                let j = c - BOX_PER_STAGE;
                let o = self.forecast.positions[i][j];
                let dx = zi[0] - o[0];
                let dy = zi[1] - o[1];
                (self.rho2[j] - (dx * dx + dy * dy), Block::new(-2.0 * dx, -2.0 * dy, 0.0, 0.0, 0.0))
            }
        }
    }

    fn stage_weight(&self, i: usize) -> f64 {
        if i == self.horizon {
            self.cfg.terminal_weight
        } else {
            1.0
        }
    }

    fn tracking_cost(&self, z: &[Block]) -> f64 {
        let q = &self.cfg.weight_q;
        let r = &self.cfg.weight_r;
        z.iter()
            .enumerate()
            .map(|(i, zi)| {
                let ds = state_of(zi) - self.s_ref[i];
                let du = Vector2::new(zi[3], zi[4]) - self.u_ref[i];
                self.stage_weight(i)
                    * (q[0] * ds[0] * ds[0] + q[1] * ds[1] * ds[1] + q[2] * ds[2] * ds[2] + r[0] * du[0] * du[0] + r[1] * du[1] * du[1])
            })
            .sum()
    }

    fn gap(&self, z: &[Block], i: usize) -> Vector3<f64> {
        dynamics(&z[i], self.cfg.dt) - state_of(&z[i + 1])
    }

    fn max_defect(&self, z: &[Block]) -> f64 {
        (0..self.horizon).map(|i| self.gap(z, i).amax()).fold(0.0, f64::max)
    }

    /// Residual `h - e` (or `h` for box rows) of inequality `k`, stage `i`,
    /// row `c`, with its gradient in `z_i`.
    fn residual(&self, z: &[Block], e: &[f64], i: usize, c: usize, k: usize) -> (f64, Block) {
        let (h, g) = self.constraint(z, i, c);
        (if self.elastic[k] { h - e[k] } else { h }, g)
    }

    /// `l1` norm of all equality residuals: shooting gaps, `h - e + t` and
    /// `-e + t_e`.
    fn infeasibility_l1(&self, p: &Point<'_>) -> f64 {
        let mut total: f64 = (0..self.horizon).map(|i| self.gap(p.z, i).lp_norm(1)).sum();
        for i in 0..=self.horizon {
            let off = self.offset(i);
            for c in 0..self.constraints_at(i) {
                let k = off + c;
                total += (self.residual(p.z, p.e, i, c, k).0 + p.t[k]).abs();
                if self.elastic[k] {
                    total += (p.te[k] - p.e[k]).abs();
                }
            }
        }
        total
    }

    fn max_clearance_violation(&self, z: &[Block]) -> f64 {
        let mut m: f64 = 0.0;
        for i in 1..=self.horizon {
            for j in 0..self.n_obs() {
                let o = self.forecast.positions[i][j];
                let d = (z[i][0] - o[0]).hypot(z[i][1] - o[1]);
                m = m.max(self.rho2[j].sqrt() - d);
            }
        }
        m
    }

    fn merit(&self, p: &Point<'_>, mu: f64, nu: f64) -> f64 {
        let mut barrier = 0.0;
        let mut penalty = 0.0;
        for k in 0..p.t.len() {
            barrier += p.t[k].ln();
            if self.elastic[k] {
                barrier += p.te[k].ln();
                penalty += p.e[k];
            }
        }
        self.tracking_cost(p.z) + self.cfg.solver.obstacle_penalty * penalty - mu * barrier + nu * self.infeasibility_l1(p)
    }

    /// Objective derivatives and linearized dynamics, without inequality
    /// terms.
    fn linearize(&self, z: &[Block], stages: &mut Vec<Stage>) {
        let q = &self.cfg.weight_q;
        let r = &self.cfg.weight_r;
        let dt = self.cfg.dt;
        stages.clear();
        for (i, zi) in z.iter().enumerate() {
            let w = self.stage_weight(i);
            let ds = state_of(zi) - self.s_ref[i];
            let du = Vector2::new(zi[3], zi[4]) - self.u_ref[i];
            let grad = 2.0 * w * Block::new(q[0] * ds[0], q[1] * ds[1], q[2] * ds[2], r[0] * du[0], r[1] * du[1]);
            let hess = Matrix5::from_diagonal(&(2.0 * w * Block::new(q[0], q[1], q[2], r[0], r[1])));
            let (a, b, gap) = if i < self.horizon {
                let (a, b) = dynamics_jacobians(zi, dt);
                (a, b, self.gap(z, i))
            } else {
                (Matrix3::zeros(), Matrix3x2::zeros(), Vector3::zeros())
            };
            stages.push(Stage { grad, grad_kkt: grad, hess, a, b, gap });
        }
    }

    /// Largest reduced Lagrangian gradient with respect to the inputs, with
    /// the shooting multipliers taken from the adjoint recursion. Also returns
    /// those multipliers; entry `i` belongs to the gap of stage `i`.
    fn stationarity(&self, z: &[Block], stages: &[Stage], lam: &[f64]) -> (f64, Vec<Vector3<f64>>) {
        let n = self.horizon;
        let lagrangian_grad = |i: usize| -> Block {
            let mut g = stages[i].grad;
            let off = self.offset(i);
            for c in 0..self.constraints_at(i) {
                g += self.constraint(z, i, c).1 * lam[off + c];
            }
            g
        };
        let g = lagrangian_grad(n);
        let mut worst = g[3].abs().max(g[4].abs());
        let mut adjoint = Vector3::new(g[0], g[1], g[2]);
        let mut costates = vec![Vector3::zeros(); n];
        for i in (0..n).rev() {
            let st = &stages[i];
            costates[i] = adjoint;
            let g = lagrangian_grad(i);
            let gu = Vector2::new(g[3], g[4]) + st.b.transpose() * adjoint;
            worst = worst.max(gu.amax());
            adjoint = Vector3::new(g[0], g[1], g[2]) + st.a.transpose() * adjoint;
        }
        (worst, costates)
    }

    /// Solves the structured Newton system with `shift` added to every stage
    /// Hessian. Returns the primal step and the largest shooting multiplier
    /// of the subproblem, or `None` when the reduced Hessian is not positive
    /// definite.
    fn riccati(&self, stages: &[Stage], shift: f64) -> Option<(Vec<Block>, f64)> {
        let n = self.horizon;
        let mut gains: Vec<(Matrix2x3<f64>, Vector2<f64>)> = vec![(Matrix2x3::zeros(), Vector2::zeros()); n];
        let mut cost_to_go: Vec<(Matrix3<f64>, Vector3<f64>)> = vec![(Matrix3::zeros(), Vector3::zeros()); n + 1];

        let last = &stages[n];
        let mut p: Matrix3<f64> = last.hess.fixed_view::<3, 3>(0, 0).into_owned() + Matrix3::identity() * shift;
        let mut pv = Vector3::new(last.grad_kkt[0], last.grad_kkt[1], last.grad_kkt[2]);
        cost_to_go[n] = (p, pv);
        for i in (0..n).rev() {
            let st = &stages[i];
            let hss = st.hess.fixed_view::<3, 3>(0, 0).into_owned() + Matrix3::identity() * shift;
            let hus = st.hess.fixed_view::<2, 3>(3, 0).into_owned();
            let huu = st.hess.fixed_view::<2, 2>(3, 3).into_owned();
            let pa = p * st.a;
            let lin = p * st.gap + pv;
            let quu = huu + st.b.transpose() * p * st.b + Matrix2::identity() * (REGULARIZATION + shift);
            let qus = hus + st.b.transpose() * pa;
            let qss = hss + st.a.transpose() * pa;
            let qu = Vector2::new(st.grad_kkt[3], st.grad_kkt[4]) + st.b.transpose() * lin;
            let qs = Vector3::new(st.grad_kkt[0], st.grad_kkt[1], st.grad_kkt[2]) + st.a.transpose() * lin;
            let chol = quu.cholesky()?;
            let k_fb = -chol.solve(&qus);
            let k_ff = -chol.solve(&qu);
            p = qss + qus.transpose() * k_fb;
            p = (p + p.transpose()) * 0.5;
            pv = qs + qus.transpose() * k_ff;
            gains[i] = (k_fb, k_ff);
            cost_to_go[i] = (p, pv);
        }

        let mut dz = vec![Block::zeros(); n + 1];
        let mut ds = Vector3::zeros();
        let mut multiplier_max: f64 = 0.0;
        for i in 0..=n {
            let du = if i < n {
                gains[i].0 * ds + gains[i].1
            } else {
                let h = stages[n].hess.fixed_view::<2, 2>(3, 3).into_owned() + Matrix2::identity() * (REGULARIZATION + shift);
                let g = Vector2::new(stages[n].grad_kkt[3], stages[n].grad_kkt[4]);
                -h.cholesky()?.solve(&g)
            };
            dz[i] = Block::new(ds[0], ds[1], ds[2], du[0], du[1]);
            if i < n {
                let st = &stages[i];
                ds = st.a * ds + st.b * du + st.gap;
                let (p, pv) = &cost_to_go[i + 1];
                multiplier_max = multiplier_max.max((p * ds + pv).amax());
            }
        }
        Some((dz, multiplier_max))
    }
}

/// Interior-point iterate. `e`, `te` and `lam_e` are the elastic variable,
/// its slack and its bound multiplier; they are unused on box rows.
#[derive(Clone)]
struct Iterate {
    z: Vec<Block>,
    t: Vec<f64>,
    lam: Vec<f64>,
    e: Vec<f64>,
    te: Vec<f64>,
    lam_e: Vec<f64>,
    mu: f64,
}

impl Iterate {
    fn point(&self) -> Point<'_> {
        Point { z: &self.z, t: &self.t, e: &self.e, te: &self.te }
    }
}

/// Solves the tracking problem from `initial` over the window `refs`
/// (`N + 1` samples) with obstacle forecast `obstacles` (`N + 1` steps, or
/// empty).
///
/// `warm` is the previous slot's solution; it is shifted by one step.
pub fn solve_mpc(
    initial: &State,
    refs: &[ReferencePoint],
    obstacles: &ObstacleForecast,
    cfg: &MpcConfig,
    warm: Option<&MpcSolution>,
) -> Result<MpcSolution, SolverError> {
    let n = cfg.horizon;
    if refs.len() != n + 1 {
        return Err(SolverError::ReferenceLength { got: refs.len(), expected: n + 1 });
    }
    if !obstacles.is_empty() && obstacles.positions.len() != n + 1 {
        return Err(SolverError::ForecastLength { got: obstacles.positions.len(), expected: n + 1 });
    }
    if !initial.is_finite() {
        return Err(SolverError::InvalidInitial);
    }
    let sc = &cfg.solver;
    let n_obs = obstacles.obstacle_count();

    let branch = heading_branch(initial.theta, refs[0].state.theta);
    let s_ref: Vec<Vector3<f64>> = refs.iter().map(|r| Vector3::new(r.state.x, r.state.y, r.state.theta + branch)).collect();
    let u_ref: Vec<Vector2<f64>> = refs
        .iter()
        .map(|r| Vector2::new(r.input.v.clamp(-cfg.v_max, cfg.v_max), r.input.omega.clamp(-cfg.omega_max, cfg.omega_max)))
        .collect();

    let mut softened = false;
    let rho2: Vec<f64> = (0..n_obs)
        .map(|j| {
            let rho = cfg.safety_margin + obstacles.radii[j];
            let o = obstacles.positions[0][j];
            if (initial.x - o[0]).hypot(initial.y - o[1]) < rho {
                softened = true;
            }
            rho * rho
        })
        .collect();
    let elastic: Vec<bool> = (0..=n)
        .flat_map(|i| {
            let extra = if i >= 1 { n_obs } else { 0 };
            std::iter::repeat_n(false, BOX_PER_STAGE).chain(std::iter::repeat_n(true, extra))
        })
        .collect();

    let problem = Problem {
        cfg,
        horizon: n,
        x0: initial.to_vector(),
        s_ref,
        u_ref,
        forecast: obstacles,
        rho2,
        elastic,
        u_lo: Vector2::new(-cfg.v_max, -cfg.omega_max),
        u_hi: Vector2::new(cfg.v_max, cfg.omega_max),
    };

    let mut it = initial_iterate(&problem, initial, warm.filter(|_| sc.warm_start));
    let m = problem.constraint_count();
    let mu_min = 0.1 * sc.complementarity_tolerance.min(sc.kkt_tolerance.max(1e-12));
    let penalty = sc.obstacle_penalty;

    let mut stages = Vec::with_capacity(n + 1);
    let mut values = vec![0.0; m];
    let mut grads = vec![Block::zeros(); m];
    // Per elastic row: (sigma, sigma_e, e-gradient) of the condensed system.
    let mut elastic_terms = vec![(0.0, 0.0, 0.0); m];
    let mut dt_step = vec![0.0; m];
    let mut dlam = vec![0.0; m];
    let mut de_step = vec![0.0; m];
    let mut dte_step = vec![0.0; m];
    let mut dlam_e = vec![0.0; m];
    let mut trial = it.clone();
    let mut nu: f64 = 1.0;
    let mut iterations = 0usize;
    let mut converged = false;
    let mut kkt_residual;

    loop {
        problem.linearize(&it.z, &mut stages);
        for i in 0..=n {
            let off = problem.offset(i);
            for c in 0..problem.constraints_at(i) {
                let (v, g) = problem.residual(&it.z, &it.e, i, c, off + c);
                values[off + c] = v;
                grads[off + c] = g;
            }
        }

        // Convergence measures.
        let (mut stationarity, costates) = problem.stationarity(&it.z, &stages, &it.lam);
        let mut violation = values.iter().fold(0.0f64, |acc, v| acc.max(*v));
        let mut slack_residual = values.iter().zip(&it.t).map(|(v, t)| (v + t).abs()).fold(0.0, f64::max);
        let mut complementarity = it.lam.iter().zip(&it.t).map(|(l, t)| l * t).fold(0.0, f64::max);
        let mut barrier_error = it.lam.iter().zip(&it.t).map(|(l, t)| (l * t - it.mu).abs()).fold(0.0, f64::max);
        for k in (0..m).filter(|k| problem.elastic[*k]) {
            stationarity = stationarity.max((penalty - it.lam[k] - it.lam_e[k]).abs());
            violation = violation.max(-it.e[k]);
            slack_residual = slack_residual.max((it.te[k] - it.e[k]).abs());
            complementarity = complementarity.max(it.lam_e[k] * it.te[k]);
            barrier_error = barrier_error.max((it.lam_e[k] * it.te[k] - it.mu).abs());
        }
        let defect = problem.max_defect(&it.z);
        kkt_residual = (stationarity / sc.stationarity_tolerance)
            .max(defect / sc.kkt_tolerance)
            .max(violation / sc.kkt_tolerance)
            .max(complementarity / sc.complementarity_tolerance);
        if kkt_residual <= 1.0 {
            converged = true;
            break;
        }
        if iterations >= sc.max_iterations {
            break;
        }

        // Shrink the barrier once its subproblem is solved well enough.
        let sub_error = (stationarity / sc.stationarity_tolerance.max(1.0))
            .max(defect.max(slack_residual))
            .max(barrier_error);
        if sub_error <= 10.0 * it.mu && it.mu > mu_min {
            it.mu = (it.mu / sc.barrier_decay).min(it.mu.powf(1.5)).max(mu_min);
        }
        let mu = it.mu;
        iterations += 1;

        for i in 0..=n {
            let off = problem.offset(i);
            let st = &mut stages[i];
            for c in 0..problem.constraints_at(i) {
                let k = off + c;
                let (t, lam, g) = (it.t[k], it.lam[k], grads[k]);
                let sigma = lam / t;
                let r = lam + sigma * (values[k] + t) + (mu - lam * t) / t;
                if problem.elastic[k] {
                    // Eliminate the elastic variable from its two rows.
                    let (te, lam_e) = (it.te[k], it.lam_e[k]);
                    let sigma_e = lam_e / te;
                    let r_e = lam_e + sigma_e * (te - it.e[k]) + (mu - lam_e * te) / te;
                    let g_e = penalty - r - r_e;
                    let h_ee = sigma + sigma_e;
                    st.hess += g * g.transpose() * (sigma * sigma_e / h_ee);
                    st.grad_kkt += g * (r + sigma * g_e / h_ee);
                    elastic_terms[k] = (sigma, sigma_e, g_e);
                } else {
                    st.hess += g * g.transpose() * sigma;
                    st.grad_kkt += g * r;
                }
            }
            if i < n {
                add_dynamics_curvature(&mut st.hess, &it.z[i], &costates[i], cfg.dt);
            }
        }
        let mut shift = 0.0;
        let (dz, multiplier_max) = loop {
            if let Some(step) = problem.riccati(&stages, shift) {
                break step;
            }
            shift = if shift == 0.0 { INERTIA_SHIFT_INITIAL } else { shift * 10.0 };
            if shift > INERTIA_SHIFT_MAX {
                return Err(SolverError::NonFinite);
            }
        };

        let tau = TAU_MIN.max(1.0 - mu);
        let mut alpha_pri: f64 = 1.0;
        let mut alpha_dual: f64 = 1.0;
        let boundary = |value: f64, step: f64, alpha: &mut f64| {
            if step < 0.0 {
                *alpha = alpha.min(-tau * value / step);
            }
        };
        for i in 0..=n {
            let off = problem.offset(i);
            for c in 0..problem.constraints_at(i) {
                let k = off + c;
                let (t, lam) = (it.t[k], it.lam[k]);
                let mut lin = grads[k].dot(&dz[i]);
                if problem.elastic[k] {
                    let (sigma, sigma_e, g_e) = elastic_terms[k];
                    let de = -(g_e - sigma * lin) / (sigma + sigma_e);
                    lin -= de;
                    de_step[k] = de;
                    let (te, lam_e) = (it.te[k], it.lam_e[k]);
                    let rp_e = te - it.e[k];
                    dte_step[k] = -rp_e + de;
                    dlam_e[k] = sigma_e * (rp_e - de) + (mu - lam_e * te) / te;
                    boundary(te, dte_step[k], &mut alpha_pri);
                    boundary(lam_e, dlam_e[k], &mut alpha_dual);
                }
                let rp = values[k] + t;
                dt_step[k] = -rp - lin;
                dlam[k] = lam / t * (lin + rp) + (mu - lam * t) / t;
                boundary(t, dt_step[k], &mut alpha_pri);
                boundary(lam, dlam[k], &mut alpha_dual);
            }
        }

        let new_dual_max = (0..m).map(|k| (it.lam[k] + dlam[k]).abs().max((it.lam_e[k] + dlam_e[k]).abs())).fold(0.0, f64::max);
        nu = nu.max(multiplier_max.max(new_dual_max) + 1.0);
        let base = problem.merit(&it.point(), mu, nu);
        if !base.is_finite() {
            return Err(SolverError::NonFinite);
        }
        let mut slope = stages.iter().zip(&dz).map(|(s, d)| s.grad.dot(d)).sum::<f64>() - nu * problem.infeasibility_l1(&it.point());
        for k in 0..m {
            slope -= mu * dt_step[k] / it.t[k];
            if problem.elastic[k] {
                slope += penalty * de_step[k] - mu * dte_step[k] / it.te[k];
            }
        }

        let mut alpha = alpha_pri;
        let mut accepted = false;
        for _ in 0..50 {
            for ((zt, zi), di) in trial.z.iter_mut().zip(&it.z).zip(&dz) {
                *zt = zi + di * alpha;
            }
            for k in 0..m {
                trial.t[k] = it.t[k] + alpha * dt_step[k];
                if problem.elastic[k] {
                    trial.e[k] = it.e[k] + alpha * de_step[k];
                    trial.te[k] = it.te[k] + alpha * dte_step[k];
                }
            }
            let val = problem.merit(&trial.point(), mu, nu);
            if val.is_finite() && val <= base + ARMIJO * alpha * slope.min(0.0) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            log::debug!("mpc line search failed after {iterations} iterations");
            break;
        }
        std::mem::swap(&mut it.z, &mut trial.z);
        std::mem::swap(&mut it.t, &mut trial.t);
        std::mem::swap(&mut it.e, &mut trial.e);
        std::mem::swap(&mut it.te, &mut trial.te);
        let safeguard = |lam: f64, step: f64, t: f64| {
            (lam + alpha_dual * step).max(f64::MIN_POSITIVE).clamp(mu / (DUAL_SAFEGUARD * t), DUAL_SAFEGUARD * mu / t)
        };
        for k in 0..m {
            it.lam[k] = safeguard(it.lam[k], dlam[k], it.t[k]);
            if problem.elastic[k] {
                it.lam_e[k] = safeguard(it.lam_e[k], dlam_e[k], it.te[k]);
            }
        }
    }

    let z = &it.z;
    let cost = problem.tracking_cost(z);
    if !cost.is_finite() || z.iter().any(|b| !b.iter().all(|v| v.is_finite())) {
        return Err(SolverError::NonFinite);
    }
    Ok(MpcSolution {
        states: z.iter().map(|b| State::new(b[0], b[1], b[2])).collect(),
        controls: z.iter().map(|b| ControlInput::new(b[3], b[4]).saturate(cfg.v_max, cfg.omega_max)).collect(),
        cost,
        iterations,
        kkt_residual,
        max_defect: problem.max_defect(z),
        constraint_violation_max: problem.max_clearance_violation(z).max(0.0),
        converged,
        softened,
        slacks: it.t,
    })
}

/// Primal variables seen by the merit function.
struct Point<'a> {
    z: &'a [Block],
    t: &'a [f64],
    e: &'a [f64],
    te: &'a [f64],
}

/// Adds the second derivatives of `costate' f(z)` to a stage Hessian.
fn add_dynamics_curvature(hess: &mut Matrix5<f64>, z: &Block, costate: &Vector3<f64>, dt: f64) {
    let (s, c) = z[2].sin_cos();
    let v = z[3];
    hess[(2, 2)] -= dt * v * (costate[0] * c + costate[1] * s);
    let cross = dt * (costate[1] * c - costate[0] * s);
    hess[(2, 3)] += cross;
    hess[(3, 2)] += cross;
}

/// Multiple of `2 pi` that brings `reference` closest to `current`.
fn heading_branch(current: f64, reference: f64) -> f64 {
    let tau = 2.0 * std::f64::consts::PI;
    tau * ((current - reference) / tau).round()
}

/// Reference input plus a proportional pursuit of the reference position,
/// used to roll out a cold-start guess.
fn pursuit_guess(problem: &Problem<'_>, s: &State, i: usize) -> ControlInput {
    let target = problem.s_ref[i];
    let (dx, dy) = (target[0] - s.x, target[1] - s.y);
    let distance = dx.hypot(dy);
    let (along, heading_error) = if distance < 1e-9 {
        (0.0, target[2] - s.theta)
    } else {
        let e = vehicle::wrap_angle(dy.atan2(dx) - s.theta);
        (distance * e.cos(), e)
    };
    let u = ControlInput::new(problem.u_ref[i][0] + PURSUIT_GAINS[0] * along, problem.u_ref[i][1] + PURSUIT_GAINS[1] * heading_error);
    u.saturate(problem.cfg.v_max, problem.cfg.omega_max)
}

fn initial_iterate(problem: &Problem<'_>, initial: &State, warm: Option<&MpcSolution>) -> Iterate {
    let n = problem.horizon;
    let dt = problem.cfg.dt;
    let sc = &problem.cfg.solver;
    let m = problem.constraint_count();
    let warm = warm.filter(|p| p.states.len() == n + 1 && p.slacks.len() == m);
    let (mut z, mu) = match warm {
        Some(prev) => {
            let mut z: Vec<Block> = (0..=n)
                .map(|i| {
                    let k = (i + 1).min(n);
                    let s = prev.states[k];
                    let u = prev.controls[k];
                    Block::new(s.x, s.y, s.theta, u.v, u.omega)
                })
                .collect();
            // The repeated tail node is advanced with its own control.
            let tail = dynamics(&z[n - 1], dt);
            z[n].fixed_rows_mut::<3>(0).copy_from(&tail);
            let shift = heading_branch(initial.theta, z[0][2]);
            if shift != 0.0 {
                z.iter_mut().for_each(|b| b[2] += shift);
            }
            (z, sc.barrier_warm)
        }
        None => {
            let mut z = Vec::with_capacity(n + 1);
            let mut s = *initial;
            for i in 0..=n {
                let u = pursuit_guess(problem, &s, i);
                z.push(Block::new(s.x, s.y, s.theta, u.v, u.omega));
                s = vehicle::step_unchecked(s, u, dt);
            }
            (z, sc.barrier_initial)
        }
    };
    z[0].fixed_rows_mut::<3>(0).copy_from(&problem.x0);

    // Keep the inputs strictly inside the box.
    let push = 1e-8;
    for zi in z.iter_mut() {
        for r in 0..2 {
            let (lo, hi) = (problem.u_lo[r], problem.u_hi[r]);
            let margin = push * (hi - lo);
            zi[3 + r] = zi[3 + r].clamp(lo + margin, hi - margin);
        }
    }

    let floor = mu.sqrt() * 0.1;
    let mut t = vec![0.0; m];
    let mut lam = vec![0.0; m];
    let mut e = vec![0.0; m];
    let mut te = vec![1.0; m];
    let mut lam_e = vec![0.0; m];
    for i in 0..=n {
        let off = problem.offset(i);
        for c in 0..problem.constraints_at(i) {
            let k = off + c;
            let h = problem.constraint(&z, i, c).0;
            if problem.elastic[k] && warm.is_some() {
                e[k] = h.max(0.0) + floor;
                te[k] = e[k];
                lam_e[k] = mu / te[k];
                t[k] = e[k] - h;
                lam[k] = mu / t[k];
            } else if problem.elastic[k] {
                // Start on the central path of the elastic pair, with
                // lam + lam_e equal to the penalty weight.
                let penalty = problem.cfg.solver.obstacle_penalty;
                let slack = (-h).max(floor);
                lam[k] = (mu / slack).min(0.5 * penalty);
                lam_e[k] = penalty - lam[k];
                e[k] = h.max(0.0) + mu / lam_e[k];
                te[k] = e[k];
                t[k] = e[k] - h;
            } else {
                t[k] = (-h).max(floor);
                lam[k] = mu / t[k];
            }
        }
    }
    Iterate { z, t, lam, e, te, lam_e, mu }
}

/// Cost of rolling `controls` forward from `initial` through the nominal
/// dynamics, with the same weights as [`solve_mpc`].
pub fn rollout_cost(initial: &State, controls: &[ControlInput], refs: &[ReferencePoint], cfg: &MpcConfig) -> f64 {
    let branch = heading_branch(initial.theta, refs[0].state.theta);
    let q = &cfg.weight_q;
    let r = &cfg.weight_r;
    let mut s = *initial;
    let mut cost = 0.0;
    for (i, (u, rf)) in controls.iter().zip(refs).enumerate() {
        let w = if i == cfg.horizon { cfg.terminal_weight } else { 1.0 };
        let ur = ControlInput::new(rf.input.v.clamp(-cfg.v_max, cfg.v_max), rf.input.omega.clamp(-cfg.omega_max, cfg.omega_max));
        let dth = s.theta - (rf.state.theta + branch);
        cost += w
            * (q[0] * (s.x - rf.state.x).powi(2)
                + q[1] * (s.y - rf.state.y).powi(2)
                + q[2] * dth * dth
                + r[0] * (u.v - ur.v).powi(2)
                + r[1] * (u.omega - ur.omega).powi(2));
        s = vehicle::step_unchecked(s, *u, cfg.dt);
    }
    cost
}
