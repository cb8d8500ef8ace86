//! Tracking controllers: multiple-shooting MPC with obstacle avoidance, and
//! PID and LQR baselines without it.

pub mod lqr;
pub mod mpc;
pub mod obstacle;
pub mod pid;
pub mod reference;

pub use lqr::{lqr_baseline, solve_dare, LqrController, LqrWeights, RiccatiDivergence};
pub use mpc::{rollout_cost, solve_mpc, MpcConfig, MpcSolution, SolverConfig, SolverError, OMEGA_MAX_DEFAULT};
pub use obstacle::{predict_obstacles, Obstacle, ObstacleForecast, ObstacleKind};
pub use pid::{pid_baseline, PidController, PidGains};
pub use reference::{reference_window, ReferencePoint, ReferenceTrajectory};
