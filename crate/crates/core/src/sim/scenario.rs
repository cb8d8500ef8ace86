//! Scenario description and the bundled presets.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::channel::LinkConfig;
use crate::controller::{LqrWeights, MpcConfig, Obstacle, PidGains, ReferenceTrajectory};
use crate::error::ConfigError;
use crate::vehicle::{MeasurementNoiseParams, ProcessNoiseParams, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    #[default]
    Mpc,
    Pid,
    Lqr,
}

impl ControllerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::Mpc => "mpc",
            ControllerKind::Pid => "pid",
            ControllerKind::Lqr => "lqr",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mpc" => Ok(ControllerKind::Mpc),
            "pid" => Ok(ControllerKind::Pid),
            "lqr" => Ok(ControllerKind::Lqr),
            other => Err(format!("unknown controller `{other}` (expected mpc, pid or lqr)")),
        }
    }
}

/// How the controller's processing time enters the control-to-actuator path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingMode {
    /// `processing_delay_slots` extra slots, always.
    #[default]
    Fixed,
    /// The measured solve time rounded up to whole slots, at least
    /// `processing_delay_slots`. Not reproducible across machines.
    WallClock,
}

/// Input the estimator's time update uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EkfInput {
    /// The control the controller itself designated for the slot.
    #[default]
    Emitted,
    /// The input the actuator actually applied. Assumes a feedback path the
    /// network does not model.
    Applied,
}

/// Everything one closed-loop run needs. `mpc.dt` is overridden by `dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub task: ReferenceTrajectory,
    /// Simulated time in seconds; an integral number of slots.
    pub t_sim: f64,
    /// Sampling slot in seconds.
    pub dt: f64,
    pub initial_state: State,
    /// Diagonal of the initial estimate covariance.
    pub initial_variances: [f64; 3],
    pub process_noise: ProcessNoiseParams,
    pub measurement_noise: MeasurementNoiseParams,
    pub sc_link: LinkConfig,
    pub ca_link: LinkConfig,
    pub obstacles: Vec<Obstacle>,
    pub controller: ControllerKind,
    pub mpc: MpcConfig,
    pub pid: PidGains,
    pub lqr: LqrWeights,
    pub processing_delay_slots: usize,
    pub timing: TimingMode,
    pub ekf_input: EkfInput,
    /// MPC keeps the controls it already sent for the slots a delayed
    /// sequence could still cover, and optimizes from the state they lead to.
    pub input_commitment: bool,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::point_nominal()
    }
}

pub const NOMINAL_PROCESS_NOISE: ProcessNoiseParams = ProcessNoiseParams { sigma_v: 0.005, sigma_omega: 0.0349 };
pub const NOMINAL_MEASUREMENT_NOISE: MeasurementNoiseParams = MeasurementNoiseParams { sigma_r: 0.1, sigma_alpha: 0.0349 };

/// 15 dB, up to 50 ms at 10 ms slots.
pub fn nominal_sc_link() -> LinkConfig {
    LinkConfig::new(15.0, 5)
}

/// 20 dB, up to 10 ms at 10 ms slots.
pub fn nominal_ca_link() -> LinkConfig {
    LinkConfig::new(20.0, 1)
}

impl ScenarioConfig {
    fn nominal(name: &str, task: ReferenceTrajectory, t_sim: f64, initial_state: State, obstacles: Vec<Obstacle>) -> Self {
        Self {
            name: name.to_string(),
            task,
            t_sim,
            dt: 0.01,
            initial_state,
            initial_variances: [1e-4; 3],
            process_noise: NOMINAL_PROCESS_NOISE,
            measurement_noise: NOMINAL_MEASUREMENT_NOISE,
            sc_link: nominal_sc_link(),
            ca_link: nominal_ca_link(),
            obstacles,
            controller: ControllerKind::Mpc,
            mpc: MpcConfig::default(),
            pid: PidGains::default(),
            lqr: LqrWeights::default(),
            processing_delay_slots: 0,
            timing: TimingMode::Fixed,
            ekf_input: EkfInput::Emitted,
            input_commitment: true,
            seed: 0,
        }
    }

    /// Park at `(1.5, 1.5, 0)` from the origin past one static obstacle.
    pub fn point_nominal() -> Self {
        Self::nominal(
            "point_nominal",
            ReferenceTrajectory::Point { goal: State::new(1.5, 1.5, 0.0) },
            20.0,
            State::new(0.0, 0.0, 0.0),
            vec![Obstacle::fixed(0.5, 0.5, 0.15)],
        )
    }

    /// Radius-5 circle in 50 s among four static and four moving obstacles.
    pub fn circle_nominal() -> Self {
        Self::nominal(
            "circle_nominal",
            ReferenceTrajectory::Circle { radius: 5.0, period: 50.0 },
            50.0,
            State::new(5.0, 0.0, FRAC_PI_2),
            vec![
                Obstacle::fixed(0.0, 5.2, 0.15),
                Obstacle::fixed(0.0, 4.5, 0.5),
                Obstacle::fixed(-4.75, 0.0, 0.15),
                Obstacle::fixed(-4.5, -4.5, 0.5),
                Obstacle::moving(7.0, -2.5, PI, 0.25, 0.25),
                Obstacle::moving(1.0, -1.0, FRAC_PI_2, 0.5, 0.15),
                Obstacle::moving(-1.5, 6.0, -FRAC_PI_2, 0.2, 0.1),
                Obstacle::moving(6.5, 3.0, -PI, 0.5, 0.15),
            ],
        )
    }

    /// Amplitude-5 figure eight in 50 s among four static and four moving
    /// obstacles.
    pub fn eight_nominal() -> Self {
        Self::nominal(
            "eight_nominal",
            ReferenceTrajectory::Eight { amplitude: 5.0, period: 50.0 },
            50.0,
            State::new(0.0, 0.0, FRAC_PI_4),
            vec![
                Obstacle::fixed(2.7, 1.7, 0.5),
                Obstacle::fixed(5.0, 0.0, 0.1),
                Obstacle::fixed(-1.9, 1.4, 0.3),
                Obstacle::fixed(-5.0, 0.0, 0.15),
                Obstacle::moving(0.5, 2.5, PI, 0.25, 0.25),
                Obstacle::moving(4.0, 0.0, FRAC_PI_2, 0.5, 0.15),
                Obstacle::moving(-1.5, 6.0, -FRAC_PI_2, 0.2, 0.1),
                Obstacle::moving(6.5, 3.0, -PI, 0.5, 0.15),
            ],
        )
    }

    /// Preset by task name: `point`, `circle` or `eight`.
    pub fn preset(task: &str) -> Option<Self> {
        match task {
            "point" => Some(Self::point_nominal()),
            "circle" => Some(Self::circle_nominal()),
            "eight" => Some(Self::eight_nominal()),
            _ => None,
        }
    }

    /// Zero noise, lossless and delay-free links.
    pub fn idealized(mut self) -> Self {
        self.process_noise = ProcessNoiseParams::default();
        self.measurement_noise = MeasurementNoiseParams::default();
        self.sc_link = LinkConfig::perfect();
        self.ca_link = LinkConfig::perfect();
        self.processing_delay_slots = 0;
        self
    }

    /// Slots of previously sent controls the MPC keeps: the worst-case
    /// control-to-actuator latency, or zero without commitment.
    pub fn commitment_slots(&self) -> usize {
        if self.input_commitment {
            self.ca_link.max_delay_slots as usize + self.processing_delay_slots
        } else {
            0
        }
    }

    /// Number of slots simulated.
    pub fn steps(&self) -> usize {
        (self.t_sim / self.dt).round() as usize
    }

    /// The MPC settings with the scenario's slot length.
    pub fn mpc_config(&self) -> MpcConfig {
        MpcConfig { dt: self.dt, ..self.mpc }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(ConfigError::new("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.t_sim > 0.0) || !self.t_sim.is_finite() {
            return Err(ConfigError::new("t_sim", format!("must be positive, got {}", self.t_sim)));
        }
        let slots = self.t_sim / self.dt;
        if (slots - slots.round()).abs() > 1e-6 * slots.max(1.0) {
            return Err(ConfigError::new("t_sim", format!("must be a whole number of slots of dt = {}", self.dt)));
        }
        match self.task {
            ReferenceTrajectory::Point { goal } => {
                if !goal.is_finite() {
                    return Err(ConfigError::new("task.goal", "must be finite"));
                }
            }
            ReferenceTrajectory::Circle { radius, period } => {
                if !(radius > 0.0) || !radius.is_finite() {
                    return Err(ConfigError::new("task.radius", format!("must be positive, got {radius}")));
                }
                if !(period > 0.0) || !period.is_finite() {
                    return Err(ConfigError::new("task.period", format!("must be positive, got {period}")));
                }
            }
            ReferenceTrajectory::Eight { amplitude, period } => {
                if !(amplitude > 0.0) || !amplitude.is_finite() {
                    return Err(ConfigError::new("task.amplitude", format!("must be positive, got {amplitude}")));
                }
                if !(period > 0.0) || !period.is_finite() {
                    return Err(ConfigError::new("task.period", format!("must be positive, got {period}")));
                }
            }
        }
        if !self.initial_state.is_finite() {
            return Err(ConfigError::new("initial_state", "must be finite"));
        }
        if self.initial_variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(ConfigError::new("initial_variances", "must be positive"));
        }
        let noise = [
            ("process_noise.sigma_v", self.process_noise.sigma_v),
            ("process_noise.sigma_omega", self.process_noise.sigma_omega),
            ("measurement_noise.sigma_r", self.measurement_noise.sigma_r),
            ("measurement_noise.sigma_alpha", self.measurement_noise.sigma_alpha),
        ];
        for (field, value) in noise {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(ConfigError::new(field, format!("must be finite and non-negative, got {value}")));
            }
        }
        self.sc_link.validate("sc_link")?;
        self.ca_link.validate("ca_link")?;
        for (i, o) in self.obstacles.iter().enumerate() {
            o.validate(&format!("obstacles[{i}]"))?;
        }
        self.mpc_config().validate("mpc")?;
        self.pid.validate("pid")?;
        self.lqr.validate("lqr")?;
        Ok(())
    }
}
