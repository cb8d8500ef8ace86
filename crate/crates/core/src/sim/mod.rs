//! Closed-loop simulation of the networked control loop.
//!
//! Each slot runs, in order: sensing and uplink transmission, the
//! controller-side smart receiver, measurement compensation and the EKF, the
//! controller, downlink transmission, the actuator and the plant step.

pub mod metrics;
pub mod rng;
pub mod scenario;
pub mod trace;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channel::Channel;
use crate::controller::{
    predict_obstacles, reference_window, solve_mpc, LqrController, MpcSolution, PidController, ReferencePoint,
};
use crate::error::Error;
use crate::estimator::{self, EkfBelief, EkfNoise};
use crate::link::{compensate_measurement, Actuator, ControlSequence, HistoryBuffer, Packet, SmartReceiver};
use crate::vehicle::{self, ControlInput, Measurement, State};

pub use metrics::{compute_metrics, Metrics, STEADY_STATE_FRACTION};
pub use rng::{rng_streams, stream, RngStreams, StreamName};
pub use scenario::{
    nominal_ca_link, nominal_sc_link, ControllerKind, EkfInput, ScenarioConfig, TimingMode, NOMINAL_MEASUREMENT_NOISE,
    NOMINAL_PROCESS_NOISE,
};
pub use trace::{TraceRow, TRACE_COLUMNS};

/// Packet accounting for one link. `sent = delivered + lost + in_flight`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LinkStats {
    pub sent: usize,
    /// Packets that reached the receiver, whether or not it kept them.
    pub delivered: usize,
    pub lost: usize,
    /// Packets still travelling when the run ended.
    pub in_flight: usize,
}

/// Wall-clock controller timing. Machine dependent and kept out of traces.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverTiming {
    pub mean_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Metrics,
    pub timing: SolverTiming,
    pub sc_link: LinkStats,
    pub ca_link: LinkStats,
    /// Fresh measurements the estimator could not use.
    pub estimator_skips: usize,
    pub trace: Vec<TraceRow>,
}

/// Packets in transit, keyed by arrival slot.
struct InFlight<T> {
    queue: BTreeMap<usize, Vec<Packet<T>>>,
    stats: LinkStats,
}

impl<T> InFlight<T> {
    fn new() -> Self {
        Self { queue: BTreeMap::new(), stats: LinkStats::default() }
    }

    fn send(&mut self, packet: Packet<T>, lost: bool, arrival: usize) {
        self.stats.sent += 1;
        if lost {
            self.stats.lost += 1;
        } else {
            self.queue.entry(arrival).or_default().push(packet);
        }
    }

    fn arrivals(&mut self, k: usize) -> Vec<Packet<T>> {
        let packets = self.queue.remove(&k).unwrap_or_default();
        self.stats.delivered += packets.len();
        packets
    }

    fn finish(&self) -> LinkStats {
        LinkStats { in_flight: self.queue.values().map(Vec::len).sum(), ..self.stats }
    }
}

struct Command {
    sequence: ControlSequence,
    iterations: usize,
    kkt: f64,
    converged: bool,
    softened: bool,
    cost: f64,
}

enum Policy {
    Mpc(Option<MpcSolution>),
    Pid(PidController),
    Lqr(LqrController),
}

impl Policy {
    fn new(sc: &ScenarioConfig) -> Self {
        match sc.controller {
            ControllerKind::Mpc => Policy::Mpc(None),
            ControllerKind::Pid => Policy::Pid(PidController::new(sc.pid)),
            ControllerKind::Lqr => Policy::Lqr(LqrController::new(sc.lqr)),
        }
    }

    /// Baselines emit their input held constant over the horizon.
    fn held(estimate: &State, u: ControlInput, k: usize, horizon: usize, dt: f64) -> Command {
        let mut states = Vec::with_capacity(horizon + 1);
        let mut s = *estimate;
        for _ in 0..=horizon {
            states.push(s);
            s = vehicle::step_unchecked(s, u, dt);
        }
        Command {
            sequence: ControlSequence { anchor_slot: k, states, controls: vec![u; horizon + 1] },
            iterations: 0,
            kkt: 0.0,
            converged: true,
            softened: false,
            cost: 0.0,
        }
    }

    fn command(
        &mut self,
        sc: &ScenarioConfig,
        estimate: &State,
        refs: &[ReferencePoint],
        sent: &HistoryBuffer,
        k: usize,
    ) -> Result<Command, Error> {
        let cfg = sc.mpc_config();
        let n = cfg.horizon;
        match self {
            Policy::Mpc(warm) => {
                // Controls already sent for the next slots, then the state they reach.
                let committed: Vec<ControlInput> = (0..sc.commitment_slots())
                    .map_while(|j| sent.designated_control(k + j, sc.processing_delay_slots))
                    .collect();
                let depth = committed.len();
                let mut states = vec![*estimate];
                for u in &committed {
                    states.push(vehicle::step_unchecked(*states.last().unwrap(), *u, cfg.dt));
                }
                let start = states.pop().unwrap();
                let shifted;
                let window = if depth == 0 {
                    refs
                } else {
                    shifted = reference_window(&sc.task, k + depth, n, cfg.dt);
                    &shifted[..]
                };
                let forecast = predict_obstacles(&sc.obstacles, k + depth, n, cfg.dt);
                let mut sol = solve_mpc(&start, window, &forecast, &cfg, warm.as_ref()).map_err(|source| Error::Solver { slot: k, source })?;
                let restart = cfg.solver.restart_interval;
                if warm.is_some() && restart > 0 && k % restart == 0 {
                    if let Ok(cold) = solve_mpc(&start, window, &forecast, &cfg, None) {
                        if cold.converged && (!sol.converged || cold.penalized_cost(&cfg) < sol.penalized_cost(&cfg)) {
                            sol = cold;
                        }
                    }
                }
                let mut controls = committed;
                controls.extend_from_slice(&sol.controls);
                controls.truncate(n + 1);
                states.extend_from_slice(&sol.states);
                states.truncate(n + 1);
                let cmd = Command {
                    sequence: ControlSequence { anchor_slot: k, states, controls },
                    iterations: sol.iterations,
                    kkt: sol.kkt_residual,
                    converged: sol.converged,
                    softened: sol.softened,
                    cost: sol.cost,
                };
                *warm = Some(sol);
                Ok(cmd)
            }
            Policy::Pid(pid) => {
                let u = pid.control(estimate, &refs[0], cfg.dt, cfg.v_max, cfg.omega_max);
                Ok(Self::held(estimate, u, k, n, cfg.dt))
            }
            Policy::Lqr(lqr) => {
                let (u, _) = lqr.control(estimate, &refs[0], cfg.dt, cfg.v_max, cfg.omega_max);
                Ok(Self::held(estimate, u, k, n, cfg.dt))
            }
        }
    }
}

fn clearance(sc: &ScenarioConfig, s: &State, k: usize) -> f64 {
    sc.obstacles
        .iter()
        .map(|o| {
            let [ox, oy] = o.position_at(k, sc.dt);
            (s.x - ox).hypot(s.y - oy) - sc.mpc.robot_radius - o.radius
        })
        .fold(f64::INFINITY, f64::min)
}

/// Runs the scenario for `t_sim / dt` slots. Deterministic for a fixed
/// config unless `timing` is [`TimingMode::WallClock`].
pub fn run(sc: &ScenarioConfig) -> Result<RunOutput, Error> {
    sc.validate()?;
    let steps = sc.steps();
    let dt = sc.dt;
    let horizon = sc.mpc.horizon;
    let lag = sc.processing_delay_slots;
    let mut rng = rng_streams(sc.seed);
    let uplink = Channel::new(sc.sc_link)?;
    let downlink = Channel::new(sc.ca_link)?;
    let noise = EkfNoise::from_params(&sc.process_noise, &sc.measurement_noise);
    let capacity = HistoryBuffer::for_links(
        sc.sc_link.max_delay_slots as usize,
        sc.ca_link.max_delay_slots as usize,
        horizon,
        lag,
    )
    .capacity();

    let mut sc_flight: InFlight<Measurement> = InFlight::new();
    let mut ca_flight: InFlight<ControlSequence> = InFlight::new();
    let mut receiver: SmartReceiver<Measurement> = SmartReceiver::new();
    let mut emitted = HistoryBuffer::new(capacity);
    let mut actuator = Actuator::new(capacity);
    let mut policy = Policy::new(sc);
    let mut belief = EkfBelief::with_variances(sc.initial_state, sc.initial_variances);
    let mut posterior_means: Vec<State> = Vec::with_capacity(steps);
    let mut truth = sc.initial_state;
    let mut last_applied = ControlInput::ZERO;
    let mut estimator_skips = 0;
    let mut trace = Vec::with_capacity(steps);
    let (mut time_sum, mut time_max) = (0.0f64, 0.0f64);

    for k in 0..steps {
        // Sensing and uplink.
        let z = vehicle::measure_noisy(&truth, &sc.measurement_noise, &mut rng.measurement);
        let up = uplink.transmit(&mut rng.sc_loss, &mut rng.sc_delay);
        sc_flight.send(Packet::new(z, k, k as u64), up.lost, k + up.delay_slots as usize);
        let rx = receiver.step(sc_flight.arrivals(k), k);

        // Estimation.
        if k > 0 {
            let u_hat = match sc.ekf_input {
                EkfInput::Emitted => emitted.designated_control(k - 1, lag).unwrap_or(ControlInput::ZERO),
                EkfInput::Applied => last_applied,
            };
            belief = estimator::predict(&belief, &u_hat, dt, &noise);
        }
        let mut compensated = None;
        let mut ekf_updated = false;
        if rx.fresh {
            let held = receiver.held().expect("fresh reception holds a packet").payload;
            let anchor = if rx.tau == 0 { belief.mean } else { posterior_means[k - rx.tau] };
            match compensate_measurement(held, rx.tau, &emitted, &anchor, k, dt, lag) {
                Ok(zc) => {
                    compensated = Some(zc);
                    match estimator::update(&belief, &zc, &noise) {
                        Ok(b) => {
                            belief = b;
                            ekf_updated = true;
                        }
                        Err(_) => estimator_skips += 1,
                    }
                }
                Err(_) => estimator_skips += 1,
            }
        }
        posterior_means.push(belief.mean);

        // Control and downlink.
        let refs = reference_window(&sc.task, k, horizon, dt);
        let started = Instant::now();
        let cmd = policy.command(sc, &belief.mean, &refs, &emitted, k)?;
        let elapsed = started.elapsed().as_secs_f64();
        time_sum += elapsed;
        time_max = time_max.max(elapsed);
        let processing = match sc.timing {
            TimingMode::Fixed => lag,
            TimingMode::WallClock => lag.max((elapsed / dt).ceil() as usize),
        };
        let head = cmd.sequence.controls[0];
        emitted.insert(cmd.sequence.clone());
        let down = downlink.transmit(&mut rng.ca_loss, &mut rng.ca_delay);
        ca_flight.send(Packet::new(cmd.sequence, k, k as u64), down.lost, k + processing + down.delay_slots as usize);

        // Actuation.
        let act = actuator.step(ca_flight.arrivals(k), k);
        let reference = refs[0].state;
        trace.push(TraceRow {
            k,
            time: k as f64 * dt,
            x: truth.x,
            y: truth.y,
            theta: truth.theta,
            z_r: z.r,
            z_alpha: z.alpha,
            zc_r: compensated.map_or(f64::NAN, |m| m.r),
            zc_alpha: compensated.map_or(f64::NAN, |m| m.alpha),
            est_x: belief.mean.x,
            est_y: belief.mean.y,
            est_theta: belief.mean.theta,
            ref_x: reference.x,
            ref_y: reference.y,
            ref_theta: reference.theta,
            u_v: act.input.v,
            u_omega: act.input.omega,
            cmd_v: head.v,
            cmd_omega: head.omega,
            tau_sc: rx.tau,
            tau_ca: act.tau,
            sc_lost: up.lost,
            ca_lost: down.lost,
            sc_fresh: rx.fresh,
            ca_fresh: act.fresh,
            starved: act.starved,
            ekf_updated,
            solver_iterations: cmd.iterations,
            solver_kkt: cmd.kkt,
            solver_converged: cmd.converged,
            solver_softened: cmd.softened,
            solver_cost: cmd.cost,
            processing_delay: processing,
            clearance: clearance(sc, &truth, k),
        });

        truth = vehicle::step_disturbed(truth, act.input, dt, &sc.process_noise, &mut rng.process)?;
        last_applied = act.input;
    }

    let metrics = compute_metrics(&trace, sc);
    let steps_f = steps.max(1) as f64;
    Ok(RunOutput {
        metrics,
        timing: SolverTiming { mean_ms: 1e3 * time_sum / steps_f, max_ms: 1e3 * time_max },
        sc_link: sc_flight.finish(),
        ca_link: ca_flight.finish(),
        estimator_skips,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::LinkConfig;

    fn short(mut sc: ScenarioConfig, t_sim: f64) -> ScenarioConfig {
        sc.t_sim = t_sim;
        sc
    }

    #[test]
    fn classical_mpc_when_links_are_ideal() {
        let sc = short(ScenarioConfig::point_nominal().idealized(), 2.0);
        let out = run(&sc).unwrap();
        assert_eq!(out.trace.len(), 200);
        for r in &out.trace {
            assert_eq!((r.u_v, r.u_omega), (r.cmd_v, r.cmd_omega), "slot {}", r.k);
            assert_eq!((r.tau_sc, r.tau_ca), (0, 0));
            assert!(!r.starved);
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let sc = short(ScenarioConfig { seed: 11, ..ScenarioConfig::point_nominal() }, 1.0);
        let a = run(&sc).unwrap();
        let b = run(&sc).unwrap();
        assert_eq!(format!("{:?}", a.trace), format!("{:?}", b.trace));
        let c = run(&ScenarioConfig { seed: 12, ..sc }).unwrap();
        assert_ne!(format!("{:?}", a.trace), format!("{:?}", c.trace));
    }

    #[test]
    fn packets_are_conserved() {
        let mut sc = short(ScenarioConfig { controller: ControllerKind::Pid, seed: 3, ..ScenarioConfig::circle_nominal() }, 3.0);
        sc.sc_link = LinkConfig::new(5.0, 5);
        sc.ca_link = LinkConfig::new(5.0, 4);
        sc.processing_delay_slots = 2;
        let out = run(&sc).unwrap();
        for stats in [out.sc_link, out.ca_link] {
            assert_eq!(stats.sent, 300);
            assert_eq!(stats.sent, stats.delivered + stats.lost + stats.in_flight);
            assert!(stats.lost > 0);
        }
        assert!(out.ca_link.in_flight > 0);
    }

    #[test]
    fn nothing_is_used_before_it_arrives() {
        let mut sc = short(ScenarioConfig { controller: ControllerKind::Lqr, seed: 5, ..ScenarioConfig::circle_nominal() }, 2.0);
        sc.processing_delay_slots = 3;
        let out = run(&sc).unwrap();
        // Every sequence spends at least the processing delay in transit.
        for r in &out.trace {
            if !r.starved {
                assert!(r.tau_ca >= 3, "slot {} used a sequence of age {}", r.k, r.tau_ca);
            }
            assert!(r.tau_sc <= r.k + 1);
        }
        assert!(out.trace[..3].iter().all(|r| r.starved));
    }

    #[test]
    fn measurement_noise_does_not_move_delay_draws() {
        let base = short(ScenarioConfig { controller: ControllerKind::Pid, seed: 21, ..ScenarioConfig::point_nominal() }, 1.0);
        let quiet = ScenarioConfig { measurement_noise: Default::default(), ..base.clone() };
        let a = run(&base).unwrap();
        let b = run(&quiet).unwrap();
        let taus = |o: &RunOutput| o.trace.iter().map(|r| (r.tau_sc, r.sc_lost, r.ca_lost)).collect::<Vec<_>>();
        assert_eq!(taus(&a), taus(&b));
    }

    #[test]
    fn committed_inputs_make_delay_invisible() {
        let mut sc = short(ScenarioConfig { seed: 9, ..ScenarioConfig::point_nominal() }, 1.5);
        sc.ca_link = LinkConfig::new(100.0, 2);
        sc.processing_delay_slots = 1;
        let out = run(&sc).unwrap();
        let served: Vec<_> = out.trace.iter().filter(|r| !r.starved).collect();
        assert!(served.len() > 100);
        assert!(served.iter().any(|r| r.tau_ca >= 2));
        for r in served {
            assert_eq!((r.u_v, r.u_omega), (r.cmd_v, r.cmd_omega), "slot {}", r.k);
        }

        sc.input_commitment = false;
        let out = run(&sc).unwrap();
        assert!(out.trace.iter().any(|r| !r.starved && (r.u_v, r.u_omega) != (r.cmd_v, r.cmd_omega)));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let sc = ScenarioConfig { dt: -1.0, ..ScenarioConfig::point_nominal() };
        assert!(matches!(run(&sc), Err(Error::Config(_))));
    }
}
