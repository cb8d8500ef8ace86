//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line to
//! stderr (uncaptured) and then asserts.

use std::io::Write;
use std::sync::OnceLock;

use nalgebra::{Matrix2x3, Matrix3, Matrix3x2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use wncs::channel::{packet_error_probability, Channel, LinkConfig, PerMode};
use wncs::controller::{
    predict_obstacles, rollout_cost, solve_mpc, MpcConfig, Obstacle, ObstacleForecast, ReferencePoint,
};
use wncs::estimator::{gain, innovation, jacobians_dynamics, jacobians_measurement, predict, update, EkfBelief, EkfNoise};
use wncs::sim::{run, ControllerKind, Metrics, ScenarioConfig, NOMINAL_MEASUREMENT_NOISE, NOMINAL_PROCESS_NOISE};
use wncs::vehicle::{self, wrap_angle, ControlInput, Measurement, State};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {id:>2} {name:<28} {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty());
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn run_seeds(base: &ScenarioConfig, seeds: std::ops::Range<u64>) -> Vec<Metrics> {
    seeds
        .into_par_iter()
        .map(|seed| run(&ScenarioConfig { seed, ..base.clone() }).expect("run").metrics)
        .collect()
}

fn med(runs: &[Metrics], f: impl Fn(&Metrics) -> f64) -> f64 {
    median(runs.iter().map(f).collect())
}

fn collisions(runs: &[Metrics]) -> usize {
    runs.iter().map(|m| m.collision_count).sum()
}

fn ss_pos(m: &Metrics) -> f64 {
    m.steady_state_position_error_cm.expect("point task has a steady state")
}

fn ss_head(m: &Metrics) -> f64 {
    m.steady_state_heading_error_deg.expect("point task has a steady state")
}

const PER_TABLE: [(f64, f64); 4] = [(5.0, 0.696), (10.0, 0.312), (15.0, 0.112), (20.0, 0.037)];

fn gamma(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[test]
fn c01_per_table() {
    let mut pass = true;
    let mut detail = String::new();
    for (snr, expected) in PER_TABLE {
        let p = packet_error_probability(gamma(snr), 100, 1.0).unwrap();
        pass &= (p - expected).abs() <= 0.005;
        detail += &format!("{snr} dB: {p:.4} (ref {expected}); ");
    }
    let p100 = packet_error_probability(gamma(100.0), 100, 1.0).unwrap();
    pass &= p100 < 1e-4;
    detail += &format!("100 dB: {p100:.2e}");
    report(1, "per table", pass, &detail);
}

#[test]
fn c02_monte_carlo_matches_analytic() {
    const DRAWS: usize = 100_000;
    let mut pass = true;
    let mut detail = String::new();
    for (i, snr) in [5.0, 10.0, 15.0, 20.0, 100.0].into_iter().enumerate() {
        let cfg = LinkConfig { per_mode: PerMode::AnalyticMeanSnr, ..LinkConfig::new(snr, 5) };
        let ch = Channel::new(cfg).unwrap();
        let mut loss = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let mut delay = ChaCha8Rng::seed_from_u64(200 + i as u64);
        let lost = (0..DRAWS).filter(|_| ch.transmit(&mut loss, &mut delay).lost).count();
        let p = ch.mean_per();
        let rate = lost as f64 / DRAWS as f64;
        let se = (p * (1.0 - p) / DRAWS as f64).sqrt();
        pass &= (rate - p).abs() <= 3.0 * se;
        detail += &format!("{snr} dB: {rate:.4} vs {p:.4} ({:.1} se); ", if se > 0.0 { (rate - p).abs() / se } else { 0.0 });
    }
    report(2, "monte carlo loss rate", pass, detail.trim_end_matches("; "));
}

fn point_runs(horizon: usize) -> Vec<Metrics> {
    let mut sc = ScenarioConfig::point_nominal();
    sc.mpc.horizon = horizon;
    run_seeds(&sc, 0..10)
}

fn point_n100() -> &'static [Metrics] {
    static RUNS: OnceLock<Vec<Metrics>> = OnceLock::new();
    RUNS.get_or_init(|| point_runs(100))
}

#[test]
fn c03_point_stabilization() {
    let runs = point_n100();
    let pos = med(runs, ss_pos);
    let head = med(runs, ss_head);
    let coll = collisions(runs);
    let pass = pos <= 5.0 && head <= 2.0 && coll == 0;
    report(3, "point stabilization", pass, &format!("10 seeds: median {pos:.2} cm, {head:.3} deg, {coll} collisions"));
}

#[test]
fn c04_channel_sweep() {
    let cells: Vec<(f64, u32)> = [5.0, 10.0, 15.0, 20.0, 100.0]
        .into_iter()
        .flat_map(|snr| [1, 3, 5].into_iter().map(move |d| (snr, d)))
        .collect();
    let mut pass = true;
    let mut worst = (0.0, 0.0, 0);
    let mut total_coll = 0;
    for &(snr, d) in &cells {
        let mut sc = ScenarioConfig::point_nominal();
        sc.sc_link = LinkConfig::new(snr, d);
        let runs = run_seeds(&sc, 0..5);
        let pos = med(&runs, ss_pos);
        let coll = collisions(&runs);
        total_coll += coll;
        pass &= pos <= 5.0 && coll == 0;
        if pos > worst.0 {
            worst = (pos, snr, d);
        }
    }
    report(
        4,
        "channel sweep",
        pass,
        &format!(
            "15 cells x 5 seeds: worst median {:.2} cm at {} dB / {} slots, {total_coll} collisions",
            worst.0, worst.1, worst.2
        ),
    );
}

#[test]
fn c05_horizon_sweep_direction() {
    let short = med(&point_runs(10), ss_head);
    let long = med(point_n100(), ss_head);
    let ratio = short / long;
    report(5, "horizon sweep direction", ratio >= 10.0, &format!("N=10 {short:.3} deg, N=100 {long:.3} deg, ratio {ratio:.1}"));
}

struct Tracking {
    circle_mpc: Vec<Metrics>,
    circle_pid: Vec<Metrics>,
    eight_mpc: Vec<Metrics>,
    eight_pid: Vec<Metrics>,
}

fn tracking() -> &'static Tracking {
    static RUNS: OnceLock<Tracking> = OnceLock::new();
    RUNS.get_or_init(|| {
        let with = |sc: ScenarioConfig, controller| run_seeds(&ScenarioConfig { controller, ..sc }, 0..10);
        Tracking {
            circle_mpc: with(ScenarioConfig::circle_nominal(), ControllerKind::Mpc),
            circle_pid: with(ScenarioConfig::circle_nominal(), ControllerKind::Pid),
            eight_mpc: with(ScenarioConfig::eight_nominal(), ControllerKind::Mpc),
            eight_pid: with(ScenarioConfig::eight_nominal(), ControllerKind::Pid),
        }
    })
}

fn avg_err(m: &Metrics) -> f64 {
    m.avg_euclidean_error_cm
}

#[test]
fn c06_tracking_tasks() {
    let t = tracking();
    let circle = med(&t.circle_mpc, avg_err);
    let eight = med(&t.eight_mpc, avg_err);
    let (cc, ec) = (collisions(&t.circle_mpc), collisions(&t.eight_mpc));
    let pass = circle <= 45.0 && eight <= 27.0 && cc == 0 && ec == 0;
    report(
        6,
        "tracking tasks",
        pass,
        &format!("10 seeds: circle {circle:.2} cm ({cc} collisions), eight {eight:.2} cm ({ec} collisions); bounds 45 / 27 cm"),
    );
}

#[test]
fn c07_mpc_beats_pid() {
    let t = tracking();
    let (cm, cp) = (med(&t.circle_mpc, avg_err), med(&t.circle_pid, avg_err));
    let (em, ep) = (med(&t.eight_mpc, avg_err), med(&t.eight_pid, avg_err));
    report(
        7,
        "mpc beats pid",
        cm < cp && em < ep,
        &format!("circle {cm:.2} vs {cp:.2} cm, eight {em:.2} vs {ep:.2} cm"),
    );
}

fn nominal_noise() -> EkfNoise {
    EkfNoise::from_params(&NOMINAL_PROCESS_NOISE, &NOMINAL_MEASUREMENT_NOISE)
}

fn random_state(rng: &mut ChaCha8Rng) -> State {
    let r = rng.random_range(0.3..8.0);
    let a: f64 = rng.random_range(-3.1..3.1);
    State::new(r * a.cos(), r * a.sin(), rng.random_range(-3.1..3.1))
}

fn fd_jacobians(s: &State, u: &ControlInput, dt: f64) -> (Matrix3<f64>, Matrix3x2<f64>, Matrix2x3<f64>) {
    let h = 1e-6;
    let f = |s: State, u: ControlInput| vehicle::step(s, u, dt).unwrap().to_vector();
    let shifted = |i: usize, d: f64| {
        let mut v = s.to_vector();
        v[i] += d;
        State::from_vector(&v)
    };
    let mut a = Matrix3::zeros();
    let mut c = Matrix2x3::zeros();
    for j in 0..3 {
        let (sp, sm) = (shifted(j, h), shifted(j, -h));
        a.set_column(j, &((f(sp, *u) - f(sm, *u)) / (2.0 * h)));
        let (zp, zm) = (vehicle::measure(&sp), vehicle::measure(&sm));
        c.set_column(j, &(Vector2::new(zp.r - zm.r, wrap_angle(zp.alpha - zm.alpha)) / (2.0 * h)));
    }
    let mut b = Matrix3x2::zeros();
    for j in 0..2 {
        let mut up = u.to_vector();
        let mut um = u.to_vector();
        up[j] += h;
        um[j] -= h;
        b.set_column(j, &((f(*s, ControlInput::new(up[0], up[1])) - f(*s, ControlInput::new(um[0], um[1]))) / (2.0 * h)));
    }
    (a, b, c)
}

#[test]
fn c08_ekf_suite() {
    let n = nominal_noise();
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    let mut spd = true;
    let mut b = EkfBelief::with_variances(State::new(1.0, 0.5, 0.0), [1e-4; 3]);
    for _ in 0..10_000 {
        let u = ControlInput::new(rng.random_range(-1.0..1.0), rng.random_range(-2.4..2.4));
        b = predict(&b, &u, 0.01, &n);
        let z = Measurement::new(
            (b.mean.x.hypot(b.mean.y) + rng.random_range(-0.2..0.2)).max(0.0),
            wrap_angle(b.mean.y.atan2(b.mean.x) + rng.random_range(-0.1..0.1)),
        );
        if let Ok(post) = update(&b, &z, &n) {
            b = post;
        }
        spd &= b.cov == b.cov.transpose() && b.cov.cholesky().is_some();
    }

    let mut jac_err: f64 = 0.0;
    for _ in 0..500 {
        let s = random_state(&mut rng);
        let u = ControlInput::new(rng.random_range(-1.0..1.0), rng.random_range(-2.4..2.4));
        let (a, bm) = jacobians_dynamics(&s, &u, 0.01);
        let (c, _) = jacobians_measurement(&s).unwrap();
        let (fa, fb, fc) = fd_jacobians(&s, &u, 0.01);
        jac_err = jac_err.max((a - fa).abs().max()).max((bm - fb).abs().max()).max((c - fc).abs().max());
    }

    let mut joseph_gap: f64 = 0.0;
    for _ in 0..500 {
        let l = Matrix3::from_fn(|_, _| rng.random_range(-0.2..0.2));
        let p = l * l.transpose() + Matrix3::identity() * 1e-3;
        let prior = EkfBelief::new(random_state(&mut rng), p);
        let (k, c, _) = gain(&prior, &n).unwrap();
        let ikc = Matrix3::identity() - k * c;
        let joseph = ikc * p * ikc.transpose() + k * n.r_meas * k.transpose();
        let post = update(&prior, &vehicle::measure(&prior.mean), &n).unwrap();
        joseph_gap = joseph_gap.max((post.cov - joseph).norm() / joseph.norm());
    }

    let mean = State::new(-1.0, -(3.1f64.tan()), 0.0);
    let nu = innovation(&Measurement::new(vehicle::measure(&mean).r, -3.1), &mean);
    let wraps = (nu[1] - (2.0 * std::f64::consts::PI - 6.2)).abs() < 1e-12;

    let pass = spd && jac_err <= 1e-5 && joseph_gap <= 1e-6 && wraps;
    report(
        8,
        "ekf suite",
        pass,
        &format!("spd {spd} over 1e4 cycles, jacobian gap {jac_err:.1e}, joseph gap {joseph_gap:.1e}, wrap {wraps}"),
    );
}

fn rolled_reference(start: State, controls: &[ControlInput], dt: f64) -> Vec<ReferencePoint> {
    let mut s = start;
    controls
        .iter()
        .map(|u| {
            let r = ReferencePoint { state: s, input: *u };
            s = vehicle::step(s, *u, dt).unwrap();
            r
        })
        .collect()
}

fn random_instance(rng: &mut ChaCha8Rng, horizon: usize, dt: f64) -> (State, Vec<ReferencePoint>) {
    let start = State::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-3.0..3.0));
    let v = rng.random_range(-0.9..0.9);
    let w = rng.random_range(-2.0..2.0);
    let controls: Vec<ControlInput> = (0..=horizon).map(|i| ControlInput::new(v, w * (i as f64 * 0.05).cos())).collect();
    let refs = rolled_reference(start, &controls, dt);
    let initial = State::new(
        start.x + rng.random_range(-0.5..0.5),
        start.y + rng.random_range(-0.5..0.5),
        start.theta + rng.random_range(-1.0..1.0),
    );
    (initial, refs)
}

#[test]
fn c09_solver_suite() {
    const N: usize = 40;
    let cfg = MpcConfig { horizon: N, ..MpcConfig::default() };
    let obstacles = [Obstacle::fixed(0.3, 0.2, 0.2)];
    let forecast = predict_obstacles(&obstacles, 0, N, cfg.dt);
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    let (mut accepted, mut max_defect, mut bounds_ok) = (0, 0.0f64, true);
    let (mut checked, mut worst_drop) = (0, f64::NEG_INFINITY);
    let mut attempts = 0;
    while checked < 100 {
        attempts += 1;
        assert!(attempts < 10_000, "too few usable instances");
        let (initial, refs) = random_instance(&mut rng, N, cfg.dt);
        let sol = solve_mpc(&initial, &refs, &forecast, &cfg, None).unwrap();
        bounds_ok &= sol.controls.iter().all(|u| u.v.abs() <= cfg.v_max && u.omega.abs() <= cfg.omega_max);
        if !sol.converged {
            continue;
        }
        accepted += 1;
        max_defect = max_defect.max(sol.dynamics_defect(cfg.dt));
        if sol.softened {
            continue;
        }
        let base = rollout_cost(&initial, &sol.controls, &refs, &cfg);
        let i = rng.random_range(0..=N);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let mut perturbed = sol.controls.clone();
        perturbed[i].v += 1e-3 * angle.cos();
        perturbed[i].omega += 1e-3 * angle.sin();
        if !perturbed[i].within_bounds(cfg.v_max, cfg.omega_max) {
            continue;
        }
        let mut s = initial;
        let mut feasible = true;
        for (k, u) in perturbed.iter().enumerate().take(N) {
            s = vehicle::step(s, *u, cfg.dt).unwrap();
            let o = forecast.positions[k + 1][0];
            feasible &= (s.x - o[0]).hypot(s.y - o[1]) >= cfg.safety_margin + obstacles[0].radius;
        }
        if !feasible {
            continue;
        }
        worst_drop = worst_drop.max(base - rollout_cost(&initial, &perturbed, &refs, &cfg));
        checked += 1;
    }

    let fixed_cfg = MpcConfig { horizon: 100, ..MpcConfig::default() };
    let controls: Vec<ControlInput> = (0..=100).map(|i| ControlInput::new(0.6, 0.3 * (i as f64 * 0.03).sin())).collect();
    let refs = rolled_reference(State::new(5.0, 0.0, std::f64::consts::FRAC_PI_2), &controls, fixed_cfg.dt);
    let fixed = solve_mpc(&refs[0].state, &refs, &ObstacleForecast::default(), &fixed_cfg, None).unwrap();

    let pass = max_defect <= cfg.solver.kkt_tolerance && bounds_ok && worst_drop <= 1e-6 && fixed.converged && fixed.cost <= 1e-6;
    report(
        9,
        "solver suite",
        pass,
        &format!(
            "{accepted} accepted, max defect {max_defect:.1e}, bounds {bounds_ok}, {checked} perturbations (largest drop {worst_drop:.1e}), fixed-point cost {:.1e}",
            fixed.cost
        ),
    );
}

fn traces_in_pool(threads: usize, base: &ScenarioConfig) -> Vec<String> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        (0..4u64)
            .into_par_iter()
            .map(|seed| format!("{:?}", run(&ScenarioConfig { seed, ..base.clone() }).unwrap().trace))
            .collect()
    })
}

#[test]
fn c10_determinism() {
    let point = ScenarioConfig { t_sim: 3.0, seed: 5, ..ScenarioConfig::point_nominal() };
    let a = format!("{:?}", run(&point).unwrap().trace);
    let b = format!("{:?}", run(&point).unwrap().trace);
    let circle = ScenarioConfig { t_sim: 3.0, ..ScenarioConfig::circle_nominal() };
    let one = traces_in_pool(1, &circle);
    let three = traces_in_pool(3, &circle);
    let distinct = one[0] != one[1];
    let pass = a == b && one == three && distinct;
    report(
        10,
        "determinism",
        pass,
        &format!("repeat identical {}, 1 vs 3 threads identical {}, seeds differ {distinct}", a == b, one == three),
    );
}
