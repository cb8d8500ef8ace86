//! Verb implementations. Each returns the text to print on stdout.

use std::fmt::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use wncs::channel::packet_error_probability;
use wncs::sim::{self, ControllerKind, RunOutput, ScenarioConfig, SolverTiming};

use crate::artifacts::{median, run_dir, to_json, write_atomic, write_run, Aggregate, EmitFlags, RunSummary};
use crate::error::CliError;
use crate::scenario_file::{bundled, load_scenario};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "WNCS_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "wncs-out";

pub const SMALL_SAMPLE_WARNING: &str = "warning: only one seed; medians are a single sample";

#[derive(Debug, Parser)]
#[command(name = "wncs", version, about = "Unicycle MPC over lossy, delaying wireless links")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario per seed and write trace, summary and plot files.
    Run(RunArgs),
    /// Print the analytic packet error rate per SNR and run the point task per (SNR, delay) cell.
    PerTable(PerTableArgs),
    /// Run several controllers on the same seeds and tabulate their errors.
    Compare(CompareArgs),
    /// Run the point task over a list of MPC horizons.
    SweepHorizon(SweepArgs),
    /// Print a bundled scenario file.
    ShowScenario {
        /// point_nominal, circle_nominal or eight_nominal.
        name: String,
    },
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output directory [default: $WNCS_OUT_DIR, else ./wncs-out]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl OutputArgs {
    pub fn dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT_DIR), PathBuf::from))
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario file, bundled scenario name, or task (point, circle, eight).
    pub scenario: String,
    /// Seeds as `7`, `1,4,9` or `0..10` [default: the scenario's seed]
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<List<u64>>,
    /// Overrides the scenario's controller.
    #[arg(long, value_parser = parse_controller)]
    pub controller: Option<ControllerKind>,
    #[arg(long)]
    pub no_trace: bool,
    #[arg(long)]
    pub no_summary: bool,
    #[arg(long)]
    pub no_plot: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct PerTableArgs {
    /// Mean SNRs in dB.
    #[arg(long, default_value = "5,10,15,20,100", value_parser = parse_f64_list)]
    pub snr: List<f64>,
    /// Sensor-to-controller delay caps in ms; whole multiples of the slot.
    #[arg(long, default_value = "10,30,50", value_parser = parse_f64_list)]
    pub delay_ms: List<f64>,
    /// Codeword length.
    #[arg(long, default_value_t = 100)]
    pub block_length: u32,
    /// Code rate.
    #[arg(long, default_value_t = 1.0)]
    pub code_rate: f64,
    #[arg(long, default_value = "point_nominal")]
    pub scenario: String,
    #[arg(long, default_value = "0..5", value_parser = parse_seeds)]
    pub seeds: List<u64>,
    /// Print only the packet error rates.
    #[arg(long)]
    pub per_only: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Task (point, circle, eight) or any scenario spec accepted by `run`.
    #[arg(long, default_value = "circle")]
    pub task: String,
    #[arg(long, default_value = "mpc,pid,lqr", value_parser = parse_controllers)]
    pub controllers: List<ControllerKind>,
    #[arg(long, default_value = "0..10", value_parser = parse_seeds)]
    pub seeds: List<u64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value = "10,20,50,100", value_parser = parse_usize_list)]
    pub horizons: List<usize>,
    #[arg(long, default_value = "point_nominal")]
    pub scenario: String,
    #[arg(long, default_value = "0..5", value_parser = parse_seeds)]
    pub seeds: List<u64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// A comma-separated argument list.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T> std::ops::Deref for List<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

fn split_list(s: &str) -> Result<Vec<&str>, String> {
    let items: Vec<&str> = s.split(',').map(str::trim).filter(|t| !t.is_empty()).collect();
    if items.is_empty() {
        return Err("list must not be empty".into());
    }
    Ok(items)
}

fn parse_f64_list(s: &str) -> Result<List<f64>, String> {
    split_list(s)?
        .into_iter()
        .map(|t| t.parse::<f64>().map_err(|e| format!("`{t}`: {e}")).and_then(|v| if v.is_finite() { Ok(v) } else { Err(format!("`{t}` is not finite")) }))
        .collect::<Result<_, _>>()
        .map(List)
}

fn parse_usize_list(s: &str) -> Result<List<usize>, String> {
    split_list(s)?.into_iter().map(|t| t.parse::<usize>().map_err(|e| format!("`{t}`: {e}"))).collect::<Result<_, _>>().map(List)
}

pub fn parse_seeds(s: &str) -> Result<List<u64>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("`{a}`: {e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("`{b}`: {e}"))?;
        if b <= a {
            return Err(format!("empty seed range `{s}`"));
        }
        return Ok(List((a..b).collect()));
    }
    split_list(s)?.into_iter().map(|t| t.parse::<u64>().map_err(|e| format!("`{t}`: {e}"))).collect::<Result<_, _>>().map(List)
}

fn parse_controller(s: &str) -> Result<ControllerKind, String> {
    s.trim().parse()
}

fn parse_controllers(s: &str) -> Result<List<ControllerKind>, String> {
    split_list(s)?.into_iter().map(parse_controller).collect::<Result<_, _>>().map(List)
}

/// Runs `sc` once per seed, in parallel, returning outputs in seed order.
pub fn run_seeds(sc: &ScenarioConfig, seeds: &[u64]) -> Result<Vec<(ScenarioConfig, RunOutput)>, CliError> {
    seeds
        .par_iter()
        .map(|&seed| {
            let sc = ScenarioConfig { seed, ..sc.clone() };
            let out = sim::run(&sc).map_err(|e| CliError::Runtime(format!("seed {seed}: {e}")))?;
            Ok((sc, out))
        })
        .collect()
}

fn summaries(runs: &[(ScenarioConfig, RunOutput)]) -> Vec<RunSummary> {
    runs.iter().map(|(sc, out)| RunSummary::new(sc, out)).collect()
}

fn timing_median(runs: &[(ScenarioConfig, RunOutput)]) -> SolverTiming {
    let mut mean: Vec<f64> = runs.iter().map(|(_, o)| o.timing.mean_ms).collect();
    let mut max: Vec<f64> = runs.iter().map(|(_, o)| o.timing.max_ms).collect();
    SolverTiming { mean_ms: median(&mut mean).unwrap_or(0.0), max_ms: median(&mut max).unwrap_or(0.0) }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

fn total_collisions(agg: &Aggregate) -> usize {
    agg.per_seed.iter().map(|r| r.metrics.collision_count).sum()
}

pub fn cmd_run(args: &RunArgs) -> Result<String, CliError> {
    let mut sc = load_scenario(&args.scenario)?;
    if let Some(c) = args.controller {
        sc.controller = c;
    }
    let seeds = args.seeds.as_ref().map_or_else(|| vec![sc.seed], |l| l.0.clone());
    let root = args.output.dir();
    let emit = EmitFlags { trace: !args.no_trace, summary: !args.no_summary, plot: !args.no_plot };
    let runs = run_seeds(&sc, &seeds)?;
    let mut report = String::new();
    for (run_sc, out) in &runs {
        let dir = write_run(&root, run_sc, out, emit)?;
        let m = &out.metrics;
        let _ = writeln!(
            report,
            "seed {:>4}: avg error {:.2} cm, heading {:.2} deg, collisions {}, solve {:.2} ms -> {}",
            run_sc.seed,
            m.avg_euclidean_error_cm,
            m.avg_step_heading_error_deg,
            m.collision_count,
            out.timing.mean_ms,
            dir.display()
        );
    }
    let agg = Aggregate::new(&summaries(&runs));
    let agg_path = run_dir(&root, &sc).join("aggregate.json");
    write_atomic(&agg_path, to_json(&agg).as_bytes())?;
    if agg.small_sample {
        eprintln!("{SMALL_SAMPLE_WARNING}");
    }
    let _ = writeln!(
        report,
        "median: avg error {} cm, heading {} deg, steady-state {} cm / {} deg -> {}",
        fmt_opt(agg.median_of("avg_euclidean_error_cm"), 2),
        fmt_opt(agg.median_of("avg_step_heading_error_deg"), 2),
        fmt_opt(agg.median_of("steady_state_position_error_cm"), 2),
        fmt_opt(agg.median_of("steady_state_heading_error_deg"), 2),
        agg_path.display()
    );
    Ok(report)
}

#[derive(Debug, Serialize)]
struct PerCell {
    snr_db: f64,
    per: f64,
    delay_ms: f64,
    delay_slots: u32,
    aggregate: Aggregate,
}

fn delay_slots(ms: f64, dt: f64) -> Result<u32, CliError> {
    let slots = ms / (1000.0 * dt);
    if !(slots >= 0.0) || (slots - slots.round()).abs() > 1e-9 * slots.max(1.0) {
        return Err(CliError::Usage(format!("delay {ms} ms is not a whole number of {} ms slots", 1000.0 * dt)));
    }
    Ok(slots.round() as u32)
}

pub fn cmd_per_table(args: &PerTableArgs) -> Result<String, CliError> {
    let base = load_scenario(&args.scenario)?;
    let mut report = String::new();
    let _ = writeln!(report, "packet error rate, L = {}, R = {}", args.block_length, args.code_rate);
    let _ = writeln!(report, "{:>9}  {:>8}", "SNR (dB)", "PER");
    let mut pers = Vec::new();
    for &snr in args.snr.iter() {
        let link = wncs::channel::LinkConfig { snr_db: snr, ..base.sc_link };
        let per = packet_error_probability(link.gamma(), args.block_length, args.code_rate).map_err(|e| CliError::Usage(e.to_string()))?;
        let _ = writeln!(report, "{snr:>9}  {per:>8.4}");
        pers.push(per);
    }
    if args.per_only {
        return Ok(report);
    }
    let slots: Vec<u32> = args.delay_ms.iter().map(|&ms| delay_slots(ms, base.dt)).collect::<Result<_, _>>()?;
    let mut cells = Vec::new();
    for (&snr, &per) in args.snr.iter().zip(&pers) {
        for (&ms, &d) in args.delay_ms.iter().zip(&slots) {
            let mut sc = base.clone();
            sc.sc_link.snr_db = snr;
            sc.sc_link.block_length = args.block_length;
            sc.sc_link.code_rate = args.code_rate;
            sc.sc_link.max_delay_slots = d;
            sc.validate().map_err(wncs::Error::from)?;
            let aggregate = Aggregate::new(&summaries(&run_seeds(&sc, &args.seeds)?));
            cells.push(PerCell { snr_db: snr, per, delay_ms: ms, delay_slots: d, aggregate });
        }
    }
    let _ = writeln!(report);
    let _ = writeln!(report, "{} over {} seed(s), medians", base.name, args.seeds.len());
    let _ = writeln!(report, "{:>9}  {:>8}  {:>10}  {:>12}  {:>14}  {:>14}", "SNR (dB)", "PER", "delay (ms)", "ss pos (cm)", "ss head (deg)", "collision-free");
    for c in &cells {
        let _ = writeln!(
            report,
            "{:>9}  {:>8.4}  {:>10}  {:>12}  {:>14}  {:>14}",
            c.snr_db,
            c.per,
            c.delay_ms,
            fmt_opt(c.aggregate.median_of("steady_state_position_error_cm"), 2),
            fmt_opt(c.aggregate.median_of("steady_state_heading_error_deg"), 3),
            if total_collisions(&c.aggregate) == 0 { "yes" } else { "no" }
        );
    }
    if args.seeds.len() < 2 {
        let _ = writeln!(report, "{SMALL_SAMPLE_WARNING}");
    }
    let path = args.output.dir().join(&base.name).join("per_table.json");
    write_atomic(&path, to_json(&cells).as_bytes())?;
    let _ = writeln!(report, "-> {}", path.display());
    Ok(report)
}

#[derive(Debug, Serialize)]
struct ControllerResult {
    controller: String,
    timing_median: SolverTiming,
    aggregate: Aggregate,
}

pub fn cmd_compare(args: &CompareArgs) -> Result<String, CliError> {
    let base = load_scenario(&args.task)?;
    let mut results = Vec::new();
    for &controller in args.controllers.iter() {
        let sc = ScenarioConfig { controller, ..base.clone() };
        let runs = run_seeds(&sc, &args.seeds)?;
        results.push(ControllerResult {
            controller: controller.as_str().to_string(),
            timing_median: timing_median(&runs),
            aggregate: Aggregate::new(&summaries(&runs)),
        });
    }
    let mut report = String::new();
    let _ = writeln!(report, "{} over {} seed(s), medians", base.name, args.seeds.len());
    let _ = writeln!(report, "{:>10}  {:>13}  {:>13}  {:>10}  {:>10}  {:>15}", "controller", "avg err (cm)", "heading (deg)", "solve (ms)", "collisions", "min clear (m)");
    for r in &results {
        let a = &r.aggregate;
        let _ = writeln!(
            report,
            "{:>10}  {:>13}  {:>13}  {:>10.3}  {:>10}  {:>15}",
            r.controller,
            fmt_opt(a.median_of("avg_euclidean_error_cm"), 2),
            fmt_opt(a.median_of("avg_step_heading_error_deg"), 2),
            r.timing_median.mean_ms,
            total_collisions(a),
            fmt_opt(a.median_of("min_clearance_m"), 3)
        );
    }
    if args.seeds.len() < 2 {
        let _ = writeln!(report, "{SMALL_SAMPLE_WARNING}");
    }
    let path = args.output.dir().join(&base.name).join("compare.json");
    write_atomic(&path, to_json(&results).as_bytes())?;
    let _ = writeln!(report, "-> {}", path.display());
    Ok(report)
}

#[derive(Debug, Serialize)]
struct HorizonResult {
    horizon: usize,
    timing_median: SolverTiming,
    aggregate: Aggregate,
}

pub fn cmd_sweep_horizon(args: &SweepArgs) -> Result<String, CliError> {
    let base = load_scenario(&args.scenario)?;
    let mut results = Vec::new();
    for &horizon in args.horizons.iter() {
        let mut sc = base.clone();
        sc.mpc.horizon = horizon;
        sc.validate().map_err(wncs::Error::from)?;
        let runs = run_seeds(&sc, &args.seeds)?;
        results.push(HorizonResult { horizon, timing_median: timing_median(&runs), aggregate: Aggregate::new(&summaries(&runs)) });
    }
    let mut report = String::new();
    let _ = writeln!(report, "{} over {} seed(s), medians", base.name, args.seeds.len());
    let _ = writeln!(report, "{:>5}  {:>12}  {:>14}  {:>13}  {:>10}  {:>10}", "N", "ss pos (cm)", "ss head (deg)", "avg err (cm)", "solve (ms)", "collisions");
    for r in &results {
        let a = &r.aggregate;
        let _ = writeln!(
            report,
            "{:>5}  {:>12}  {:>14}  {:>13}  {:>10.3}  {:>10}",
            r.horizon,
            fmt_opt(a.median_of("steady_state_position_error_cm"), 2),
            fmt_opt(a.median_of("steady_state_heading_error_deg"), 3),
            fmt_opt(a.median_of("avg_euclidean_error_cm"), 2),
            r.timing_median.mean_ms,
            total_collisions(a)
        );
    }
    if args.seeds.len() < 2 {
        let _ = writeln!(report, "{SMALL_SAMPLE_WARNING}");
    }
    let path = args.output.dir().join(&base.name).join("sweep_horizon.json");
    write_atomic(&path, to_json(&results).as_bytes())?;
    let _ = writeln!(report, "-> {}", path.display());
    Ok(report)
}

pub fn cmd_show_scenario(name: &str) -> Result<String, CliError> {
    bundled(name).map(str::to_string).ok_or_else(|| CliError::Usage(format!("no bundled scenario `{name}`")))
}

pub fn execute(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::PerTable(a) => cmd_per_table(a),
        Command::Compare(a) => cmd_compare(a),
        Command::SweepHorizon(a) => cmd_sweep_horizon(a),
        Command::ShowScenario { name } => cmd_show_scenario(name),
    }
}

/// Output root used when `--out` is absent.
pub fn default_out_dir() -> PathBuf {
    OutputArgs { out: None }.dir()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_syntax() {
        assert_eq!(parse_seeds("7").unwrap().0, vec![7]);
        assert_eq!(parse_seeds("1, 4,9").unwrap().0, vec![1, 4, 9]);
        assert_eq!(parse_seeds("0..3").unwrap().0, vec![0, 1, 2]);
        assert!(parse_seeds("").is_err());
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("a").is_err());
    }

    #[test]
    fn lists_reject_empty_and_non_finite() {
        assert!(parse_f64_list("").is_err());
        assert!(parse_f64_list(" , ").is_err());
        assert!(parse_f64_list("5,inf").is_err());
        assert_eq!(parse_f64_list("5, 10").unwrap().0, vec![5.0, 10.0]);
        assert!(parse_controllers("mpc,foo").is_err());
    }

    #[test]
    fn delays_convert_to_whole_slots() {
        assert_eq!(delay_slots(50.0, 0.01).unwrap(), 5);
        assert_eq!(delay_slots(0.0, 0.01).unwrap(), 0);
        assert!(delay_slots(15.0, 0.01).is_err());
    }
}
