//! Per-run files and seed aggregates.
//!
//! A run directory holds `trace.csv`, `summary.json`, `trajectory.svg` and
//! `timing.json`. Everything except `timing.json` is a deterministic
//! function of the scenario and seed.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wncs::sim::{LinkStats, Metrics, RunOutput, ScenarioConfig, SolverTiming, TraceRow};

use crate::error::CliError;
use crate::svg::render_svg;

/// Which per-run files to write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmitFlags {
    pub trace: bool,
    pub summary: bool,
    pub plot: bool,
}

impl Default for EmitFlags {
    fn default() -> Self {
        Self { trace: true, summary: true, plot: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub controller: String,
    pub seed: u64,
    pub metrics: Metrics,
    pub sc_link: LinkStats,
    pub ca_link: LinkStats,
    pub estimator_skips: usize,
}

impl RunSummary {
    pub fn new(sc: &ScenarioConfig, out: &RunOutput) -> Self {
        Self {
            scenario: sc.name.clone(),
            controller: sc.controller.as_str().to_string(),
            seed: sc.seed,
            metrics: out.metrics,
            sc_link: out.sc_link,
            ca_link: out.ca_link,
            estimator_skips: out.estimator_skips,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub seed: u64,
    pub solver: SolverTiming,
}

/// Per-seed summaries and the median of every numeric metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scenario: String,
    pub controller: String,
    pub seeds: Vec<u64>,
    /// Set when fewer than two seeds were run.
    pub small_sample: bool,
    pub median: BTreeMap<String, Option<f64>>,
    pub per_seed: Vec<RunSummary>,
}

impl Aggregate {
    pub fn new(runs: &[RunSummary]) -> Self {
        let first = runs.first();
        Self {
            scenario: first.map(|r| r.scenario.clone()).unwrap_or_default(),
            controller: first.map(|r| r.controller.clone()).unwrap_or_default(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            small_sample: runs.len() < 2,
            median: median_metrics(runs.iter().map(|r| &r.metrics)),
            per_seed: runs.to_vec(),
        }
    }

    pub fn median_of(&self, key: &str) -> Option<f64> {
        self.median.get(key).copied().flatten()
    }
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

/// Median of each numeric metric field, skipping absent values.
pub fn median_metrics<'a>(metrics: impl Iterator<Item = &'a Metrics>) -> BTreeMap<String, Option<f64>> {
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for m in metrics {
        let serde_json::Value::Object(map) = serde_json::to_value(m).expect("metrics serialize") else {
            unreachable!("metrics serialize to an object");
        };
        for (key, value) in map {
            let column = columns.entry(key).or_default();
            if let Some(v) = value.as_f64() {
                column.push(v);
            }
        }
    }
    columns.into_iter().map(|(k, mut v)| (k, median(&mut v))).collect()
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{file_name}.tmp"));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes to JSON");
    s.push('\n');
    s
}

pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in trace {
        w.serialize(row).expect("trace row serializes");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("CSV is UTF-8")
}

pub fn read_trace_csv(reader: impl Read) -> Result<Vec<TraceRow>, CliError> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Runtime(format!("trace parse error: {e}")))
}

pub fn run_dir(root: &Path, sc: &ScenarioConfig) -> PathBuf {
    root.join(&sc.name).join(sc.controller.as_str())
}

pub fn seed_dir(root: &Path, sc: &ScenarioConfig) -> PathBuf {
    run_dir(root, sc).join(format!("seed_{}", sc.seed))
}

/// Writes the selected per-run files under [`seed_dir`].
pub fn write_run(root: &Path, sc: &ScenarioConfig, out: &RunOutput, emit: EmitFlags) -> Result<PathBuf, CliError> {
    let dir = seed_dir(root, sc);
    if emit.trace {
        write_atomic(&dir.join("trace.csv"), trace_to_csv(&out.trace).as_bytes())?;
    }
    if emit.summary {
        write_atomic(&dir.join("summary.json"), to_json(&RunSummary::new(sc, out)).as_bytes())?;
        write_atomic(&dir.join("timing.json"), to_json(&RunTiming { seed: sc.seed, solver: out.timing }).as_bytes())?;
    }
    if emit.plot {
        write_atomic(&dir.join("trajectory.svg"), render_svg(&out.trace, sc).as_bytes())?;
    }
    Ok(dir)
}
