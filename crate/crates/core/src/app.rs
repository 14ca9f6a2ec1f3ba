//! Scenario execution behind the command-line tool: simulate, verify,
//! steady-state and feasibility queries, and parameter sweeps.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 solver failure,
//! 3 failed verification, 4 infeasible reference.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{read_value, scenario_from_value, set_path, ConfigError, Scenario};
use crate::harness::{run_suite, VerificationReport};
use crate::integrator::{simulate, Scheme, SimulationError, Trajectory};
use crate::plant::{feasible_input, steady_state, Feasibility, PlantError, SteadyStatePair};

/// Environment variable capping the number of concurrent sweep entries.
pub const THREADS_ENV: &str = "MONOTONE_TRACK_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {message}")]
    Output { path: PathBuf, message: String },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("reference {reference:?} is not attained by any steady state with input in K")]
    Infeasible { reference: Vec<f64> },
    #[error("verification failed: {}", .failed.join(", "))]
    Verification { failed: Vec<String> },
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) | AppError::Output { .. } => 1,
            AppError::Solver(_) => 2,
            AppError::Verification { .. } => 3,
            AppError::Infeasible { .. } => 4,
        }
    }
}

impl From<PlantError> for AppError {
    fn from(e: PlantError) -> Self {
        AppError::Solver(e.to_string())
    }
}

/// Command-line overrides applied on top of the scenario file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub scheme: Option<Scheme>,
    pub step: Option<f64>,
    pub horizon: Option<f64>,
}

impl Overrides {
    /// Edits the raw scenario so that overridden values go through the same
    /// validation as values from the file.
    pub fn apply(&self, value: &mut Value) {
        if let Some(Value::Object(integ)) = value.get_mut("integrator") {
            if let Some(scheme) = self.scheme {
                integ.insert("scheme".into(), json!(scheme.to_string()));
            }
            if let Some(h) = self.step {
                integ.insert("h".into(), json!(h));
            }
            if let Some(t) = self.horizon {
                integ.insert("T".into(), json!(t));
            }
        }
        if let (Some(seed), Value::Object(root)) = (self.seed, &mut *value) {
            let verify = root.entry("verify").or_insert_with(|| json!({}));
            if let Value::Object(v) = verify {
                v.insert("seed".into(), json!(seed));
            }
        }
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        match &self.out_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }
}

/// Loads a scenario file with the overrides applied.
pub fn load(path: &Path, overrides: &Overrides) -> Result<Scenario, AppError> {
    let mut value = read_value(path)?;
    overrides.apply(&mut value);
    Ok(scenario_from_value(value)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub plant: String,
    pub reference: Vec<f64>,
    pub u_star: Vec<f64>,
    pub final_state: Vec<f64>,
    pub final_z: Vec<f64>,
    pub final_output: Vec<f64>,
    pub dist_to_star: f64,
    pub steps: usize,
    /// Seconds spent in the simulation.
    pub wall_time: f64,
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn create_parent(path: &Path) -> Result<(), AppError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| AppError::Output {
            path: parent.to_path_buf(),
            message: e.to_string(),
        })?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), AppError> {
    create_parent(path)?;
    let out = |message: String| AppError::Output {
        path: path.to_path_buf(),
        message,
    };
    let file = fs::File::create(path).map_err(|e| out(e.to_string()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value).map_err(|e| out(e.to_string()))
}

fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), AppError> {
    create_parent(path)?;
    let out = |message: String| AppError::Output {
        path: path.to_path_buf(),
        message,
    };
    let file = fs::File::create(path).map_err(|e| out(e.to_string()))?;
    traj.write_csv(BufWriter::new(file)).map_err(|e| out(e.to_string()))
}

/// Steady-state pair for the configured reference, or [`AppError::Infeasible`].
pub fn resolve_pair(scenario: &Scenario) -> Result<SteadyStatePair, AppError> {
    let cfg = &scenario.closed_loop;
    match feasible_input(scenario.plant.as_ref(), &cfg.reference, &cfg.constraint)? {
        Feasibility::Feasible(pair) => Ok(pair),
        Feasibility::Infeasible => Err(AppError::Infeasible {
            reference: vec_of(&cfg.reference),
        }),
    }
}

pub struct OutputPaths {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub report: PathBuf,
}

impl OutputPaths {
    pub fn for_scenario(scenario: &Scenario, overrides: &Overrides) -> Self {
        let out = &scenario.config.output;
        let summary = out
            .summary_path
            .clone()
            .unwrap_or_else(|| out.csv_path.with_extension("summary.json"));
        Self {
            csv: overrides.resolve(&out.csv_path),
            summary: overrides.resolve(&summary),
            report: overrides.resolve(&out.report_path),
        }
    }
}

/// Resolves the feasible pair, simulates, and writes the trajectory CSV and
/// the JSON summary. A failed step still writes the partial trajectory.
pub fn run_scenario(scenario: &Scenario, paths: &OutputPaths) -> Result<RunSummary, AppError> {
    let pair = resolve_pair(scenario)?;
    let plant = scenario.plant.as_ref();
    let cfg = &scenario.closed_loop;
    let start = Instant::now();
    let traj = match simulate(plant, cfg, &scenario.x0, &scenario.z0, Some(&pair)) {
        Ok(traj) => traj,
        Err(SimulationError::StepFailed { partial, index, time, source }) => {
            write_trajectory(&paths.csv, &partial)?;
            return Err(AppError::Solver(format!("step {index} (t = {time}) failed: {source}")));
        }
        Err(SimulationError::Config(msg)) => {
            return Err(ConfigError::Invalid(vec![crate::config::FieldError {
                path: "integrator".into(),
                message: msg,
            }])
            .into())
        }
        Err(e) => return Err(AppError::Solver(e.to_string())),
    };
    let wall_time = start.elapsed().as_secs_f64();
    write_trajectory(&paths.csv, &traj)?;
    let last = traj.len() - 1;
    let summary = RunSummary {
        plant: plant.name().to_string(),
        reference: vec_of(&cfg.reference),
        u_star: vec_of(&pair.u_star),
        final_state: vec_of(&traj.states[last]),
        final_z: vec_of(&traj.z_values[last]),
        final_output: vec_of(&traj.outputs[last]),
        dist_to_star: traj.dist_to_star.get(last).copied().unwrap_or(f64::NAN),
        steps: last,
        wall_time,
    };
    write_json(&paths.summary, &summary)?;
    Ok(summary)
}

pub fn run_simulate(config: &Path, overrides: &Overrides) -> Result<RunSummary, AppError> {
    let scenario = load(config, overrides)?;
    let paths = OutputPaths::for_scenario(&scenario, overrides);
    run_scenario(&scenario, &paths)
}

/// Runs the full verification suite and writes the report. The report is
/// written even when some check fails.
pub fn run_verify(config: &Path, overrides: &Overrides) -> Result<VerificationReport, AppError> {
    let scenario = load(config, overrides)?;
    let paths = OutputPaths::for_scenario(&scenario, overrides);
    let pair = resolve_pair(&scenario)?;
    let report = run_suite(
        scenario.plant.as_ref(),
        &scenario.closed_loop,
        &pair,
        &scenario.x0,
        &scenario.z0,
        &scenario.suite_options(),
    );
    write_json(&paths.report, &report)?;
    if report.passed {
        Ok(report)
    } else {
        let failed = report
            .records
            .iter()
            .filter(|r| !r.passed && !r.informational)
            .map(|r| format!("{}[{}]", r.name, r.plant))
            .collect();
        Err(AppError::Verification { failed })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairSummary {
    pub feasible: bool,
    pub u_star: Option<Vec<f64>>,
    pub x_star: Option<Vec<f64>>,
    pub output: Option<Vec<f64>>,
}

impl PairSummary {
    fn from_pair(scenario: &Scenario, pair: &SteadyStatePair) -> Self {
        Self {
            feasible: true,
            u_star: Some(vec_of(&pair.u_star)),
            x_star: Some(vec_of(&pair.x_star)),
            output: Some(vec_of(&pair.output(scenario.plant.as_ref()))),
        }
    }
}

/// Steady state of the configured plant for the constant input `u`.
pub fn run_steady(config: &Path, overrides: &Overrides, u: &[f64]) -> Result<PairSummary, AppError> {
    let scenario = load(config, overrides)?;
    let pair = steady_state(scenario.plant.as_ref(), &DVector::from_column_slice(u))?;
    Ok(PairSummary::from_pair(&scenario, &pair))
}

/// Feasible input for reference `r` within the configured `K`.
pub fn run_feasible(config: &Path, overrides: &Overrides, r: &[f64]) -> Result<PairSummary, AppError> {
    let scenario = load(config, overrides)?;
    let cfg = &scenario.closed_loop;
    match feasible_input(scenario.plant.as_ref(), &DVector::from_column_slice(r), &cfg.constraint)? {
        Feasibility::Feasible(pair) => Ok(PairSummary::from_pair(&scenario, &pair)),
        Feasibility::Infeasible => Err(AppError::Infeasible { reference: r.to_vec() }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub value: Value,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<RunSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub parameter: String,
    pub csv: PathBuf,
    pub rows: Vec<SweepRow>,
}

impl SweepSummary {
    /// Infeasible entries are data points of the sweep, not failures.
    pub fn exit_code(&self) -> i32 {
        self.rows
            .iter()
            .map(|r| r.exit_code)
            .filter(|c| *c != 4)
            .max()
            .unwrap_or(0)
    }
}

fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|n| *n > 0)
}

fn entry_path(path: &Path, index: usize) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("trajectory");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}_{index:03}.{ext}"))
}

fn sweep_entry(base: &Value, parameter: &str, index: usize, value: &Value, overrides: &Overrides) -> SweepRow {
    let result = (|| {
        let mut v = base.clone();
        set_path(&mut v, parameter, value.clone())?;
        if let Value::Object(root) = &mut v {
            root.remove("sweep");
        }
        let scenario = scenario_from_value(v)?;
        let base_paths = OutputPaths::for_scenario(&scenario, overrides);
        let paths = OutputPaths {
            csv: entry_path(&base_paths.csv, index),
            summary: entry_path(&base_paths.summary, index),
            report: base_paths.report,
        };
        run_scenario(&scenario, &paths)
    })();
    match result {
        Ok(summary) => SweepRow {
            index,
            value: value.clone(),
            exit_code: 0,
            error: None,
            summary: Some(summary),
        },
        Err(e) => SweepRow {
            index,
            value: value.clone(),
            exit_code: e.exit_code(),
            error: Some(e.to_string()),
            summary: None,
        },
    }
}

/// Runs one simulation per sweep value, concurrently, and merges the results
/// in sweep order into one CSV keyed by the swept value.
pub fn run_sweep(config: &Path, overrides: &Overrides) -> Result<SweepSummary, AppError> {
    let mut base = read_value(config)?;
    overrides.apply(&mut base);
    // validates the base scenario and extracts the sweep block
    let scenario = scenario_from_value(base.clone())?;
    let Some(sweep) = scenario.config.sweep.clone() else {
        return Err(ConfigError::Invalid(vec![crate::config::FieldError {
            path: "sweep".into(),
            message: "the scenario has no sweep block".into(),
        }])
        .into());
    };
    let run = || -> Vec<SweepRow> {
        sweep
            .values
            .par_iter()
            .enumerate()
            .map(|(i, value)| sweep_entry(&base, &sweep.parameter, i, value, overrides))
            .collect()
    };
    let rows = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| AppError::Solver(e.to_string()))?
            .install(run),
        None => run(),
    };
    let base_csv = OutputPaths::for_scenario(&scenario, overrides).csv;
    let stem = base_csv.file_stem().and_then(|s| s.to_str()).unwrap_or("trajectory");
    let csv = base_csv.with_file_name(format!("{stem}_sweep.csv"));
    write_sweep_csv(&csv, &rows)?;
    Ok(SweepSummary {
        parameter: sweep.parameter,
        csv,
        rows,
    })
}

fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), AppError> {
    create_parent(path)?;
    let out = |message: String| AppError::Output {
        path: path.to_path_buf(),
        message,
    };
    let width = |f: fn(&RunSummary) -> usize| rows.iter().filter_map(|r| r.summary.as_ref().map(f)).max().unwrap_or(0);
    let m = width(|s| s.final_output.len());
    let mut header = vec!["index".to_string(), "value".into(), "exit_code".into()];
    header.extend((0..m).map(|i| format!("u_star_{i}")));
    header.extend((0..m).map(|i| format!("y_{i}")));
    header.extend((0..m).map(|i| format!("z_{i}")));
    header.extend(["dist_to_star".into(), "steps".into(), "error".into()]);
    let mut writer = csv::Writer::from_path(path).map_err(|e| out(e.to_string()))?;
    writer.write_record(&header).map_err(|e| out(e.to_string()))?;
    let cols = |v: Option<&Vec<f64>>| -> Vec<String> {
        (0..m)
            .map(|i| v.and_then(|v| v.get(i)).map_or(String::new(), |x| format!("{x:.16e}")))
            .collect()
    };
    for row in rows {
        let s = row.summary.as_ref();
        let mut record = vec![row.index.to_string(), row.value.to_string(), row.exit_code.to_string()];
        record.extend(cols(s.map(|s| &s.u_star)));
        record.extend(cols(s.map(|s| &s.final_output)));
        record.extend(cols(s.map(|s| &s.final_z)));
        record.push(s.map_or(String::new(), |s| format!("{:.16e}", s.dist_to_star)));
        record.push(s.map_or(String::new(), |s| s.steps.to_string()));
        record.push(row.error.clone().unwrap_or_default());
        writer.write_record(&record).map_err(|e| out(e.to_string()))?;
    }
    writer.flush().map_err(|e| out(e.to_string()))
}
