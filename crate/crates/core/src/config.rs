//! JSON scenario files.
//!
//! A scenario is parsed in two passes: serde checks the shape (with the
//! offending field path on failure), then [`ScenarioConfig::build`] checks
//! the semantics and instantiates the plant. Every problem is reported with
//! the dotted path of the field that caused it.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::harness::SuiteOptions;
use crate::integrator::{ClosedLoopConfig, Scheme, INITIAL_PROJECTION_TOL};
use crate::node::NodePlant;
use crate::plant::Plant;
use crate::plaplacian::{PLaplacianPlant, PdeParams};
use crate::rlc::{RlcParams, RlcPlant};
use crate::sets::{ConvexSet, ConvexSetSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scenario:\n{}", format_fields(.0))]
    Invalid(Vec<FieldError>),
}

fn format_fields(errors: &[FieldError]) -> String {
    errors.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n")
}

impl ConfigError {
    fn field(path: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid(vec![FieldError {
            path: path.to_string(),
            message: message.into(),
        }])
    }

    /// Field errors carried by this error, if any.
    pub fn fields(&self) -> &[FieldError] {
        match self {
            ConfigError::Invalid(errors) => errors,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantSpec {
    Rlc(RlcParams),
    /// Either explicit `S`, `D`, `B` matrices (row-major nested lists) or a
    /// seeded random node of size `n × m` with `q` damping columns.
    LinearNode {
        k: f64,
        #[serde(default, rename = "S")]
        s: Option<Vec<Vec<f64>>>,
        #[serde(default, rename = "D")]
        d: Option<Vec<Vec<f64>>>,
        #[serde(default, rename = "B")]
        b: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        n: Option<usize>,
        #[serde(default)]
        m: Option<usize>,
        #[serde(default)]
        q: Option<usize>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Plaplacian(PdeParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub r: Vec<f64>,
    #[serde(rename = "K")]
    pub k: ConvexSetSpec,
}

fn default_solver_tol() -> f64 {
    1e-12
}

fn default_solver_max_iter() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    #[serde(default)]
    pub scheme: Scheme,
    pub h: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default = "default_solver_tol")]
    pub solver_tol: f64,
    #[serde(default = "default_solver_max_iter")]
    pub solver_max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    /// Defaults to the zero state.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    pub z0: Vec<f64>,
}

fn default_csv_path() -> PathBuf {
    PathBuf::from("trajectory.csv")
}

fn default_report_path() -> PathBuf {
    PathBuf::from("report.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_csv_path")]
    pub csv_path: PathBuf,
    #[serde(default = "default_report_path")]
    pub report_path: PathBuf,
    /// Defaults to the trajectory path with a `.summary.json` suffix.
    #[serde(default)]
    pub summary_path: Option<PathBuf>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            csv_path: default_csv_path(),
            report_path: default_report_path(),
            summary_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Dotted path into the scenario, numeric segments index arrays, e.g.
    /// `controller.r.0`.
    pub parameter: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    pub seed: u64,
    pub pairs: usize,
    pub starts: usize,
    pub samples: usize,
    pub pair_horizon: f64,
    pub convergence_tol: f64,
}

impl Default for VerifySpec {
    fn default() -> Self {
        let o = SuiteOptions::default();
        Self {
            seed: o.seed,
            pairs: o.pairs,
            starts: o.starts,
            samples: o.samples,
            pair_horizon: o.pair_horizon,
            convergence_tol: o.convergence_tol,
        }
    }
}

impl From<VerifySpec> for SuiteOptions {
    fn from(v: VerifySpec) -> Self {
        SuiteOptions {
            seed: v.seed,
            pairs: v.pairs,
            starts: v.starts,
            samples: v.samples,
            pair_horizon: v.pair_horizon,
            convergence_tol: v.convergence_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub plant: PlantSpec,
    pub controller: ControllerSpec,
    pub integrator: IntegratorSpec,
    pub initial: InitialSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub verify: VerifySpec,
}

/// A validated scenario with its plant instantiated.
#[derive(Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub plant: Box<dyn Plant>,
    pub closed_loop: ClosedLoopConfig,
    pub x0: DVector<f64>,
    pub z0: DVector<f64>,
}

impl Scenario {
    pub fn suite_options(&self) -> SuiteOptions {
        self.config.verify.into()
    }
}

/// Reads a JSON scenario file without validating it.
pub fn read_value(path: &Path) -> Result<Value, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads, type-checks and validates a scenario file.
pub fn parse_config(path: &Path) -> Result<Scenario, ConfigError> {
    scenario_from_value(read_value(path)?)
}

pub fn scenario_from_value(value: Value) -> Result<Scenario, ConfigError> {
    let config: ScenarioConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::field(&path, e.into_inner().to_string())
    })?;
    config.build()
}

/// Replaces the value at a dotted path; numeric segments index arrays.
pub fn set_path(root: &mut Value, path: &str, new_value: Value) -> Result<(), ConfigError> {
    let mut node = root;
    for segment in path.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(segment),
            Value::Array(items) => segment.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| ConfigError::field("sweep.parameter", format!("path `{path}` does not exist in the scenario")))?;
    }
    *node = new_value;
    Ok(())
}

fn matrix(path: &str, rows: &[Vec<f64>], errors: &mut Vec<FieldError>) -> Option<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        errors.push(FieldError {
            path: path.into(),
            message: "must be a non-empty rectangular list of rows".into(),
        });
        return None;
    }
    Some(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl ScenarioConfig {
    /// Checks the semantics and instantiates the plant.
    pub fn build(&self) -> Result<Scenario, ConfigError> {
        let mut errors = Vec::new();
        let mut push = |path: &str, message: String| {
            errors.push(FieldError {
                path: path.into(),
                message,
            })
        };

        let integ = &self.integrator;
        if !(integ.h.is_finite() && integ.h > 0.0) {
            push("integrator.h", format!("step must be positive, got {}", integ.h));
        }
        if !(integ.horizon.is_finite() && integ.horizon >= integ.h) {
            push("integrator.T", format!("horizon {} must be at least the step {}", integ.horizon, integ.h));
        }
        if !(integ.solver_tol.is_finite() && integ.solver_tol > 0.0) {
            push("integrator.solver_tol", format!("must be positive, got {}", integ.solver_tol));
        }
        if integ.solver_max_iter == 0 {
            push("integrator.solver_max_iter", "must be positive".into());
        }
        if self.controller.r.iter().any(|v| !v.is_finite()) {
            push("controller.r", "must be finite".into());
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                push("sweep.values", "must not be empty".into());
            }
        }
        let v = &self.verify;
        if v.pairs == 0 || v.starts == 0 || v.samples == 0 {
            push("verify", "pairs, starts and samples must be positive".into());
        }
        if !(v.convergence_tol > 0.0) || !(v.pair_horizon > 0.0) {
            push("verify", "convergence_tol and pair_horizon must be positive".into());
        }

        let set = match ConvexSet::try_from(&self.controller.k) {
            Ok(set) => Some(set),
            Err(e) => {
                push("controller.K", set_error_message(&self.controller.k, e.to_string()));
                None
            }
        };

        let plant = self.build_plant(&mut errors);
        if let (Some(plant), Some(set)) = (&plant, &set) {
            let m = plant.input_dim();
            let mut dim = |path: &str, got: usize, expected: usize| {
                if got != expected {
                    errors.push(FieldError {
                        path: path.into(),
                        message: format!("has dimension {got}, the plant input has dimension {expected}"),
                    });
                    false
                } else {
                    true
                }
            };
            dim("controller.r", self.controller.r.len(), m);
            let set_ok = dim("controller.K", set.dim(), m);
            let z_ok = dim("initial.z0", self.initial.z0.len(), m);
            if let Some(x0) = &self.initial.x0 {
                if x0.len() != plant.state_dim() {
                    errors.push(FieldError {
                        path: "initial.x0".into(),
                        message: format!("has dimension {}, the plant state has dimension {}", x0.len(), plant.state_dim()),
                    });
                } else if x0.iter().any(|v| !v.is_finite()) {
                    errors.push(FieldError {
                        path: "initial.x0".into(),
                        message: "must be finite".into(),
                    });
                }
            }
            if set_ok && z_ok {
                let z0 = DVector::from_column_slice(&self.initial.z0);
                match set.distance(&z0) {
                    Ok(d) if d > INITIAL_PROJECTION_TOL => errors.push(FieldError {
                        path: "initial.z0".into(),
                        message: format!(
                            "lies {d:e} outside controller.K; the integrator state must start in K because the projected integrator keeps it there for all times"
                        ),
                    }),
                    Ok(_) => {}
                    Err(e) => errors.push(FieldError {
                        path: "initial.z0".into(),
                        message: e.to_string(),
                    }),
                }
            }
        }

        if !errors.is_empty() {
            return Err(ConfigError::Invalid(errors));
        }
        let plant = plant.expect("plant built when no errors");
        let set = set.expect("set built when no errors");
        let closed_loop = ClosedLoopConfig {
            reference: DVector::from_column_slice(&self.controller.r),
            constraint: set,
            step: integ.h,
            horizon: integ.horizon,
            scheme: integ.scheme,
            solver_tol: integ.solver_tol,
            solver_max_iter: integ.solver_max_iter,
        };
        let x0 = match &self.initial.x0 {
            Some(x) => DVector::from_column_slice(x),
            None => DVector::zeros(plant.state_dim()),
        };
        let z0 = DVector::from_column_slice(&self.initial.z0);
        Ok(Scenario {
            config: self.clone(),
            plant,
            closed_loop,
            x0,
            z0,
        })
    }

    fn build_plant(&self, errors: &mut Vec<FieldError>) -> Option<Box<dyn Plant>> {
        let result: Result<Box<dyn Plant>, String> = match &self.plant {
            PlantSpec::Rlc(params) => RlcPlant::new(*params).map(|p| Box::new(p) as Box<dyn Plant>).map_err(|e| e.to_string()),
            PlantSpec::Plaplacian(params) => {
                PLaplacianPlant::new(*params).map(|p| Box::new(p) as Box<dyn Plant>).map_err(|e| e.to_string())
            }
            PlantSpec::LinearNode {
                k,
                s,
                d,
                b,
                n,
                m,
                q,
                seed,
            } => match (s, d, b, n, m, q) {
                (Some(s), Some(d), Some(b), None, None, None) => {
                    let before = errors.len();
                    let s = matrix("plant.S", s, errors);
                    let d = matrix("plant.D", d, errors);
                    let b = matrix("plant.B", b, errors);
                    if errors.len() > before {
                        return None;
                    }
                    NodePlant::new(s.unwrap(), d.unwrap(), b.unwrap(), *k)
                        .map(|p| Box::new(p) as Box<dyn Plant>)
                        .map_err(|e| e.to_string())
                }
                (None, None, None, Some(n), Some(m), Some(q)) => NodePlant::random(*n, *m, *q, *k, seed.unwrap_or(0))
                    .map(|p| Box::new(p) as Box<dyn Plant>)
                    .map_err(|e| e.to_string()),
                _ => Err("give either all of S, D, B or all of n, m, q (with an optional seed)".into()),
            },
        };
        match result {
            Ok(p) => Some(p),
            Err(message) => {
                errors.push(FieldError {
                    path: "plant".into(),
                    message,
                });
                None
            }
        }
    }
}

/// Names the offending bound for box sets so the message points at a field.
fn set_error_message(spec: &ConvexSetSpec, fallback: String) -> String {
    if let ConvexSetSpec::Box { lower, upper } = spec {
        if lower.len() == upper.len() {
            if let Some(i) = lower.iter().zip(upper).position(|(l, u)| l > u) {
                return format!("lower[{i}] = {} exceeds upper[{i}] = {}", lower[i], upper[i]);
            }
        }
    }
    fallback
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn rlc_value() -> Value {
        json!({
            "plant": {"name": "rlc", "C": 1.0, "L1": 1.0, "L2": 1.0, "R": 2.0},
            "controller": {"r": [2.0], "K": {"type": "box", "lower": [0.25], "upper": [3.0]}},
            "integrator": {"scheme": "implicit", "h": 1e-3, "T": 50.0},
            "initial": {"x0": [0.0, 0.0, 0.0], "z0": [0.5]}
        })
    }

    fn paths(err: ConfigError) -> Vec<String> {
        err.fields().iter().map(|f| f.path.clone()).collect()
    }

    #[test]
    fn parses_minimal_rlc() {
        let s = scenario_from_value(rlc_value()).unwrap();
        assert_eq!(s.plant.name(), "rlc");
        assert_eq!(s.closed_loop.solver_tol, 1e-12);
        assert_eq!(s.config.output.csv_path, PathBuf::from("trajectory.csv"));
    }

    #[test]
    fn inverted_bounds_name_the_field() {
        let mut v = rlc_value();
        set_path(&mut v, "controller.K.lower.0", json!(4.0)).unwrap();
        let err = scenario_from_value(v).unwrap_err();
        assert!(err.to_string().contains("lower[0]"));
        assert!(paths(err).contains(&"controller.K".to_string()));
    }

    #[test]
    fn z0_outside_k_is_rejected() {
        let mut v = rlc_value();
        set_path(&mut v, "initial.z0.0", json!(0.1)).unwrap();
        assert_eq!(paths(scenario_from_value(v).unwrap_err()), vec!["initial.z0"]);
    }

    #[test]
    fn zero_solver_tol_is_rejected() {
        let mut v = rlc_value();
        v["integrator"]["solver_tol"] = json!(0.0);
        assert_eq!(paths(scenario_from_value(v).unwrap_err()), vec!["integrator.solver_tol"]);
    }

    #[test]
    fn shape_errors_carry_paths() {
        let mut v = rlc_value();
        v["integrator"]["h"] = json!("fast");
        assert_eq!(paths(scenario_from_value(v).unwrap_err()), vec!["integrator.h"]);
        let mut v = rlc_value();
        v["plant"]["name"] = json!("tokamak");
        assert_eq!(paths(scenario_from_value(v).unwrap_err()), vec!["plant.name"]);
    }

    #[test]
    fn negative_resistance_fails_at_build() {
        let mut v = rlc_value();
        v["plant"]["R"] = json!(-1.0);
        assert_eq!(paths(scenario_from_value(v).unwrap_err()), vec!["plant"]);
    }

    #[test]
    fn several_errors_are_collected() {
        let mut v = rlc_value();
        v["integrator"]["solver_tol"] = json!(0.0);
        v["initial"]["x0"] = json!([0.0]);
        let p = paths(scenario_from_value(v).unwrap_err());
        assert!(p.contains(&"integrator.solver_tol".to_string()));
        assert!(p.contains(&"initial.x0".to_string()));
    }

    #[test]
    fn set_path_rejects_missing_segments() {
        let mut v = rlc_value();
        assert!(set_path(&mut v, "controller.r.3", json!(1.0)).is_err());
        assert!(set_path(&mut v, "controller.gain", json!(1.0)).is_err());
    }

    #[test]
    fn node_accepts_random_or_explicit() {
        let mut v = rlc_value();
        v["plant"] = json!({"name": "linear_node", "k": 0.5, "n": 6, "m": 1, "q": 3, "seed": 42});
        v["initial"]["x0"] = Value::Null;
        let s = scenario_from_value(v.clone()).unwrap();
        assert_eq!(s.plant.state_dim(), 6);
        assert_eq!(s.x0.len(), 6);
        v["plant"] = json!({
            "name": "linear_node", "k": 1.0,
            "S": [[0.0, 1.0], [-1.0, 0.0]], "D": [[1.0], [0.0]], "B": [[0.0], [1.0]]
        });
        assert_eq!(scenario_from_value(v.clone()).unwrap().plant.state_dim(), 2);
        v["plant"]["n"] = json!(3);
        assert_eq!(paths(scenario_from_value(v).unwrap_err()), vec!["plant"]);
    }
}
