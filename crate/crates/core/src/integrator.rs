//! Fixed-step time discretization of the closed loop
//!
//! ```text
//! ẋ ∈ A(x, z),    ż ∈ r − g(x, z) − N_K(z)
//! ```
//!
//! by the fully implicit Euler scheme (one resolvent of the coupled operator
//! per step) or by a semi-implicit splitting that freezes `z` during the
//! state update and then projects the integrator update onto `K`.

use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::plant::{
    dissipation_h, product_distance_sq, GraphPoint, Plant, PlantError, SolverOptions, SteadyStatePair,
    StepInput,
};
use crate::sets::ConvexSet;

/// Distance below which an initial integrator state outside `K` is
/// projected instead of rejected.
pub const INITIAL_PROJECTION_TOL: f64 = 1e-9;
/// Tolerance of the constraint invariant `z ∈ K` along trajectories.
pub const CONSTRAINT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Implicit,
    Splitting,
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "implicit" => Ok(Scheme::Implicit),
            "splitting" => Ok(Scheme::Splitting),
            other => Err(format!("unknown scheme `{other}` (expected implicit or splitting)")),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Implicit => "implicit",
            Scheme::Splitting => "splitting",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopConfig {
    pub reference: DVector<f64>,
    pub constraint: ConvexSet,
    pub step: f64,
    pub horizon: f64,
    pub scheme: Scheme,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
}

impl ClosedLoopConfig {
    pub fn new(reference: DVector<f64>, constraint: ConvexSet, step: f64, horizon: f64) -> Self {
        Self {
            reference,
            constraint,
            step,
            horizon,
            scheme: Scheme::Implicit,
            solver_tol: 1e-12,
            solver_max_iter: 200,
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.solver_tol,
            max_iter: self.solver_max_iter,
        }
    }

    /// Number of steps covering `[0, T]`.
    pub fn steps(&self) -> usize {
        (self.horizon / self.step).round() as usize
    }

    pub fn validate(&self, plant: &dyn Plant) -> Result<(), SimulationError> {
        let bad = |msg: String| Err(SimulationError::Config(msg));
        if !(self.step.is_finite() && self.step > 0.0) {
            return bad(format!("step must be positive, got {}", self.step));
        }
        if !(self.horizon.is_finite() && self.horizon >= self.step) {
            return bad(format!("horizon {} must be at least the step {}", self.horizon, self.step));
        }
        if !(self.solver_tol.is_finite() && self.solver_tol > 0.0) {
            return bad(format!("solver_tol must be positive, got {}", self.solver_tol));
        }
        if self.solver_max_iter == 0 {
            return bad("solver_max_iter must be positive".into());
        }
        if self.reference.len() != plant.input_dim() {
            return bad(format!(
                "reference has dimension {}, plant output has dimension {}",
                self.reference.len(),
                plant.input_dim()
            ));
        }
        if self.constraint.dim() != plant.input_dim() {
            return bad(format!(
                "constraint has dimension {}, plant input has dimension {}",
                self.constraint.dim(),
                plant.input_dim()
            ));
        }
        Ok(())
    }
}

/// Result of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    /// `(x − x_prev)/h`, an element of `A(x, selection_input)`.
    pub selection: DVector<f64>,
    /// Input at which `selection` is a dynamics selection: `z` for the
    /// implicit scheme, `z_prev` for the splitting scheme.
    pub selection_input: DVector<f64>,
    /// Realized normal-cone element `r − g(x, z) − (z − z_prev)/h`.
    pub z_force: DVector<f64>,
}

fn implicit_raw(
    plant: &dyn Plant,
    cfg: &ClosedLoopConfig,
    step: f64,
    x_prev: &DVector<f64>,
    z_prev: &DVector<f64>,
) -> Result<StepOutcome, PlantError> {
    let input = StepInput {
        step,
        x_prev,
        z_prev,
        reference: &cfg.reference,
        constraint: &cfg.constraint,
        options: cfg.options(),
    };
    let (x, z) = plant.coupled_resolvent(&input)?;
    let z_force = &cfg.reference - plant.output(&x, &z) - (&z - z_prev) / step;
    Ok(StepOutcome {
        selection: (&x - x_prev) / step,
        selection_input: z.clone(),
        x,
        z,
        z_force,
    })
}

fn splitting_raw(
    plant: &dyn Plant,
    cfg: &ClosedLoopConfig,
    step: f64,
    x_prev: &DVector<f64>,
    z_prev: &DVector<f64>,
) -> Result<StepOutcome, PlantError> {
    let x = plant.state_resolvent(step, x_prev, z_prev, cfg.options())?;
    let y = plant.output(&x, z_prev);
    let z = cfg.constraint.project(&(z_prev + (&cfg.reference - &y) * step))?;
    let z_force = &cfg.reference - y - (&z - z_prev) / step;
    Ok(StepOutcome {
        selection: (&x - x_prev) / step,
        selection_input: z_prev.clone(),
        x,
        z,
        z_force,
    })
}

type RawStep = fn(&dyn Plant, &ClosedLoopConfig, f64, &DVector<f64>, &DVector<f64>) -> Result<StepOutcome, PlantError>;

/// Runs one step; on solver failure retries once as two half steps.
fn with_retry(
    raw: RawStep,
    plant: &dyn Plant,
    cfg: &ClosedLoopConfig,
    x_prev: &DVector<f64>,
    z_prev: &DVector<f64>,
) -> Result<StepOutcome, PlantError> {
    let h = cfg.step;
    match raw(plant, cfg, h, x_prev, z_prev) {
        Ok(out) => Ok(out),
        Err(first) => {
            let half = 0.5 * h;
            let Ok(mid) = raw(plant, cfg, half, x_prev, z_prev) else {
                return Err(first);
            };
            let Ok(end) = raw(plant, cfg, half, &mid.x, &mid.z) else {
                return Err(first);
            };
            let z_force = &cfg.reference - plant.output(&end.x, &end.z) - (&end.z - z_prev) / h;
            Ok(StepOutcome {
                selection: (&end.x - x_prev) / h,
                selection_input: end.selection_input,
                x: end.x,
                z: end.z,
                z_force,
            })
        }
    }
}

pub fn step_implicit(
    plant: &dyn Plant,
    cfg: &ClosedLoopConfig,
    x_prev: &DVector<f64>,
    z_prev: &DVector<f64>,
) -> Result<StepOutcome, PlantError> {
    with_retry(implicit_raw, plant, cfg, x_prev, z_prev)
}

pub fn step_splitting(
    plant: &dyn Plant,
    cfg: &ClosedLoopConfig,
    x_prev: &DVector<f64>,
    z_prev: &DVector<f64>,
) -> Result<StepOutcome, PlantError> {
    with_retry(splitting_raw, plant, cfg, x_prev, z_prev)
}

pub fn step(
    plant: &dyn Plant,
    cfg: &ClosedLoopConfig,
    x_prev: &DVector<f64>,
    z_prev: &DVector<f64>,
) -> Result<StepOutcome, PlantError> {
    match cfg.scheme {
        Scheme::Implicit => step_implicit(plant, cfg, x_prev, z_prev),
        Scheme::Splitting => step_splitting(plant, cfg, x_prev, z_prev),
    }
}

/// Sampled closed-loop trajectory. Rows `0..=N` hold `t`, `x`, `z`, `y`;
/// per-step quantities (`selections`, `h_values`, ...) have length `N` and
/// entry `k` belongs to the step from row `k` to row `k + 1`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub z_values: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub selections: Vec<DVector<f64>>,
    pub selection_inputs: Vec<DVector<f64>>,
    pub z_forces: Vec<DVector<f64>>,
    /// Internal dissipation between row `k + 1` (with the step-`k`
    /// selection) and the reference steady state.
    pub h_values: Vec<f64>,
    /// Product-metric distance to the target pair per row; empty without
    /// a target.
    pub dist_to_star: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Graph point at row `row ≥ 1`: the state there with the selection of
    /// the step that reached it.
    pub fn graph_point(&self, row: usize) -> GraphPoint {
        GraphPoint {
            x: self.states[row].clone(),
            u: self.selection_inputs[row - 1].clone(),
            f: self.selections[row - 1].clone(),
        }
    }

    pub fn last_state(&self) -> Option<&DVector<f64>> {
        self.states.last()
    }

    pub fn last_z(&self) -> Option<&DVector<f64>> {
        self.z_values.last()
    }

    pub fn header(&self) -> Vec<String> {
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.z_values.first().map_or(0, |z| z.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("x_{i}")));
        header.extend((0..m).map(|i| format!("z_{i}")));
        header.extend((0..m).map(|i| format!("y_{i}")));
        header.push("h_value".into());
        header.push("dist_to_star".into());
        header
    }

    /// Writes the trajectory as CSV with 17 significant digits; `h_value`
    /// is blank at `t = 0` and `dist_to_star` blank without a target.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(self.header())?;
        for row in 0..self.len() {
            writer.write_record(self.csv_row(row))?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn csv_row(&self, row: usize) -> Vec<String> {
        let fmt = |v: f64| format!("{v:.16e}");
        let mut rec = vec![fmt(self.times[row])];
        rec.extend(self.states[row].iter().copied().map(fmt));
        rec.extend(self.z_values[row].iter().copied().map(fmt));
        rec.extend(self.outputs[row].iter().copied().map(fmt));
        rec.push(if row == 0 {
            String::new()
        } else {
            self.h_values.get(row - 1).copied().map(fmt).unwrap_or_default()
        });
        rec.push(self.dist_to_star.get(row).copied().map(fmt).unwrap_or_default());
        rec
    }
}

/// Row-wise content of a trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub z_values: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub h_values: Vec<Option<f64>>,
    pub dist_to_star: Vec<Option<f64>>,
}

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("malformed trajectory header: {0}")]
    Header(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
}

pub fn read_csv<R: Read>(input: R) -> Result<TrajectoryTable, TableError> {
    let mut reader = csv::Reader::from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let count = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix)).count();
    let (n, m) = (count("x_"), count("z_"));
    if header.len() != 1 + n + 2 * m + 2 || header[0] != "t" || count("y_") != m {
        return Err(TableError::Header(header.join(",")));
    }
    let mut table = TrajectoryTable {
        times: Vec::new(),
        states: Vec::new(),
        z_values: Vec::new(),
        outputs: Vec::new(),
        h_values: Vec::new(),
        dist_to_star: Vec::new(),
    };
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |i: usize| -> Result<Option<f64>, TableError> {
            let field = record.get(i).unwrap_or("");
            if field.is_empty() {
                return Ok(None);
            }
            field.parse().map(Some).map_err(|e| TableError::Row {
                row,
                message: format!("column {i}: {e}"),
            })
        };
        let required = |i: usize| -> Result<f64, TableError> {
            parse(i)?.ok_or_else(|| TableError::Row {
                row,
                message: format!("column {i} is empty"),
            })
        };
        let block = |start: usize, len: usize| -> Result<DVector<f64>, TableError> {
            let values = (start..start + len).map(required).collect::<Result<Vec<_>, _>>()?;
            Ok(DVector::from_vec(values))
        };
        table.times.push(required(0)?);
        table.states.push(block(1, n)?);
        table.z_values.push(block(1 + n, m)?);
        table.outputs.push(block(1 + n + m, m)?);
        table.h_values.push(parse(1 + n + 2 * m)?);
        table.dist_to_star.push(parse(2 + n + 2 * m)?);
    }
    Ok(table)
}

#[derive(Debug, thiserror::Error)]
pub enum SimulationError {
    #[error("invalid closed-loop configuration: {0}")]
    Config(String),
    #[error("initial integrator state lies {distance:e} outside the constraint set")]
    InitialOutsideConstraint { distance: f64 },
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("step {index} (t = {time}) failed: {source}")]
    StepFailed {
        index: usize,
        time: f64,
        source: PlantError,
        partial: Box<Trajectory>,
    },
}

/// Marches the closed loop over `[0, T]` from `(x0, z0)`.
///
/// `h_values` are taken against `target` when given, otherwise against the
/// steady state for zero input. `dist_to_star` is recorded only with a
/// target.
pub fn simulate(
    plant: &dyn Plant,
    cfg: &ClosedLoopConfig,
    x0: &DVector<f64>,
    z0: &DVector<f64>,
    target: Option<&SteadyStatePair>,
) -> Result<Trajectory, SimulationError> {
    cfg.validate(plant)?;
    if x0.len() != plant.state_dim() || x0.iter().any(|v| !v.is_finite()) {
        return Err(SimulationError::Config(format!(
            "initial state must be finite with dimension {}",
            plant.state_dim()
        )));
    }
    if z0.len() != plant.input_dim() {
        return Err(SimulationError::Config(format!(
            "initial integrator state must have dimension {}",
            plant.input_dim()
        )));
    }
    let distance = cfg.constraint.distance(z0).map_err(PlantError::from)?;
    if distance > INITIAL_PROJECTION_TOL {
        return Err(SimulationError::InitialOutsideConstraint { distance });
    }
    let z0 = if distance > 0.0 {
        cfg.constraint.project(z0).map_err(PlantError::from)?
    } else {
        z0.clone()
    };

    let reference_point = match target {
        Some(pair) => GraphPoint {
            x: pair.x_star.clone(),
            u: pair.u_star.clone(),
            f: DVector::zeros(plant.state_dim()),
        },
        None => {
            let u = DVector::zeros(plant.input_dim());
            GraphPoint {
                x: plant.steady_state(&u)?,
                u,
                f: DVector::zeros(plant.state_dim()),
            }
        }
    };

    let n_steps = cfg.steps();
    let mut traj = Trajectory {
        times: Vec::with_capacity(n_steps + 1),
        states: Vec::with_capacity(n_steps + 1),
        z_values: Vec::with_capacity(n_steps + 1),
        outputs: Vec::with_capacity(n_steps + 1),
        ..Trajectory::default()
    };
    let record_distance = |traj: &mut Trajectory, x: &DVector<f64>, z: &DVector<f64>| {
        if let Some(pair) = target {
            traj.dist_to_star
                .push(product_distance_sq(plant, x, z, &pair.x_star, &pair.u_star).sqrt());
        }
    };
    traj.times.push(0.0);
    traj.outputs.push(plant.output(x0, &z0));
    record_distance(&mut traj, x0, &z0);
    traj.states.push(x0.clone());
    traj.z_values.push(z0);

    for k in 0..n_steps {
        let time = (k + 1) as f64 * cfg.step;
        let fail = |traj: Trajectory, source: PlantError| SimulationError::StepFailed {
            index: k,
            time,
            source,
            partial: Box::new(traj),
        };
        let x_prev = &traj.states[k];
        let z_prev = &traj.z_values[k];
        let mut out = match step(plant, cfg, x_prev, z_prev) {
            Ok(out) => out,
            Err(e) => return Err(fail(traj, e)),
        };
        match enforce_constraint(&cfg.constraint, &out.z) {
            Ok(z) => out.z = z,
            Err(e) => return Err(fail(traj, e)),
        }
        let point = GraphPoint {
            x: out.x.clone(),
            u: out.selection_input.clone(),
            f: out.selection.clone(),
        };
        let h = match dissipation_h(plant, &point, &reference_point) {
            Ok(h) => h,
            Err(e) => return Err(fail(traj, e)),
        };
        traj.times.push(time);
        traj.outputs.push(plant.output(&out.x, &out.z));
        record_distance(&mut traj, &out.x, &out.z);
        traj.h_values.push(h);
        traj.selections.push(out.selection);
        traj.selection_inputs.push(out.selection_input);
        traj.z_forces.push(out.z_force);
        traj.states.push(out.x);
        traj.z_values.push(out.z);
    }
    Ok(traj)
}

fn enforce_constraint(set: &ConvexSet, z: &DVector<f64>) -> Result<DVector<f64>, PlantError> {
    if set.contains(z, 0.0)? {
        return Ok(z.clone());
    }
    let distance = set.distance(z)?;
    if distance <= INITIAL_PROJECTION_TOL {
        let projected = set.project(z)?;
        if set.contains(&projected, CONSTRAINT_TOL)? {
            return Ok(projected);
        }
    }
    Err(PlantError::NonConvergence {
        what: "constraint enforcement",
        iterations: 0,
        residual: distance,
    })
}

/// Open-loop march `(x_{k+1} − x_k)/h ∈ A(x_{k+1}, u)` with the input
/// frozen.
pub fn simulate_open_loop(
    plant: &dyn Plant,
    step: f64,
    steps: usize,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    options: SolverOptions,
) -> Result<Vec<DVector<f64>>, PlantError> {
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0.clone());
    for k in 0..steps {
        let next = plant.state_resolvent(step, &states[k], u, options)?;
        states.push(next);
    }
    Ok(states)
}
