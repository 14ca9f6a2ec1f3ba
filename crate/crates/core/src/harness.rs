//! Batch verification of the closed-loop properties: contraction, energy
//! balance, constraint invariance, passivity of the plant, monotonicity of
//! the steady-state map, convergence and uniqueness of the equilibrium.
//!
//! Every check returns a [`CheckRecord`] holding the worst observed value of
//! its statistic, the threshold it is compared against, and the property it
//! certifies. Checks are deterministic given their seed.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::integrator::{self, simulate, simulate_open_loop, ClosedLoopConfig, Scheme, Trajectory};
use crate::plant::{
    metric_norm, probe_dissipativity, product_distance_sq, steady_output, Plant, SteadyStatePair, StepInput,
    DISSIPATION_TOL,
};
use crate::rng::{seeded, SampleRng};
use crate::sets::ConvexSet;

/// Relative per-step growth allowed in distance sequences.
pub const CONTRACTION_REL_SLACK: f64 = 1e-8;
/// Absolute growth allowed on top of the relative slack, covering inner
/// solver tolerances once distances reach rounding level.
pub const CONTRACTION_ABS_SLACK: f64 = 1e-12;
/// Band for the ratio of energy residual maxima at `h` and `h/2`.
pub const ENERGY_RATIO_BAND: (f64, f64) = (1.5, 3.0);
/// Violation allowed in the resolvent and projection property suites.
pub const PROPERTY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bound {
    /// passes when `worst_margin <= tolerance`
    AtMost,
    /// passes when `worst_margin > tolerance`
    Above,
    /// passes when `lower <= worst_margin <= upper`
    Band { lower: f64, upper: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub plant: String,
    /// Property this check certifies.
    pub certifies: String,
    pub samples: usize,
    pub worst_margin: f64,
    pub tolerance: f64,
    pub bound: Bound,
    pub passed: bool,
    /// Informational records do not affect the overall verdict.
    pub informational: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckRecord {
    fn new(name: &str, plant: &str, certifies: &str, samples: usize, worst: f64, tolerance: f64, bound: Bound) -> Self {
        let passed = match bound {
            Bound::AtMost => worst <= tolerance,
            Bound::Above => worst > tolerance,
            Bound::Band { lower, upper } => (lower..=upper).contains(&worst),
        };
        Self {
            name: name.to_string(),
            plant: plant.to_string(),
            certifies: certifies.to_string(),
            samples,
            worst_margin: worst,
            tolerance,
            bound,
            passed,
            informational: false,
            detail: None,
        }
    }

    fn with_detail(mut self, detail: String) -> Self {
        self.detail = Some(detail);
        self
    }

    fn informational(mut self) -> Self {
        self.informational = true;
        self
    }

    fn failed(name: &str, plant: &str, certifies: &str, error: String) -> Self {
        Self {
            name: name.to_string(),
            plant: plant.to_string(),
            certifies: certifies.to_string(),
            samples: 0,
            worst_margin: f64::NAN,
            tolerance: f64::NAN,
            bound: Bound::AtMost,
            passed: false,
            informational: false,
            detail: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub records: Vec<CheckRecord>,
    pub passed: bool,
}

impl VerificationReport {
    /// Orders records by name; the verdict ignores informational records.
    pub fn from_records(mut records: Vec<CheckRecord>) -> Self {
        records.sort_by(|a, b| a.name.cmp(&b.name).then_with(|| a.plant.cmp(&b.plant)));
        let passed = records.iter().all(|r| r.passed || r.informational);
        Self { records, passed }
    }
}

const CONTRACTION: &str = "closed-loop trajectories form a semigroup of contractions in the product metric";
const ENERGY: &str = "closed-loop incremental energy inequality, discretization residual vanishing linearly in the step";
const CONSTRAINT: &str = "the integrator state stays in the constraint set K for all times";
const MONOTONE_IO: &str = "the steady-state input-output map is strictly monotone";
const CONVERGENCE: &str = "output tracking: the closed loop converges to the feasible steady-state pair";
const TRACKING: &str = "output tracking: the plant output converges to the reference";
const UNIQUENESS: &str = "the closed loop possesses at most one equilibrium";
const RESOLVENT: &str = "the coupled implicit step is the resolvent of a maximal dissipative operator, hence nonexpansive";
const PROJECTION: &str = "projection onto a closed convex set is firmly nonexpansive, idempotent and characterized by the normal cone";
const PASSIVITY: &str = "the plant is incrementally passive with the closed-form internal dissipation";
const FIXED_POINT: &str = "steady-state pairs are fixed points of the implicit step";
const MINIMAL_NORM: &str = "the norm of the minimal dynamics selection is nonincreasing along open-loop solutions";
const OPEN_LOOP: &str = "open-loop solutions are unique for a given input signal";

fn random_start(plant: &dyn Plant, set: &ConvexSet, rng: &mut SampleRng) -> (DVector<f64>, DVector<f64>) {
    plant.sample_start(set, rng).expect("constraint set admits sampling")
}

fn random_starts(plant: &dyn Plant, set: &ConvexSet, count: usize, seed: u64) -> Vec<(DVector<f64>, DVector<f64>)> {
    let mut rng = seeded(seed);
    (0..count).map(|_| random_start(plant, set, &mut rng)).collect()
}

fn pair_distances(plant: &dyn Plant, a: &Trajectory, b: &Trajectory) -> Vec<f64> {
    (0..a.len().min(b.len()))
        .map(|k| product_distance_sq(plant, &a.states[k], &a.z_values[k], &b.states[k], &b.z_values[k]).sqrt())
        .collect()
}

/// Largest `(d_{k+1} − d_k)/(d_k + ABS/REL)`; at most `REL` exactly when
/// `d_{k+1} ≤ (1 + REL) d_k + ABS` at every step.
pub fn worst_growth(distances: &[f64]) -> f64 {
    let floor = CONTRACTION_ABS_SLACK / CONTRACTION_REL_SLACK;
    distances
        .windows(2)
        .map(|w| (w[1] - w[0]) / (w[0] + floor))
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn check_contraction(plant: &dyn Plant, cfg: &ClosedLoopConfig, n_pairs: usize, seed: u64) -> CheckRecord {
    let name = "contraction";
    let starts = random_starts(plant, &cfg.constraint, 2 * n_pairs, seed);
    let result: Result<Vec<f64>, String> = (0..n_pairs)
        .into_par_iter()
        .map(|i| {
            let (xa, za) = &starts[2 * i];
            let (xb, zb) = &starts[2 * i + 1];
            let a = simulate(plant, cfg, xa, za, None).map_err(|e| e.to_string())?;
            let b = simulate(plant, cfg, xb, zb, None).map_err(|e| e.to_string())?;
            Ok(worst_growth(&pair_distances(plant, &a, &b)))
        })
        .collect();
    match result {
        Ok(growth) => {
            let worst = growth.into_iter().fold(f64::NEG_INFINITY, f64::max);
            let record = CheckRecord::new(name, plant.name(), CONTRACTION, n_pairs, worst, CONTRACTION_REL_SLACK, Bound::AtMost)
                .with_detail(format!("scheme {}, step {}, horizon {}", cfg.scheme, cfg.step, cfg.horizon));
            match cfg.scheme {
                Scheme::Implicit => record,
                Scheme::Splitting => record.informational(),
            }
        }
        Err(e) => CheckRecord::failed(name, plant.name(), CONTRACTION, e),
    }
}

/// Largest energy residual `½(d²_{k+1} − d²_k)/h + h_k` over the steps
/// `k ≥ 1`, where `h_k` is the internal dissipation between the two
/// trajectories at row `k` (left end of the step).
pub fn max_energy_residual(plant: &dyn Plant, step: f64, a: &Trajectory, b: &Trajectory) -> f64 {
    let d2: Vec<f64> = pair_distances(plant, a, b).iter().map(|d| d * d).collect();
    let mut worst = f64::NEG_INFINITY;
    for k in 1..d2.len().saturating_sub(1) {
        let h = plant.dissipation(&a.graph_point(k), &b.graph_point(k));
        worst = worst.max(0.5 * (d2[k + 1] - d2[k]) / step + h);
    }
    worst
}

pub fn check_energy_inequality(plant: &dyn Plant, cfg: &ClosedLoopConfig, n_pairs: usize, seed: u64) -> CheckRecord {
    let name = "energy_inequality";
    let starts = random_starts(plant, &cfg.constraint, 2 * n_pairs, seed);
    let half = cfg.clone().with_step(0.5 * cfg.step);
    let eps = |c: &ClosedLoopConfig| -> Result<f64, String> {
        let per_pair: Result<Vec<f64>, String> = (0..n_pairs)
            .into_par_iter()
            .map(|i| {
                let (xa, za) = &starts[2 * i];
                let (xb, zb) = &starts[2 * i + 1];
                let a = simulate(plant, c, xa, za, None).map_err(|e| e.to_string())?;
                let b = simulate(plant, c, xb, zb, None).map_err(|e| e.to_string())?;
                Ok(max_energy_residual(plant, c.step, &a, &b))
            })
            .collect();
        Ok(per_pair?.into_iter().fold(f64::NEG_INFINITY, f64::max))
    };
    let (eps_h, eps_half) = match (eps(cfg), eps(&half)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return CheckRecord::failed(name, plant.name(), ENERGY, e),
    };
    let ratio = eps_h / eps_half;
    let (lower, upper) = ENERGY_RATIO_BAND;
    let record = CheckRecord::new(name, plant.name(), ENERGY, n_pairs, ratio, 0.0, Bound::Band { lower, upper })
        .with_detail(format!(
            "max residual {eps_h:e} at step {}, {eps_half:e} at step {}",
            cfg.step, half.step
        ));
    match cfg.scheme {
        Scheme::Implicit => record,
        Scheme::Splitting => record.informational(),
    }
}

pub fn check_constraints(plant_name: &str, trajectory: &Trajectory, set: &ConvexSet) -> CheckRecord {
    let mut worst = 0.0f64;
    let mut first_violation = None;
    for (k, z) in trajectory.z_values.iter().enumerate() {
        let d = set.distance(z).unwrap_or(f64::INFINITY);
        if d > integrator::CONSTRAINT_TOL && first_violation.is_none() {
            first_violation = Some(k);
        }
        worst = worst.max(d);
    }
    let record = CheckRecord::new(
        "constraint_invariance",
        plant_name,
        CONSTRAINT,
        trajectory.len(),
        worst,
        integrator::CONSTRAINT_TOL,
        Bound::AtMost,
    );
    match first_violation {
        Some(k) => record.with_detail(format!("first violation at row {k}")),
        None => record,
    }
}

pub fn check_monotone_io(plant: &dyn Plant, set: &ConvexSet, n_pairs: usize, seed: u64) -> CheckRecord {
    let name = "monotone_io";
    let mut rng = seeded(seed);
    let mut inputs = Vec::with_capacity(n_pairs);
    while inputs.len() < n_pairs {
        let a = set.sample(&mut rng).expect("constraint set admits sampling");
        let b = set.sample(&mut rng).expect("constraint set admits sampling");
        if (&a - &b).norm() > 1e-9 {
            inputs.push((a, b));
        }
    }
    let pairings: Result<Vec<(f64, f64)>, String> = inputs
        .par_iter()
        .map(|(a, b)| {
            let ya = steady_output(plant, a).map_err(|e| e.to_string())?;
            let yb = steady_output(plant, b).map_err(|e| e.to_string())?;
            let du = a - b;
            let pairing = du.dot(&(ya - yb));
            Ok((pairing, pairing / du.norm_squared()))
        })
        .collect();
    match pairings {
        Ok(values) => {
            let min = values.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
            let min_normalized = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
            CheckRecord::new(name, plant.name(), MONOTONE_IO, n_pairs, min, 0.0, Bound::Above)
                .with_detail(format!("minimum pairing per squared input distance {min_normalized:e}"))
        }
        Err(e) => CheckRecord::failed(name, plant.name(), MONOTONE_IO, e),
    }
}

/// Simulates from `(x0, z0)` and checks the final distance to `pair` and the
/// monotone decrease of the distance sequence.
pub fn check_convergence(
    plant: &dyn Plant,
    cfg: &ClosedLoopConfig,
    pair: &SteadyStatePair,
    x0: &DVector<f64>,
    z0: &DVector<f64>,
    tol: f64,
) -> CheckRecord {
    let name = "convergence";
    match simulate(plant, cfg, x0, z0, Some(pair)) {
        Ok(traj) => convergence_record(plant.name(), &traj, tol, cfg.scheme),
        Err(e) => CheckRecord::failed(name, plant.name(), CONVERGENCE, e.to_string()),
    }
}

pub fn convergence_record(plant_name: &str, traj: &Trajectory, tol: f64, scheme: Scheme) -> CheckRecord {
    let final_distance = traj.dist_to_star.last().copied().unwrap_or(f64::NAN);
    let growth = worst_growth(&traj.dist_to_star);
    let monotone = growth <= CONTRACTION_REL_SLACK || scheme == Scheme::Splitting;
    let mut record = CheckRecord::new(
        "convergence",
        plant_name,
        CONVERGENCE,
        traj.len(),
        final_distance,
        tol,
        Bound::AtMost,
    )
    .with_detail(format!("worst relative growth of the distance {growth:e}"));
    record.passed &= monotone;
    record
}

pub fn check_output_tracking(plant: &dyn Plant, traj: &Trajectory, reference: &DVector<f64>, tol: f64) -> CheckRecord {
    let error = traj.outputs.last().map_or(f64::NAN, |y| (y - reference).amax());
    CheckRecord::new("output_tracking", plant.name(), TRACKING, traj.len(), error, tol, Bound::AtMost)
}

/// Runs `n_starts` random initial conditions and compares their limits.
pub fn check_equilibrium_uniqueness(
    plant: &dyn Plant,
    cfg: &ClosedLoopConfig,
    n_starts: usize,
    seed: u64,
    tol: f64,
) -> CheckRecord {
    let name = "equilibrium_uniqueness";
    let starts = random_starts(plant, &cfg.constraint, n_starts, seed);
    let finals: Result<Vec<(DVector<f64>, DVector<f64>)>, String> = starts
        .par_iter()
        .map(|(x0, z0)| {
            let traj = simulate(plant, cfg, x0, z0, None).map_err(|e| e.to_string())?;
            Ok((traj.states.last().unwrap().clone(), traj.z_values.last().unwrap().clone()))
        })
        .collect();
    match finals {
        Ok(finals) => {
            let mut spread = 0.0f64;
            for i in 0..finals.len() {
                for j in i + 1..finals.len() {
                    let d = product_distance_sq(plant, &finals[i].0, &finals[i].1, &finals[j].0, &finals[j].1).sqrt();
                    spread = spread.max(d);
                }
            }
            CheckRecord::new(name, plant.name(), UNIQUENESS, n_starts, spread, 10.0 * tol, Bound::AtMost)
        }
        Err(e) => CheckRecord::failed(name, plant.name(), UNIQUENESS, e),
    }
}

/// One coupled implicit step from random pairs of points: the output
/// distance must not exceed the input distance.
pub fn check_resolvent_nonexpansive(plant: &dyn Plant, cfg: &ClosedLoopConfig, n_pairs: usize, seed: u64) -> CheckRecord {
    let name = "resolvent_nonexpansive";
    let starts = random_starts(plant, &cfg.constraint, 2 * n_pairs, seed);
    let solve = |x: &DVector<f64>, z: &DVector<f64>| {
        plant.coupled_resolvent(&StepInput {
            step: cfg.step,
            x_prev: x,
            z_prev: z,
            reference: &cfg.reference,
            constraint: &cfg.constraint,
            options: cfg.options(),
        })
    };
    let excess: Result<Vec<f64>, String> = (0..n_pairs)
        .into_par_iter()
        .map(|i| {
            let (xa, za) = &starts[2 * i];
            let (xb, zb) = &starts[2 * i + 1];
            let (ya, wa) = solve(xa, za).map_err(|e| e.to_string())?;
            let (yb, wb) = solve(xb, zb).map_err(|e| e.to_string())?;
            let before = product_distance_sq(plant, xa, za, xb, zb).sqrt();
            let after = product_distance_sq(plant, &ya, &wa, &yb, &wb).sqrt();
            Ok((after - before).max(0.0))
        })
        .collect();
    match excess {
        Ok(values) => {
            let worst = values.into_iter().fold(0.0, f64::max);
            CheckRecord::new(name, plant.name(), RESOLVENT, n_pairs, worst, PROPERTY_TOL, Bound::AtMost)
        }
        Err(e) => CheckRecord::failed(name, plant.name(), RESOLVENT, e),
    }
}

/// Largest violation among the projection properties on random points:
/// nonexpansiveness, firm nonexpansiveness, idempotence, and the
/// variational inequality `⟨a − P a, y − P a⟩ ≤ 0` for `y ∈ K`.
pub fn projection_violation(set: &ConvexSet, n_pairs: usize, seed: u64) -> Result<f64, String> {
    let mut rng = seeded(seed);
    let m = set.dim();
    let mut worst = 0.0f64;
    let perturbed = |rng: &mut SampleRng| -> Result<DVector<f64>, String> {
        let base = set.sample(rng).map_err(|e| e.to_string())?;
        Ok(base + DVector::from_fn(m, |_, _| rand::Rng::random_range(rng, -3.0..3.0)))
    };
    for _ in 0..n_pairs {
        let a = perturbed(&mut rng)?;
        let b = perturbed(&mut rng)?;
        let y = set.sample(&mut rng).map_err(|e| e.to_string())?;
        let pa = set.project(&a).map_err(|e| e.to_string())?;
        let pb = set.project(&b).map_err(|e| e.to_string())?;
        let dp = &pa - &pb;
        worst = worst.max(dp.norm() - (&a - &b).norm());
        worst = worst.max(dp.norm_squared() - dp.dot(&(&a - &b)));
        worst = worst.max((set.project(&pa).map_err(|e| e.to_string())? - &pa).norm());
        worst = worst.max((&a - &pa).dot(&(&y - &pa)));
    }
    Ok(worst)
}

pub fn check_projection(set_label: &str, set: &ConvexSet, n_pairs: usize, seed: u64) -> CheckRecord {
    match projection_violation(set, n_pairs, seed) {
        Ok(worst) => CheckRecord::new("projection_properties", set_label, PROJECTION, n_pairs, worst, PROPERTY_TOL, Bound::AtMost),
        Err(e) => CheckRecord::failed("projection_properties", set_label, PROJECTION, e),
    }
}

pub fn check_dissipativity(plant: &dyn Plant, samples: usize, seed: u64) -> CheckRecord {
    let report = probe_dissipativity(plant, samples, seed);
    let mut record = CheckRecord::new(
        "dissipativity",
        plant.name(),
        PASSIVITY,
        samples,
        report.worst_margin,
        DISSIPATION_TOL,
        Bound::AtMost,
    )
    .with_detail(format!(
        "largest relative mismatch between closed-form and balance dissipation {:e}",
        report.worst_h_mismatch
    ));
    record.passed = report.passed;
    record
}

pub fn check_fixed_point(plant: &dyn Plant, cfg: &ClosedLoopConfig, pair: &SteadyStatePair) -> CheckRecord {
    let name = "steady_state_fixed_point";
    let r = pair.output(plant);
    let result = plant.coupled_resolvent(&StepInput {
        step: cfg.step,
        x_prev: &pair.x_star,
        z_prev: &pair.u_star,
        reference: &r,
        constraint: &cfg.constraint,
        options: cfg.options(),
    });
    match result {
        Ok((x, z)) => {
            let moved = product_distance_sq(plant, &x, &z, &pair.x_star, &pair.u_star).sqrt();
            CheckRecord::new(name, plant.name(), FIXED_POINT, 1, moved, PROPERTY_TOL, Bound::AtMost)
        }
        Err(e) => CheckRecord::failed(name, plant.name(), FIXED_POINT, e.to_string()),
    }
}

/// Along open-loop implicit Euler solutions with frozen input, the
/// difference quotients have nonincreasing metric norm.
pub fn check_minimal_norm_decay(
    plant: &dyn Plant,
    cfg: &ClosedLoopConfig,
    x0: &DVector<f64>,
    u: &DVector<f64>,
) -> CheckRecord {
    let name = "minimal_norm_decay";
    let steps = cfg.steps();
    match simulate_open_loop(plant, cfg.step, steps, x0, u, cfg.options()) {
        Ok(states) => {
            let norms: Vec<f64> = states
                .windows(2)
                .map(|w| metric_norm(plant, &((&w[1] - &w[0]) / cfg.step)))
                .collect();
            let worst = norms
                .windows(2)
                .map(|w| (w[1] - w[0]) / (1.0 + w[0]))
                .fold(0.0f64, f64::max);
            CheckRecord::new(name, plant.name(), MINIMAL_NORM, steps, worst, PROPERTY_TOL, Bound::AtMost)
        }
        Err(e) => CheckRecord::failed(name, plant.name(), MINIMAL_NORM, e.to_string()),
    }
}

pub fn check_open_loop_uniqueness(
    plant: &dyn Plant,
    cfg: &ClosedLoopConfig,
    x0: &DVector<f64>,
    u: &DVector<f64>,
) -> CheckRecord {
    let name = "open_loop_uniqueness";
    let steps = cfg.steps();
    let run = || simulate_open_loop(plant, cfg.step, steps, x0, u, cfg.options());
    match (run(), run()) {
        (Ok(a), Ok(b)) => {
            let gap = a.iter().zip(&b).map(|(p, q)| (p - q).amax()).fold(0.0, f64::max);
            CheckRecord::new(name, plant.name(), OPEN_LOOP, steps, gap, 0.0, Bound::AtMost)
        }
        (Err(e), _) | (_, Err(e)) => CheckRecord::failed(name, plant.name(), OPEN_LOOP, e.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Trajectory pairs for the contraction and energy checks.
    pub pairs: usize,
    /// Random starts for the uniqueness check.
    pub starts: usize,
    /// Samples for the pointwise probes.
    pub samples: usize,
    /// Horizon of the pairwise trajectory checks.
    pub pair_horizon: f64,
    /// Distance accepted for convergence to the steady-state pair.
    pub convergence_tol: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            pairs: 20,
            starts: 5,
            samples: 100,
            pair_horizon: 2.0,
            convergence_tol: 1e-3,
        }
    }
}

/// Runs every check for one plant and closed-loop configuration.
pub fn run_suite(
    plant: &dyn Plant,
    cfg: &ClosedLoopConfig,
    pair: &SteadyStatePair,
    x0: &DVector<f64>,
    z0: &DVector<f64>,
    options: &SuiteOptions,
) -> VerificationReport {
    let seed = options.seed;
    let short = cfg.clone().with_horizon(options.pair_horizon.min(cfg.horizon).max(cfg.step));
    let mut records = vec![
        check_contraction(plant, &short, options.pairs, seed),
        check_energy_inequality(plant, &short, options.pairs, seed.wrapping_add(1)),
        check_resolvent_nonexpansive(plant, cfg, options.samples, seed.wrapping_add(2)),
        check_projection("K", &cfg.constraint, options.samples, seed.wrapping_add(3)),
        check_dissipativity(plant, options.samples, seed.wrapping_add(4)),
        check_monotone_io(plant, &cfg.constraint, options.samples.min(50), seed.wrapping_add(5)),
        check_fixed_point(plant, cfg, pair),
        check_minimal_norm_decay(plant, &short, x0, z0),
        check_open_loop_uniqueness(plant, &short, x0, z0),
        check_equilibrium_uniqueness(plant, cfg, options.starts, seed.wrapping_add(6), options.convergence_tol),
    ];
    match simulate(plant, cfg, x0, z0, Some(pair)) {
        Ok(traj) => {
            records.push(check_constraints(plant.name(), &traj, &cfg.constraint));
            records.push(convergence_record(plant.name(), &traj, options.convergence_tol, cfg.scheme));
            records.push(check_output_tracking(plant, &traj, &cfg.reference, options.convergence_tol));
        }
        Err(e) => records.push(CheckRecord::failed("convergence", plant.name(), CONVERGENCE, e.to_string())),
    }
    VerificationReport::from_records(records)
}
