//! The plant contract `ẋ ∈ A(x, u)`, `y = g(x, u)` together with the generic
//! steady-state, feasibility and dissipativity machinery built on top of it.
//!
//! Every plant carries its own state inner product, solves the implicit Euler
//! step of the closed loop with the projected integrator exactly (or by a
//! convergent Newton scheme), and knows its internal dissipation `h` in
//! closed form.

use nalgebra::DVector;
use serde::Serialize;

use crate::avi::AviError;
use crate::rng::{seeded, SampleRng};
use crate::sets::{ConvexSet, SetError};

/// Stationarity residual accepted for a steady-state pair.
pub const STATIONARITY_TOL: f64 = 1e-10;
/// Output mismatch accepted by [`feasible_input`].
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// Slack granted to the dissipation inequalities for rounding.
pub const DISSIPATION_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("invalid plant parameter: {0}")]
    InvalidParameter(String),
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("no complementarity branch is consistent (smallest sign violation {violation:e})")]
    NoBranch { violation: f64 },
    #[error("internal dissipation evaluated to {0:e}, below zero")]
    NegativeDissipation(f64),
    #[error("steady state residual {residual:e} exceeds {tol:e}")]
    NotStationary { residual: f64, tol: f64 },
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Avi(#[from] AviError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 200,
        }
    }
}

/// Data of one implicit step of the closed loop.
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a> {
    pub step: f64,
    pub x_prev: &'a DVector<f64>,
    pub z_prev: &'a DVector<f64>,
    pub reference: &'a DVector<f64>,
    pub constraint: &'a ConvexSet,
    pub options: SolverOptions,
}

/// A point of the graph of `A`: state, input, and one element `f ∈ A(x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPoint {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub f: DVector<f64>,
}

pub trait Plant: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    /// Input and output dimension (they coincide).
    fn input_dim(&self) -> usize;
    /// Inner product on the state space.
    fn state_metric(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64;
    fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// Solves `(x − x_prev)/h ∈ A(x, z)`, `(z − z_prev)/h ∈ r − g(x, z) − N_K(z)`.
    fn coupled_resolvent(
        &self,
        input: &StepInput<'_>,
    ) -> Result<(DVector<f64>, DVector<f64>), PlantError>;
    /// Solves `(x − x_prev)/h ∈ A(x, u)` with the input held fixed.
    fn state_resolvent(
        &self,
        step: f64,
        x_prev: &DVector<f64>,
        u: &DVector<f64>,
        options: SolverOptions,
    ) -> Result<DVector<f64>, PlantError>;
    /// The unique `x` with `0 ∈ A(x, u)`.
    fn steady_state(&self, u: &DVector<f64>) -> Result<DVector<f64>, PlantError>;
    /// Minimal-norm element of `A(x, u)`.
    fn principal_section(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// Closed-form internal dissipation between two graph points.
    fn dissipation(&self, a: &GraphPoint, b: &GraphPoint) -> f64;
    /// Random graph point used by the dissipativity probes.
    fn sample_graph_point(&self, rng: &mut SampleRng) -> GraphPoint;
    /// Random initial state for trajectory-level checks.
    fn sample_state(&self, rng: &mut SampleRng) -> DVector<f64>;
    /// Random closed-loop initial condition `(x0, z0)` with `z0 ∈ K`.
    ///
    /// The default draws both components independently. Stiff plants may
    /// override this to start on the equilibrium manifold so that the
    /// initial velocity stays bounded under grid refinement.
    fn sample_start(&self, set: &ConvexSet, rng: &mut SampleRng) -> Result<(DVector<f64>, DVector<f64>), SetError> {
        let x = self.sample_state(rng);
        let z = set.sample(rng)?;
        Ok((x, z))
    }
}

pub fn metric_norm(plant: &dyn Plant, x: &DVector<f64>) -> f64 {
    plant.state_metric(x, x).max(0.0).sqrt()
}

/// Squared distance in the product metric `‖x − x'‖²_X + ‖z − z'‖²`.
pub fn product_distance_sq(
    plant: &dyn Plant,
    x: &DVector<f64>,
    z: &DVector<f64>,
    x_other: &DVector<f64>,
    z_other: &DVector<f64>,
) -> f64 {
    let dx = x - x_other;
    plant.state_metric(&dx, &dx) + (z - z_other).norm_squared()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyStatePair {
    pub x_star: DVector<f64>,
    pub u_star: DVector<f64>,
}

impl SteadyStatePair {
    pub fn output(&self, plant: &dyn Plant) -> DVector<f64> {
        plant.output(&self.x_star, &self.u_star)
    }
}

/// Steady state for `u_star` with the stationarity residual verified.
pub fn steady_state(plant: &dyn Plant, u_star: &DVector<f64>) -> Result<SteadyStatePair, PlantError> {
    check_input_dim(plant, u_star, "steady-state input")?;
    let x_star = plant.steady_state(u_star)?;
    let residual = metric_norm(plant, &plant.principal_section(&x_star, u_star));
    let tol = STATIONARITY_TOL * (1.0 + u_star.amax());
    if !(residual <= tol) {
        return Err(PlantError::NotStationary { residual, tol });
    }
    Ok(SteadyStatePair {
        x_star,
        u_star: u_star.clone(),
    })
}

fn check_input_dim(plant: &dyn Plant, v: &DVector<f64>, what: &'static str) -> Result<(), PlantError> {
    if v.len() != plant.input_dim() {
        return Err(PlantError::DimensionMismatch {
            what,
            expected: plant.input_dim(),
            got: v.len(),
        });
    }
    Ok(())
}

/// Steady-state input-output map `u ↦ g(x⋆(u), u)`.
pub fn steady_output(plant: &dyn Plant, u: &DVector<f64>) -> Result<DVector<f64>, PlantError> {
    let x = plant.steady_state(u)?;
    Ok(plant.output(&x, u))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    Feasible(SteadyStatePair),
    Infeasible,
}

/// Finds `u⋆ ∈ K` whose steady output equals `r`.
///
/// Scalar inputs use bisection on the monotone steady-state map over the
/// interval `K`. Vector inputs use damped Newton with a finite-difference
/// Jacobian on the unconstrained map; the reference is infeasible when the
/// resulting input lies outside `K`.
pub fn feasible_input(
    plant: &dyn Plant,
    r: &DVector<f64>,
    constraint: &ConvexSet,
) -> Result<Feasibility, PlantError> {
    check_input_dim(plant, r, "reference")?;
    if constraint.dim() != plant.input_dim() {
        return Err(SetError::DimensionMismatch {
            expected: plant.input_dim(),
            got: constraint.dim(),
        }
        .into());
    }
    let u = if plant.input_dim() == 1 {
        match bisect_scalar(plant, r[0], constraint)? {
            Some(u) => u,
            None => return Ok(Feasibility::Infeasible),
        }
    } else {
        let u = newton_io(plant, r)?;
        if !constraint.contains(&u, 1e-9)? {
            return Ok(Feasibility::Infeasible);
        }
        constraint.project(&u)?
    };
    let pair = steady_state(plant, &u)?;
    let miss = (pair.output(plant) - r).amax();
    if miss > FEASIBILITY_TOL {
        return Err(PlantError::NonConvergence {
            what: "feasible input search",
            iterations: 0,
            residual: miss,
        });
    }
    Ok(Feasibility::Feasible(pair))
}

const SCALAR_EXPANSION_LIMIT: f64 = 1e8;

fn bisect_scalar(plant: &dyn Plant, r: f64, constraint: &ConvexSet) -> Result<Option<DVector<f64>>, PlantError> {
    let interval = constraint
        .as_interval()
        .ok_or_else(|| SetError::Invalid("scalar input requires a one-dimensional constraint".into()))?;
    let io = |u: f64| -> Result<f64, PlantError> {
        Ok(steady_output(plant, &DVector::from_element(1, u))?[0])
    };
    let mut lo = interval.lower;
    let mut hi = interval.upper;
    // unbounded ends: expand until the reference is bracketed
    if !lo.is_finite() {
        lo = hi.min(0.0) - 1.0;
        while io(lo)? > r && lo > -SCALAR_EXPANSION_LIMIT {
            lo *= 2.0;
        }
    }
    if !hi.is_finite() {
        hi = lo.max(0.0) + 1.0;
        while io(hi)? < r && hi < SCALAR_EXPANSION_LIMIT {
            hi *= 2.0;
        }
    }
    let (y_lo, y_hi) = (io(lo)?, io(hi)?);
    if r < y_lo - FEASIBILITY_TOL || r > y_hi + FEASIBILITY_TOL {
        return Ok(None);
    }
    if (y_lo - r).abs() <= 1e-12 {
        return Ok(Some(DVector::from_element(1, lo)));
    }
    if (y_hi - r).abs() <= 1e-12 {
        return Ok(Some(DVector::from_element(1, hi)));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let y = io(mid)?;
        if (y - r).abs() <= 1e-12 || hi - lo <= 1e-15 * (1.0 + mid.abs()) {
            return Ok(Some(DVector::from_element(1, mid)));
        }
        if y < r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(DVector::from_element(1, 0.5 * (lo + hi))))
}

const NEWTON_IO_MAX_ITER: usize = 100;
const NEWTON_IO_MAX_HALVINGS: usize = 40;

fn newton_io(plant: &dyn Plant, r: &DVector<f64>) -> Result<DVector<f64>, PlantError> {
    let m = r.len();
    let mut u = r.clone();
    let mut y = steady_output(plant, &u)?;
    let mut res = &y - r;
    for _ in 0..NEWTON_IO_MAX_ITER {
        if res.amax() <= 1e-11 {
            return Ok(u);
        }
        let mut jac = nalgebra::DMatrix::zeros(m, m);
        for j in 0..m {
            let delta = 1e-6 * (1.0 + u[j].abs());
            let mut shifted = u.clone();
            shifted[j] += delta;
            let col = (steady_output(plant, &shifted)? - &y) / delta;
            jac.set_column(j, &col);
        }
        let Some(direction) = jac.lu().solve(&(-&res)) else {
            break;
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=NEWTON_IO_MAX_HALVINGS {
            let trial = &u + &direction * t;
            let y_trial = steady_output(plant, &trial)?;
            let res_trial = &y_trial - r;
            if res_trial.norm() < res.norm() {
                u = trial;
                y = y_trial;
                res = res_trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if res.amax() <= FEASIBILITY_TOL {
        return Ok(u);
    }
    Err(PlantError::NonConvergence {
        what: "steady-state input-output Newton",
        iterations: NEWTON_IO_MAX_ITER,
        residual: res.amax(),
    })
}

/// `⟨u₁ − u₂, y₁ − y₂⟩ − ⟨f₁ − f₂, x₁ − x₂⟩_X`, the dissipation obtained from
/// the incremental power balance.
pub fn dissipation_from_balance(plant: &dyn Plant, a: &GraphPoint, b: &GraphPoint) -> f64 {
    let dy = plant.output(&a.x, &a.u) - plant.output(&b.x, &b.u);
    let supplied = (&a.u - &b.u).dot(&dy);
    supplied - plant.state_metric(&(&a.f - &b.f), &(&a.x - &b.x))
}

/// Closed-form dissipation, rejecting values below `−DISSIPATION_TOL`.
pub fn dissipation_h(plant: &dyn Plant, a: &GraphPoint, b: &GraphPoint) -> Result<f64, PlantError> {
    let h = plant.dissipation(a, b);
    if h < -DISSIPATION_TOL {
        return Err(PlantError::NegativeDissipation(h));
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissipativityReport {
    pub samples: usize,
    /// Largest `⟨Δf, Δx⟩_X − ⟨Δu, Δy⟩`; passivity requires it to be `≤ 0`.
    pub worst_margin: f64,
    /// Largest disagreement between the closed-form `h` and the balance.
    pub worst_h_mismatch: f64,
    pub failures: usize,
    pub passed: bool,
}

pub fn probe_dissipativity(plant: &dyn Plant, samples: usize, seed: u64) -> DissipativityReport {
    let mut rng = seeded(seed);
    let mut worst_margin = f64::NEG_INFINITY;
    let mut worst_h_mismatch = 0.0f64;
    let mut failures = 0;
    for _ in 0..samples {
        let a = plant.sample_graph_point(&mut rng);
        let b = plant.sample_graph_point(&mut rng);
        let balance = dissipation_from_balance(plant, &a, &b);
        let margin = -balance;
        let scale = 1.0 + balance.abs();
        let mismatch = (plant.dissipation(&a, &b) - balance).abs() / scale;
        worst_margin = worst_margin.max(margin);
        worst_h_mismatch = worst_h_mismatch.max(mismatch);
        if margin > DISSIPATION_TOL * scale || mismatch > DISSIPATION_TOL {
            failures += 1;
        }
    }
    if samples == 0 {
        worst_margin = 0.0;
    }
    DissipativityReport {
        samples,
        worst_margin,
        worst_h_mismatch,
        failures,
        passed: failures == 0,
    }
}
