//! Parabolic p-Laplacian-type equation on `[0, 1]` with Neumann boundary
//! control, discretized by finite differences in flux form.
//!
//! Nodes `x_i = i Δx`, `i = 0..n`, `Δx = 1/(n − 1)`, trapezoid weights `ω`.
//! The semi-discrete plant is `M ẇ = −Φ(w) + N u`, `y = Nᵀ w`, where
//! `M = diag(ω)`, `N` places `u_L` at node 0 and `u_R` at node `n − 1`, and
//!
//! ```text
//! Φ_{λ,μ}(w)_j = G_{j−1} − G_j + ω_j (w_j^{p−1} + λ w_j) + μ w_j [j on the boundary]
//! G_i          = ((w_{i+1} − w_i)/Δx)^{p−1}
//! ```
//!
//! `Φ_{λ,μ}` is the gradient of a convex energy, so it is monotone; the
//! state space carries the lumped-mass metric `⟨a, b⟩ = Σ ω_i a_i b_i`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::avi;
use crate::plant::{GraphPoint, Plant, PlantError, SolverOptions, StepInput};
use crate::rng::SampleRng;
use crate::sets::{ConvexSet, SetError};

/// Floor for the gradient contribution to the Newton Jacobian when `p > 2`.
pub const JACOBIAN_FLOOR: f64 = 1e-12;
/// Maximum number of step halvings in the Newton line search.
pub const MAX_HALVINGS: usize = 40;
pub const DEFAULT_NEWTON_TOL: f64 = 1e-13;
/// Residual accepted when the line search can make no further progress.
pub const STAGNATION_TOL: f64 = 1e-11;
pub const DEFAULT_NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeParams {
    pub p: u32,
    pub n_grid: usize,
}

impl Default for PdeParams {
    fn default() -> Self {
        Self { p: 2, n_grid: 200 }
    }
}

#[derive(Debug, Clone)]
pub struct PLaplacianPlant {
    params: PdeParams,
    dx: f64,
    weights: DVector<f64>,
    newton_tol: f64,
    newton_max_iter: usize,
}

/// Symmetric tridiagonal system with diagonal `diag` and off-diagonal `off`
/// (`off[i]` couples `i` and `i + 1`), solved by the Thomas algorithm.
pub fn solve_tridiagonal(diag: &[f64], off: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    if n == 0 || off.len() + 1 != n || rhs.len() != n {
        return None;
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot == 0.0 || !pivot.is_finite() {
        return None;
    }
    if n > 1 {
        c[0] = off[0] / pivot;
    }
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - off[i - 1] * c[i - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return None;
        }
        if i + 1 < n {
            c[i] = off[i] / pivot;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Some(d)
}

/// Tridiagonal Jacobian of `Φ_{λ,μ}`.
#[derive(Debug, Clone)]
pub struct Jacobian {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl Jacobian {
    pub fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        solve_tridiagonal(&self.diag, &self.off, rhs.as_slice()).map(DVector::from_vec)
    }
}

impl PLaplacianPlant {
    pub fn new(params: PdeParams) -> Result<Self, PlantError> {
        if params.p < 2 || params.p % 2 != 0 {
            return Err(PlantError::InvalidParameter(format!(
                "p must be an even integer >= 2, got {}",
                params.p
            )));
        }
        if params.n_grid < 8 {
            return Err(PlantError::InvalidParameter(format!(
                "n_grid must be at least 8, got {}",
                params.n_grid
            )));
        }
        let n = params.n_grid;
        let dx = 1.0 / (n - 1) as f64;
        let mut weights = DVector::from_element(n, dx);
        weights[0] = 0.5 * dx;
        weights[n - 1] = 0.5 * dx;
        Ok(Self {
            params,
            dx,
            weights,
            newton_tol: DEFAULT_NEWTON_TOL,
            newton_max_iter: DEFAULT_NEWTON_MAX_ITER,
        })
    }

    pub fn params(&self) -> &PdeParams {
        &self.params
    }

    pub fn spacing(&self) -> f64 {
        self.dx
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn nodes(&self) -> DVector<f64> {
        DVector::from_fn(self.params.n_grid, |i, _| i as f64 * self.dx)
    }

    fn power(&self, v: f64) -> f64 {
        v.powi(self.params.p as i32 - 1)
    }

    fn gradients(&self, w: &DVector<f64>) -> Vec<f64> {
        w.as_slice().windows(2).map(|e| (e[1] - e[0]) / self.dx).collect()
    }

    /// `Φ_{λ,μ}(w) − M rhs − N u` in weak (quadrature-weighted) form.
    pub fn weak_residual(
        &self,
        lambda: f64,
        mu: f64,
        w: &DVector<f64>,
        rhs: Option<&DVector<f64>>,
        u: &DVector<f64>,
    ) -> DVector<f64> {
        let n = self.params.n_grid;
        let flux: Vec<f64> = self.gradients(w).into_iter().map(|g| self.power(g)).collect();
        let mut res = DVector::zeros(n);
        for j in 0..n {
            let mut v = self.weights[j] * (self.power(w[j]) + lambda * w[j]);
            if j > 0 {
                v += flux[j - 1];
            }
            if j + 1 < n {
                v -= flux[j];
            }
            if let Some(rhs) = rhs {
                v -= self.weights[j] * rhs[j];
            }
            res[j] = v;
        }
        res[0] += mu * w[0] - u[0];
        res[n - 1] += mu * w[n - 1] - u[1];
        res
    }

    /// Strong (nodal) form of `Φ_{λ,μ}(w) − N u`: the weak residual divided
    /// by the quadrature weights.
    pub fn apply_duality_map(&self, lambda: f64, mu: f64, w: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.weak_residual(lambda, mu, w, None, u).component_div(&self.weights)
    }

    /// Convex energy whose gradient is [`Self::weak_residual`].
    fn energy(&self, lambda: f64, mu: f64, w: &DVector<f64>, rhs: Option<&DVector<f64>>, u: &DVector<f64>) -> f64 {
        let p = self.params.p as i32;
        let pf = p as f64;
        let n = self.params.n_grid;
        let mut e: f64 = self.gradients(w).iter().map(|g| self.dx * g.powi(p) / pf).sum();
        for j in 0..n {
            e += self.weights[j] * (w[j].powi(p) / pf + 0.5 * lambda * w[j] * w[j]);
            if let Some(rhs) = rhs {
                e -= self.weights[j] * rhs[j] * w[j];
            }
        }
        e + 0.5 * mu * (w[0] * w[0] + w[n - 1] * w[n - 1]) - u[0] * w[0] - u[1] * w[n - 1]
    }

    pub fn jacobian(&self, lambda: f64, mu: f64, w: &DVector<f64>) -> Jacobian {
        let n = self.params.n_grid;
        let p = self.params.p;
        let pm1 = (p - 1) as f64;
        let edge: Vec<f64> = self
            .gradients(w)
            .into_iter()
            .map(|g| {
                let c = pm1 * g.powi(p as i32 - 2) / self.dx;
                if p > 2 {
                    c.max(JACOBIAN_FLOOR)
                } else {
                    c
                }
            })
            .collect();
        let mut diag = vec![0.0; n];
        for j in 0..n {
            diag[j] = self.weights[j] * (pm1 * w[j].powi(p as i32 - 2) + lambda);
            if j > 0 {
                diag[j] += edge[j - 1];
            }
            if j + 1 < n {
                diag[j] += edge[j];
            }
        }
        diag[0] += mu;
        diag[n - 1] += mu;
        Jacobian {
            diag,
            off: edge.into_iter().map(|c| -c).collect(),
        }
    }

    /// Solves `Φ_{λ,μ}(w) = M rhs + N u` by Newton's method. Steps are
    /// halved until the convex energy whose gradient is the residual shows
    /// sufficient decrease (the Newton direction is always a descent
    /// direction for it); full steps that reduce the residual norm are
    /// accepted directly.
    #[allow(clippy::too_many_arguments)]
    pub fn solve_monotone(
        &self,
        lambda: f64,
        mu: f64,
        rhs: Option<&DVector<f64>>,
        u: &DVector<f64>,
        initial: Option<&DVector<f64>>,
        newton_tol: f64,
        max_iter: usize,
    ) -> Result<DVector<f64>, PlantError> {
        let n = self.params.n_grid;
        if u.len() != 2 {
            return Err(PlantError::DimensionMismatch {
                what: "boundary input",
                expected: 2,
                got: u.len(),
            });
        }
        let mut w = match initial {
            Some(w0) => w0.clone(),
            None => self.initial_guess(lambda, rhs, u),
        };
        if w.len() != n {
            return Err(PlantError::DimensionMismatch {
                what: "grid field",
                expected: n,
                got: w.len(),
            });
        }
        let mut res = self.weak_residual(lambda, mu, &w, rhs, u);
        let mut norm = res.norm();
        // the line search stalls once energy differences reach rounding level
        let source = u.amax() + rhs.map_or(0.0, |r| r.component_mul(&self.weights).amax());
        let floor = newton_tol.max(STAGNATION_TOL * (1.0 + source));
        for _ in 0..max_iter {
            if norm <= newton_tol {
                return Ok(w);
            }
            let jac = self.jacobian(lambda, mu, &w);
            let Some(direction) = jac.solve(&(-&res)) else {
                break;
            };
            if norm <= floor && direction.amax() <= 1e-13 * (1.0 + w.amax()) {
                return Ok(w);
            }
            // Armijo backtracking on the convex energy; a full step that
            // reduces the residual norm is always taken
            let e0 = self.energy(lambda, mu, &w, rhs, u);
            let slope = res.dot(&direction);
            let mut accepted = None;
            let mut t = 1.0;
            for _ in 0..=MAX_HALVINGS {
                let trial = &w + &direction * t;
                let trial_res = self.weak_residual(lambda, mu, &trial, rhs, u);
                let trial_norm = trial_res.norm();
                let decrease = self.energy(lambda, mu, &trial, rhs, u) <= e0 + 1e-4 * t * slope;
                if decrease || (t == 1.0 && trial_norm < norm) {
                    accepted = Some((trial, trial_res, trial_norm));
                    break;
                }
                if norm <= floor {
                    // already at rounding level, halving cannot help
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                Some((trial, trial_res, trial_norm)) => {
                    w = trial;
                    res = trial_res;
                    norm = trial_norm;
                }
                None => break,
            }
        }
        if norm <= floor {
            return Ok(w);
        }
        Err(PlantError::NonConvergence {
            what: "p-Laplacian Newton solve",
            iterations: max_iter,
            residual: norm,
        })
    }

    /// Starting point for Newton: the solution of the linear (`p = 2`)
    /// problem with boundary data `u^{1/(p−1)}`, which has boundary slopes of
    /// the right size. For `p = 2` this is already the solution.
    fn initial_guess(&self, lambda: f64, rhs: Option<&DVector<f64>>, u: &DVector<f64>) -> DVector<f64> {
        let n = self.params.n_grid;
        let root = |v: f64| v.signum() * v.abs().powf(1.0 / (self.params.p - 1) as f64);
        let edge = 1.0 / self.dx;
        let mut diag = vec![0.0; n];
        for j in 0..n {
            diag[j] = self.weights[j] * (1.0 + lambda);
            if j > 0 {
                diag[j] += edge;
            }
            if j + 1 < n {
                diag[j] += edge;
            }
        }
        let mut b = DVector::zeros(n);
        if let Some(rhs) = rhs {
            b = rhs.component_mul(&self.weights);
        }
        b[0] += root(u[0]);
        b[n - 1] += root(u[1]);
        solve_tridiagonal(&diag, &vec![-edge; n - 1], b.as_slice())
            .map(DVector::from_vec)
            .unwrap_or_else(|| DVector::zeros(n))
    }

    /// `Σ_edges Δx (G₁ − G₂)(g₁ − g₂) + Σ ω (w₁^{p−1} − w₂^{p−1})(w₁ − w₂)`.
    pub fn pde_h(&self, w1: &DVector<f64>, w2: &DVector<f64>) -> f64 {
        let g1 = self.gradients(w1);
        let g2 = self.gradients(w2);
        let mut h = 0.0;
        for (a, b) in g1.iter().zip(&g2) {
            h += self.dx * (self.power(*a) - self.power(*b)) * (a - b);
        }
        for j in 0..self.params.n_grid {
            h += self.weights[j] * (self.power(w1[j]) - self.power(w2[j])) * (w1[j] - w2[j]);
        }
        h
    }

    /// Boundary-input gain `Nᵀ J⁻¹ N` of the linearized step.
    fn boundary_gain(&self, jac: &Jacobian) -> Result<DMatrix<f64>, PlantError> {
        let n = self.params.n_grid;
        let mut e = DVector::zeros(n);
        e[0] = 1.0;
        let a = jac.solve(&e).ok_or(avi::AviError::Singular)?;
        e[0] = 0.0;
        e[n - 1] = 1.0;
        let b = jac.solve(&e).ok_or(avi::AviError::Singular)?;
        Ok(DMatrix::from_row_slice(2, 2, &[a[0], b[0], a[n - 1], b[n - 1]]))
    }

    fn boundary_values(&self, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![w[0], w[self.params.n_grid - 1]])
    }

    fn smooth_field(&self, rng: &mut SampleRng, amplitude: f64) -> DVector<f64> {
        let coeffs: Vec<(f64, f64)> = (0..4)
            .map(|k| {
                let s = amplitude / (1.0 + k as f64);
                (rng.random_range(-s..s), rng.random_range(-s..s))
            })
            .collect();
        let pi = std::f64::consts::PI;
        DVector::from_fn(self.params.n_grid, |i, _| {
            let x = i as f64 * self.dx;
            coeffs
                .iter()
                .enumerate()
                .map(|(k, (a, b))| a * (k as f64 * pi * x).cos() + b * (k as f64 * pi * x).sin())
                .sum()
        })
    }

    /// Writes `node,x,w` rows for one field snapshot.
    pub fn write_field_csv<W: std::io::Write>(&self, w: &DVector<f64>, out: W) -> csv::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["node", "x", "w"])?;
        for (i, value) in w.iter().enumerate() {
            writer.write_record([
                i.to_string(),
                format!("{:.16e}", i as f64 * self.dx),
                format!("{value:.16e}"),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Steady profile of `−w″ + w = 0` with `−w′(0) = u_L`, `w′(1) = u_R`:
/// `w = a cosh x + b sinh x`, `b = −u_L`, `a = (u_R + u_L cosh 1)/sinh 1`.
pub fn hyperbolic_profile(u_left: f64, u_right: f64, x: f64) -> f64 {
    let b = -u_left;
    let a = (u_right + u_left * 1f64.cosh()) / 1f64.sinh();
    a * x.cosh() + b * x.sinh()
}

impl Plant for PLaplacianPlant {
    fn name(&self) -> &'static str {
        "plaplacian"
    }

    fn state_dim(&self) -> usize {
        self.params.n_grid
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn state_metric(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.component_mul(b).dot(&self.weights)
    }

    fn output(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        self.boundary_values(x)
    }

    /// Newton iteration on the input: linearize the boundary output of the
    /// field solve around the current `z`, solve the resulting affine
    /// variational inequality over `K`, and repeat until `z` settles.
    fn coupled_resolvent(&self, input: &StepInput<'_>) -> Result<(DVector<f64>, DVector<f64>), PlantError> {
        let h = input.step;
        if !(h > 0.0) {
            return Err(PlantError::InvalidParameter(format!("step must be positive, got {h}")));
        }
        let lambda = 1.0 / h;
        let rhs = input.x_prev / h;
        let mut z = input.z_prev.clone();
        let mut w = input.x_prev.clone();
        let mut change = f64::INFINITY;
        for _ in 0..input.options.max_iter.max(1) {
            w = self.solve_monotone(lambda, 0.0, Some(&rhs), &z, Some(&w), self.newton_tol, self.newton_max_iter)?;
            let jac = self.jacobian(lambda, 0.0, &w);
            let gain = self.boundary_gain(&jac)?;
            let y = self.boundary_values(&w);
            let g = DMatrix::identity(2, 2) + &gain * h;
            let c = input.z_prev + input.reference * h - y * h + &gain * &z * h;
            let z_next = avi::solve(&g, &c, input.constraint, input.options.tol, input.options.max_iter)?;
            change = (&z_next - &z).amax();
            z = z_next;
            let settle = input.options.tol.max(16.0 * f64::EPSILON * (1.0 + z.amax()));
            if change <= settle {
                w = self.solve_monotone(lambda, 0.0, Some(&rhs), &z, Some(&w), self.newton_tol, self.newton_max_iter)?;
                return Ok((w, z));
            }
        }
        Err(PlantError::NonConvergence {
            what: "coupled boundary-input iteration",
            iterations: input.options.max_iter,
            residual: change,
        })
    }

    fn state_resolvent(
        &self,
        step: f64,
        x_prev: &DVector<f64>,
        u: &DVector<f64>,
        _options: SolverOptions,
    ) -> Result<DVector<f64>, PlantError> {
        if !(step > 0.0) {
            return Err(PlantError::InvalidParameter(format!("step must be positive, got {step}")));
        }
        self.solve_monotone(
            1.0 / step,
            0.0,
            Some(&(x_prev / step)),
            u,
            Some(x_prev),
            self.newton_tol,
            self.newton_max_iter,
        )
    }

    fn steady_state(&self, u: &DVector<f64>) -> Result<DVector<f64>, PlantError> {
        self.solve_monotone(0.0, 0.0, None, u, None, self.newton_tol, self.newton_max_iter)
    }

    /// `ẇ = M⁻¹(N u − Φ(w))`; the dynamics are single valued.
    fn principal_section(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        -self.apply_duality_map(0.0, 0.0, x, u)
    }

    fn dissipation(&self, a: &GraphPoint, b: &GraphPoint) -> f64 {
        self.pde_h(&a.x, &b.x)
    }

    fn sample_graph_point(&self, rng: &mut SampleRng) -> GraphPoint {
        let x = self.smooth_field(rng, 1.0);
        let u = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
        let f = self.principal_section(&x, &u);
        GraphPoint { x, u, f }
    }

    fn sample_state(&self, rng: &mut SampleRng) -> DVector<f64> {
        self.smooth_field(rng, 1.0)
    }

    /// Starts at the steady field of the sampled integrator value, so the
    /// closed loop is initially at rest in the field and driven only through
    /// `ż = r − y`. Arbitrary fields excite modes of rate `~1/Δx²` that no
    /// practical step resolves.
    fn sample_start(&self, set: &ConvexSet, rng: &mut SampleRng) -> Result<(DVector<f64>, DVector<f64>), SetError> {
        let z = set.sample(rng)?;
        let x = match self.steady_state(&z) {
            Ok(w) => w,
            Err(_) => self.smooth_field(rng, 1.0),
        };
        Ok((x, z))
    }
}
