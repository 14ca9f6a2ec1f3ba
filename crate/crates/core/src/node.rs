//! Finite-dimensional linear system node `ẋ = (S − D Dᵀ) x + B u` made
//! strictly output passive by the static feedback `u ↦ u − k y`.
//!
//! The resulting plant has dynamics matrix `A_cl = S − D Dᵀ − k B Bᵀ`,
//! output `y = Bᵀ x` and identity state metric, and satisfies
//! `⟨u, y⟩ − ⟨ẋ, x⟩ = ‖Dᵀ x‖² + k ‖y‖²`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::avi;
use crate::integrator::Trajectory;
use crate::plant::{GraphPoint, Plant, PlantError, SolverOptions, SteadyStatePair, StepInput};
use crate::rng::{seeded, SampleRng};

/// Tolerance for the skew-symmetry of `S`.
pub const SKEW_TOL: f64 = 1e-12;
/// Relative singular-value threshold for the rank tests.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct NodePlant {
    s: DMatrix<f64>,
    d: DMatrix<f64>,
    b: DMatrix<f64>,
    k: f64,
    a_cl: DMatrix<f64>,
    a_cl_inv: DMatrix<f64>,
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.singular_values();
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * top).count()
}

impl NodePlant {
    /// Builds the strictified node, rejecting parameters for which the
    /// steady state is not unique or the output does not observe the state.
    pub fn new(s: DMatrix<f64>, d: DMatrix<f64>, b: DMatrix<f64>, k: f64) -> Result<Self, PlantError> {
        let n = s.nrows();
        let invalid = |msg: String| Err(PlantError::InvalidParameter(msg));
        if n == 0 || s.ncols() != n {
            return invalid(format!("S must be square and nonempty, got {}x{}", s.nrows(), s.ncols()));
        }
        if d.nrows() != n {
            return invalid(format!("D must have {n} rows, got {}", d.nrows()));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return invalid(format!("B must be {n}xm with m >= 1, got {}x{}", b.nrows(), b.ncols()));
        }
        if !(k.is_finite() && k > 0.0) {
            return invalid(format!("feedback gain k must be positive, got {k}"));
        }
        let all_finite = s.iter().chain(d.iter()).chain(b.iter()).all(|v| v.is_finite());
        if !all_finite {
            return invalid("matrices must have finite entries".into());
        }
        let asym = (&s + s.transpose()).norm();
        if asym > SKEW_TOL {
            return invalid(format!("S must be skew-symmetric, ‖S + Sᵀ‖ = {asym:e}"));
        }
        let m = b.ncols();
        if numerical_rank(&b) < m {
            return invalid("B must have full column rank".into());
        }
        let a_cl = &s - &d * d.transpose() - &b * b.transpose() * k;
        if numerical_rank(&a_cl) < n {
            return invalid("closed-loop matrix S − DDᵀ − kBBᵀ is singular".into());
        }
        let a_cl_inv = a_cl
            .clone()
            .try_inverse()
            .ok_or_else(|| PlantError::InvalidParameter("closed-loop matrix is singular".into()))?;
        // observability matrix of (A_cl, Bᵀ)
        let c = b.transpose();
        let mut obs = DMatrix::zeros(n * m, n);
        let mut block = c.clone();
        for i in 0..n {
            obs.view_mut((i * m, 0), (m, n)).copy_from(&block);
            block = &block * &a_cl;
        }
        if numerical_rank(&obs) < n {
            return invalid("the pair (S − DDᵀ − kBBᵀ, Bᵀ) is not observable".into());
        }
        let plant = Self {
            s,
            d,
            b,
            k,
            a_cl,
            a_cl_inv,
        };
        plant.check_strict_passivity()?;
        Ok(plant)
    }

    /// Random skew `S`, damping `D` (n×q) and input matrix `B` (n×m).
    pub fn random(n: usize, m: usize, q: usize, k: f64, seed: u64) -> Result<Self, PlantError> {
        let mut rng = seeded(seed);
        let mut draw = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        let g = draw(n, n);
        let s = (&g - g.transpose()) * 0.5;
        let d = draw(n, q) * 0.5;
        let b = draw(n, m);
        Self::new(s, d, b, k)
    }

    pub fn dynamics_matrix(&self) -> &DMatrix<f64> {
        &self.a_cl
    }

    pub fn input_matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn skew_part(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn damping(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn gain(&self) -> f64 {
        self.k
    }

    /// `−⟨A_cl x + B u, x⟩ + ⟨u, Bᵀ x⟩ − k ‖Bᵀ x‖²`, which must be `≥ 0`.
    pub fn strict_passivity_margin(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let xdot = &self.a_cl * x + &self.b * u;
        let y = self.b.transpose() * x;
        -xdot.dot(x) + u.dot(&y) - self.k * y.norm_squared()
    }

    fn check_strict_passivity(&self) -> Result<(), PlantError> {
        let mut rng = seeded(0x5eed);
        for _ in 0..16 {
            let x = self.sample_state(&mut rng);
            let u = DVector::from_fn(self.b.ncols(), |_, _| rng.random_range(-1.0..1.0));
            let margin = self.strict_passivity_margin(&x, &u);
            if margin < -1e-10 * (1.0 + x.norm_squared()) {
                return Err(PlantError::InvalidParameter(format!(
                    "strict output passivity fails with margin {margin:e}"
                )));
            }
        }
        Ok(())
    }

    fn step_matrix(&self, step: f64) -> Result<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>, PlantError> {
        if !(step > 0.0) {
            return Err(PlantError::InvalidParameter(format!("step must be positive, got {step}")));
        }
        let n = self.a_cl.nrows();
        Ok((DMatrix::identity(n, n) - &self.a_cl * step).lu())
    }
}

impl Plant for NodePlant {
    fn name(&self) -> &'static str {
        "linear_node"
    }

    fn state_dim(&self) -> usize {
        self.a_cl.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn state_metric(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.dot(b)
    }

    fn output(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        self.b.transpose() * x
    }

    /// Eliminates `x = (I − h A_cl)⁻¹ (x_prev + h B z)` and solves the
    /// remaining affine variational inequality for `z`.
    fn coupled_resolvent(&self, input: &StepInput<'_>) -> Result<(DVector<f64>, DVector<f64>), PlantError> {
        let h = input.step;
        let lu = self.step_matrix(h)?;
        let solve = |rhs: &DMatrix<f64>| lu.solve(rhs).ok_or(crate::avi::AviError::Singular);
        let p_b = solve(&self.b)?;
        let p_x = solve(&DMatrix::from_column_slice(input.x_prev.len(), 1, input.x_prev.as_slice()))?;
        let m = self.b.ncols();
        let bt = self.b.transpose();
        let g = DMatrix::identity(m, m) + &bt * &p_b * (h * h);
        let c = input.z_prev + input.reference * h - (&bt * &p_x).column(0) * h;
        let z = avi::solve(&g, &c, input.constraint, input.options.tol, input.options.max_iter)?;
        let x = p_x.column(0) + &p_b * &z * h;
        Ok((x, z))
    }

    fn state_resolvent(
        &self,
        step: f64,
        x_prev: &DVector<f64>,
        u: &DVector<f64>,
        _options: SolverOptions,
    ) -> Result<DVector<f64>, PlantError> {
        let lu = self.step_matrix(step)?;
        lu.solve(&(x_prev + &self.b * u * step))
            .ok_or(PlantError::Avi(crate::avi::AviError::Singular))
    }

    fn steady_state(&self, u: &DVector<f64>) -> Result<DVector<f64>, PlantError> {
        Ok(-(&self.a_cl_inv * (&self.b * u)))
    }

    fn principal_section(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a_cl * x + &self.b * u
    }

    /// `‖Dᵀ Δx‖² + k ‖Bᵀ Δx‖²`.
    fn dissipation(&self, a: &GraphPoint, b: &GraphPoint) -> f64 {
        let dx = &a.x - &b.x;
        (self.d.transpose() * &dx).norm_squared() + self.k * (self.b.transpose() * &dx).norm_squared()
    }

    fn sample_graph_point(&self, rng: &mut SampleRng) -> GraphPoint {
        let x = self.sample_state(rng);
        let u = DVector::from_fn(self.b.ncols(), |_, _| rng.random_range(-3.0..3.0));
        let f = self.principal_section(&x, &u);
        GraphPoint { x, u, f }
    }

    fn sample_state(&self, rng: &mut SampleRng) -> DVector<f64> {
        DVector::from_fn(self.a_cl.nrows(), |_, _| rng.random_range(-3.0..3.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct L2BoundReport {
    pub t_index: usize,
    pub time: f64,
    /// Trapezoid quadrature of `‖y − r‖²` from `t_index` to the end.
    pub lhs: f64,
    /// `(1/2k)(‖x − x⋆‖² + ‖z − u⋆‖²)` at `t_index`.
    pub rhs: f64,
    pub slack: f64,
    pub passed: bool,
}

pub const L2_BOUND_SLACK: f64 = 1e-6;

/// Output-error energy after `t_index` against the bound given by the
/// product-metric distance to the steady-state pair at `t_index`.
pub fn l2_bound_check(
    plant: &NodePlant,
    trajectory: &Trajectory,
    pair: &SteadyStatePair,
    t_index: usize,
) -> L2BoundReport {
    let r = plant.output(&pair.x_star, &pair.u_star);
    let rows = trajectory.len();
    let t_index = t_index.min(rows.saturating_sub(1));
    let err: Vec<f64> = trajectory.outputs[t_index..]
        .iter()
        .map(|y| (y - &r).norm_squared())
        .collect();
    let mut lhs = 0.0;
    for w in 0..err.len().saturating_sub(1) {
        let dt = trajectory.times[t_index + w + 1] - trajectory.times[t_index + w];
        lhs += 0.5 * dt * (err[w] + err[w + 1]);
    }
    let dist_sq = (&trajectory.states[t_index] - &pair.x_star).norm_squared()
        + (&trajectory.z_values[t_index] - &pair.u_star).norm_squared();
    let rhs = dist_sq / (2.0 * plant.k);
    L2BoundReport {
        t_index,
        time: trajectory.times[t_index],
        lhs,
        rhs,
        slack: L2_BOUND_SLACK,
        passed: lhs <= rhs + L2_BOUND_SLACK,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{probe_dissipativity, steady_state};
    use crate::sets::ConvexSet;
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn diagonal_node_has_identity_steady_map() {
        let plant = NodePlant::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            1.0,
        )
        .unwrap();
        assert_eq!(plant.dynamics_matrix(), &(-DMatrix::<f64>::identity(2, 2)));
        let pair = steady_state(&plant, &v(&[1.0, 2.0])).unwrap();
        assert_eq!(pair.x_star, v(&[1.0, 2.0]));
    }

    #[test]
    fn rotating_node_steady_state() {
        let s = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let plant = NodePlant::new(s, DMatrix::zeros(2, 1), b, 1.0).unwrap();
        // A_cl = [[-1, 1], [-1, 0]], inverse [[0, -1], [1, -1]]
        let x = plant.steady_state(&v(&[2.0])).unwrap();
        assert_abs_diff_eq!(x[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], -2.0, epsilon = 1e-14);
    }

    #[test]
    fn build_rejects_bad_parameters() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(NodePlant::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1), b, 1.0).is_err());
        let not_skew = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(NodePlant::new(not_skew, DMatrix::zeros(2, 1), DMatrix::identity(2, 1), 1.0).is_err());
        // B = e1 with S = 0, D = 0 leaves the second state unobservable
        assert!(NodePlant::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            1.0
        )
        .is_err());
        assert!(NodePlant::new(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), DMatrix::identity(1, 1), 0.0).is_err());
    }

    #[test]
    fn scalar_step_example() {
        // A_cl = −1 with S = 0, D = 0, B = 1, k = 1
        let plant = NodePlant::new(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
            1.0,
        )
        .unwrap();
        let k = ConvexSet::new_box(vec![-10.0], vec![10.0]).unwrap();
        let input = StepInput {
            step: 1.0,
            x_prev: &v(&[0.0]),
            z_prev: &v(&[0.0]),
            reference: &v(&[1.0]),
            constraint: &k,
            options: SolverOptions::default(),
        };
        let (x, z) = plant.coupled_resolvent(&input).unwrap();
        assert_abs_diff_eq!(x[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(z[0], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn face_multiplier_has_the_right_sign() {
        let plant = NodePlant::random(4, 2, 2, 0.5, 1).unwrap();
        let k = ConvexSet::new_box(vec![-0.1, -0.1], vec![0.1, 0.1]).unwrap();
        let x_prev = DVector::zeros(4);
        let z_prev = v(&[0.1, -0.1]);
        let r = v(&[10.0, -10.0]);
        let input = StepInput {
            step: 0.1,
            x_prev: &x_prev,
            z_prev: &z_prev,
            reference: &r,
            constraint: &k,
            options: SolverOptions::default(),
        };
        let (x, z) = plant.coupled_resolvent(&input).unwrap();
        assert_eq!(z, v(&[0.1, -0.1]));
        let eta = &r - plant.output(&x, &z) - (&z - &z_prev) / 0.1;
        assert!(eta[0] > 0.0 && eta[1] < 0.0);
    }

    #[test]
    fn random_nodes_are_strictly_passive() {
        let plant = NodePlant::random(6, 2, 3, 0.5, 42).unwrap();
        let mut rng = seeded(3);
        for _ in 0..100 {
            let x = plant.sample_state(&mut rng);
            let u = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
            let margin = plant.strict_passivity_margin(&x, &u);
            let damping = (plant.damping().transpose() * &x).norm_squared();
            assert_abs_diff_eq!(margin, damping, epsilon = 1e-10);
        }
        assert!(probe_dissipativity(&plant, 100, 7).passed);
    }
}
