//! RLC load fed by a controlled current source, with an ideal diode in the
//! second inductor branch.
//!
//! State `x = (V_C, I1, I2)`, input the source current `I`, output `V_C`:
//!
//! ```text
//! C  V_C' = −I1 + I
//! L1 I1'  = V_C − R (I1 + I2)
//! L2 I2'  = −R (I1 + I2) − V_D,     V_D ∈ N_{ℝ+}(I2)
//! ```
//!
//! so `I2 ≥ 0`, `V_D ≤ 0` and `I2 · V_D = 0`. The state space carries the
//! stored-energy metric `Q = diag(C, L1, L2)`.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::plant::{GraphPoint, Plant, PlantError, SolverOptions, StepInput};
use crate::rng::SampleRng;
use crate::sets::{Interval, SetError};

/// Branch sign conditions are accepted up to this (scaled) violation.
pub const BRANCH_TOL: f64 = 1e-10;
/// Negative diode currents of at most this size are rounded to zero.
pub const DIODE_CLAMP: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlcParams {
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
    #[serde(rename = "R")]
    pub r: f64,
}

impl Default for RlcParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            l1: 1.0,
            l2: 1.0,
            r: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RlcPlant {
    params: RlcParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Diode {
    /// `I2 = 0`, `V_D ≤ 0`
    Blocking,
    /// `V_D = 0`, `I2 ≥ 0`
    Conducting,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum InputMode {
    /// Input held at a given value.
    Fixed(f64),
    /// Projected integrator `(z − z_prev)/h ∈ r − V_C − N_[lo,hi](z)`.
    Integrated {
        z_prev: f64,
        reference: f64,
        bounds: Interval,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Face {
    Lower,
    Interior,
    Upper,
}

/// Solution of one implicit step together with the realized multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct RlcStep {
    pub state: DVector<f64>,
    pub z: f64,
    /// Realized diode voltage `V_D ∈ N_{ℝ+}(I2)`.
    pub diode_voltage: f64,
    /// Realized normal-cone element of the input constraint.
    pub z_force: f64,
}

impl RlcPlant {
    pub fn new(params: RlcParams) -> Result<Self, PlantError> {
        for (name, v) in [("C", params.c), ("L1", params.l1), ("L2", params.l2), ("R", params.r)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(PlantError::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &RlcParams {
        &self.params
    }

    /// Diode voltage consistent with the selection `f ∈ A(x, u)`.
    pub fn diode_voltage_from_selection(&self, x: &DVector<f64>, f: &DVector<f64>) -> f64 {
        -self.params.r * (x[1] + x[2]) - self.params.l2 * f[2]
    }

    /// Dynamics for a given diode voltage.
    pub fn dynamics(&self, x: &DVector<f64>, u: f64, diode_voltage: f64) -> DVector<f64> {
        let p = &self.params;
        let s = x[1] + x[2];
        DVector::from_vec(vec![
            (-x[1] + u) / p.c,
            (x[0] - p.r * s) / p.l1,
            (-p.r * s - diode_voltage) / p.l2,
        ])
    }

    /// `R (ΔI1 + ΔI2)² + ΔV_D · ΔI2`.
    pub fn h_value(&self, x1: &DVector<f64>, vd1: f64, x2: &DVector<f64>, vd2: f64) -> f64 {
        let ds = (x1[1] + x1[2]) - (x2[1] + x2[2]);
        self.params.r * ds * ds + (vd1 - vd2) * (x1[2] - x2[2])
    }

    /// Implicit step of the closed loop, solved by enumerating the six
    /// diode/constraint branches.
    pub fn implicit_step(
        &self,
        step: f64,
        x_prev: &DVector<f64>,
        z_prev: f64,
        reference: f64,
        bounds: Interval,
    ) -> Result<RlcStep, PlantError> {
        self.enumerate(
            step,
            x_prev,
            InputMode::Integrated {
                z_prev,
                reference,
                bounds,
            },
        )
    }

    fn enumerate(&self, step: f64, x_prev: &DVector<f64>, mode: InputMode) -> Result<RlcStep, PlantError> {
        if x_prev.len() != 3 {
            return Err(PlantError::DimensionMismatch {
                what: "RLC state",
                expected: 3,
                got: x_prev.len(),
            });
        }
        if !(step > 0.0) {
            return Err(PlantError::InvalidParameter(format!("step must be positive, got {step}")));
        }
        let faces: &[Face] = match mode {
            InputMode::Fixed(_) => &[Face::Interior],
            InputMode::Integrated { .. } => &[Face::Lower, Face::Interior, Face::Upper],
        };
        let scale = 1.0 + x_prev.amax() + self.input_scale(mode);
        let mut best: Option<(f64, RlcStep)> = None;
        for diode in [Diode::Blocking, Diode::Conducting] {
            for &face in faces {
                let Some(sol) = self.solve_branch(step, x_prev, mode, diode, face) else {
                    continue;
                };
                let violation = branch_violation(&sol, mode, diode, face);
                if violation == 0.0 {
                    return Ok(self.finish(sol, mode));
                }
                // near a switching surface several branches are feasible up
                // to rounding; keep the least violated one
                if best.as_ref().is_none_or(|(v, _)| violation < *v) {
                    best = Some((violation, self.finish(sol, mode)));
                }
            }
        }
        match best {
            Some((violation, step)) if violation <= BRANCH_TOL * scale => Ok(step),
            _ => Err(PlantError::NoBranch {
                violation: best.map_or(f64::INFINITY, |(v, _)| v),
            }),
        }
    }

    fn input_scale(&self, mode: InputMode) -> f64 {
        match mode {
            InputMode::Fixed(u) => u.abs(),
            InputMode::Integrated { z_prev, reference, .. } => z_prev.abs() + reference.abs(),
        }
    }

    /// Unknowns `(V_C, I1, I2, z, V_D, η)`.
    fn solve_branch(
        &self,
        step: f64,
        x_prev: &DVector<f64>,
        mode: InputMode,
        diode: Diode,
        face: Face,
    ) -> Option<Vector6<f64>> {
        let p = &self.params;
        let h = step;
        let mut a = Matrix6::zeros();
        let mut b = Vector6::zeros();
        a[(0, 0)] = p.c / h;
        a[(0, 1)] = 1.0;
        a[(0, 3)] = -1.0;
        b[0] = p.c / h * x_prev[0];
        a[(1, 0)] = -1.0;
        a[(1, 1)] = p.l1 / h + p.r;
        a[(1, 2)] = p.r;
        b[1] = p.l1 / h * x_prev[1];
        a[(2, 1)] = p.r;
        a[(2, 2)] = p.l2 / h + p.r;
        a[(2, 4)] = 1.0;
        b[2] = p.l2 / h * x_prev[2];
        match mode {
            InputMode::Fixed(u) => {
                a[(3, 3)] = 1.0;
                b[3] = u;
            }
            InputMode::Integrated { z_prev, reference, .. } => {
                a[(3, 0)] = 1.0;
                a[(3, 3)] = 1.0 / h;
                a[(3, 5)] = 1.0;
                b[3] = reference + z_prev / h;
            }
        }
        match diode {
            Diode::Blocking => a[(4, 2)] = 1.0,
            Diode::Conducting => a[(4, 4)] = 1.0,
        }
        match (face, mode) {
            (Face::Interior, _) | (_, InputMode::Fixed(_)) => a[(5, 5)] = 1.0,
            (Face::Lower, InputMode::Integrated { bounds, .. }) => {
                if !bounds.lower.is_finite() {
                    return None;
                }
                a[(5, 3)] = 1.0;
                b[5] = bounds.lower;
            }
            (Face::Upper, InputMode::Integrated { bounds, .. }) => {
                if !bounds.upper.is_finite() {
                    return None;
                }
                a[(5, 3)] = 1.0;
                b[5] = bounds.upper;
            }
        }
        let mut sol = a.lu().solve(&b)?;
        // constrained unknowns take their exact values
        match diode {
            Diode::Blocking => sol[2] = 0.0,
            Diode::Conducting => sol[4] = 0.0,
        }
        match (face, mode) {
            (_, InputMode::Fixed(u)) => {
                sol[3] = u;
                sol[5] = 0.0;
            }
            (Face::Interior, _) => sol[5] = 0.0,
            (Face::Lower, InputMode::Integrated { bounds, .. }) => sol[3] = bounds.lower,
            (Face::Upper, InputMode::Integrated { bounds, .. }) => sol[3] = bounds.upper,
        }
        Some(sol)
    }

    fn finish(&self, sol: Vector6<f64>, mode: InputMode) -> RlcStep {
        let mut i2 = sol[2];
        if i2 < 0.0 && i2 >= -DIODE_CLAMP {
            i2 = 0.0;
        }
        // an accepted interior branch may overshoot a face by rounding
        let z = match mode {
            InputMode::Integrated { bounds, .. } => bounds.clamp(sol[3]),
            InputMode::Fixed(_) => sol[3],
        };
        RlcStep {
            state: DVector::from_vec(vec![sol[0], sol[1], i2]),
            z,
            diode_voltage: sol[4],
            z_force: sol[5],
        }
    }
}

fn branch_violation(sol: &Vector6<f64>, mode: InputMode, diode: Diode, face: Face) -> f64 {
    let diode_violation = match diode {
        Diode::Blocking => sol[4].max(0.0),
        Diode::Conducting => (-sol[2]).max(0.0),
    };
    let face_violation = match mode {
        InputMode::Fixed(_) => 0.0,
        InputMode::Integrated { bounds, .. } => match face {
            Face::Lower => sol[5].max(0.0),
            Face::Upper => (-sol[5]).max(0.0),
            Face::Interior => (bounds.lower - sol[3]).max(sol[3] - bounds.upper).max(0.0),
        },
    };
    diode_violation.max(face_violation)
}

fn interval_of(set: &crate::sets::ConvexSet) -> Result<Interval, PlantError> {
    set.as_interval().ok_or_else(|| {
        PlantError::Set(SetError::DimensionMismatch {
            expected: 1,
            got: set.dim(),
        })
    })
}

impl Plant for RlcPlant {
    fn name(&self) -> &'static str {
        "rlc"
    }

    fn state_dim(&self) -> usize {
        3
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn state_metric(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let p = &self.params;
        p.c * a[0] * b[0] + p.l1 * a[1] * b[1] + p.l2 * a[2] * b[2]
    }

    fn output(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x[0])
    }

    fn coupled_resolvent(&self, input: &StepInput<'_>) -> Result<(DVector<f64>, DVector<f64>), PlantError> {
        let bounds = interval_of(input.constraint)?;
        let step = self.implicit_step(
            input.step,
            input.x_prev,
            input.z_prev[0],
            input.reference[0],
            bounds,
        )?;
        Ok((step.state, DVector::from_element(1, step.z)))
    }

    fn state_resolvent(
        &self,
        step: f64,
        x_prev: &DVector<f64>,
        u: &DVector<f64>,
        _options: SolverOptions,
    ) -> Result<DVector<f64>, PlantError> {
        Ok(self.enumerate(step, x_prev, InputMode::Fixed(u[0]))?.state)
    }

    /// `(R max(u, 0), u, max(−u, 0))`; the diode conducts only for negative
    /// source currents.
    fn steady_state(&self, u: &DVector<f64>) -> Result<DVector<f64>, PlantError> {
        let u = u[0];
        Ok(DVector::from_vec(vec![self.params.r * u.max(0.0), u, (-u).max(0.0)]))
    }

    fn principal_section(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let s = x[1] + x[2];
        let diode_voltage = if x[2] > 0.0 {
            0.0
        } else {
            (-self.params.r * s).min(0.0)
        };
        self.dynamics(x, u[0], diode_voltage)
    }

    fn dissipation(&self, a: &GraphPoint, b: &GraphPoint) -> f64 {
        let vd_a = self.diode_voltage_from_selection(&a.x, &a.f);
        let vd_b = self.diode_voltage_from_selection(&b.x, &b.f);
        self.h_value(&a.x, vd_a, &b.x, vd_b)
    }

    fn sample_graph_point(&self, rng: &mut SampleRng) -> GraphPoint {
        let blocking = rng.random_bool(0.5);
        let i2 = if blocking { 0.0 } else { rng.random_range(0.0..3.0) };
        let x = DVector::from_vec(vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), i2]);
        let diode_voltage = if blocking { rng.random_range(-3.0..0.0) } else { 0.0 };
        let u: f64 = rng.random_range(-3.0..3.0);
        let f = self.dynamics(&x, u, diode_voltage);
        GraphPoint {
            x,
            u: DVector::from_element(1, u),
            f,
        }
    }

    fn sample_state(&self, rng: &mut SampleRng) -> DVector<f64> {
        DVector::from_vec(vec![
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..2.0) },
        ])
    }
}

/// Linear part of the dynamics as a matrix, used by the algebraic checks.
pub fn linear_part(params: &RlcParams) -> DMatrix<f64> {
    let p = params;
    DMatrix::from_row_slice(
        3,
        3,
        &[
            0.0,
            -1.0 / p.c,
            0.0,
            1.0 / p.l1,
            -p.r / p.l1,
            -p.r / p.l1,
            0.0,
            -p.r / p.l2,
            -p.r / p.l2,
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{dissipation_h, probe_dissipativity, steady_state};
    use crate::rng::seeded;
    use crate::sets::ConvexSet;
    use approx::assert_abs_diff_eq;

    fn unit_plant() -> RlcPlant {
        RlcPlant::new(RlcParams {
            c: 1.0,
            l1: 1.0,
            l2: 1.0,
            r: 1.0,
        })
        .unwrap()
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn unit_bounds() -> Interval {
        Interval {
            lower: 0.25,
            upper: 3.0,
        }
    }

    #[test]
    fn rejects_nonpositive_parameters() {
        let bad = RlcParams {
            r: -1.0,
            ..RlcParams::default()
        };
        assert!(RlcPlant::new(bad).is_err());
        let bad = RlcParams {
            c: 0.0,
            ..RlcParams::default()
        };
        assert!(RlcPlant::new(bad).is_err());
    }

    #[test]
    fn metric_is_energy_weighted() {
        let plant = RlcPlant::new(RlcParams {
            c: 2.0,
            l1: 3.0,
            l2: 4.0,
            r: 1.0,
        })
        .unwrap();
        assert_eq!(plant.state_metric(&v(&[1.0, 1.0, 1.0]), &v(&[1.0, 1.0, 1.0])), 9.0);
        assert_eq!(plant.state_metric(&v(&[1.0, 0.0, 0.0]), &v(&[0.0, 1.0, 0.0])), 0.0);
        assert_eq!(plant.state_metric(&v(&[0.0, 0.0, 0.0]), &v(&[5.0, 1.0, 2.0])), 0.0);
    }

    #[test]
    fn steady_states() {
        let plant = RlcPlant::new(RlcParams::default()).unwrap();
        let pair = steady_state(&plant, &v(&[1.0])).unwrap();
        assert_eq!(pair.x_star, v(&[2.0, 1.0, 0.0]));
        let plant3 = RlcPlant::new(RlcParams {
            r: 3.0,
            ..RlcParams::default()
        })
        .unwrap();
        assert_eq!(plant3.steady_state(&v(&[0.5])).unwrap(), v(&[1.5, 0.5, 0.0]));
        // blocking diode force −R u⋆ makes the third component vanish
        let section = plant.principal_section(&pair.x_star, &pair.u_star);
        assert_eq!(section, v(&[0.0, 0.0, 0.0]));
        assert_eq!(plant.diode_voltage_from_selection(&pair.x_star, &section), -2.0);
    }

    #[test]
    fn h_examples() {
        let plant = RlcPlant::new(RlcParams::default()).unwrap();
        assert_eq!(plant.h_value(&v(&[5.0, 2.0, 1.0]), 0.0, &v(&[5.0, 1.0, 2.0]), 0.0), 0.0);
        assert_eq!(plant.h_value(&v(&[0.0, 1.0, 0.0]), -1.0, &v(&[0.0, 0.0, 0.0]), 0.0), 2.0);
        let x = v(&[0.3, -0.2, 0.7]);
        assert_eq!(plant.h_value(&x, 0.0, &x, 0.0), 0.0);
        // both conducting, equal total current
        assert_eq!(plant.h_value(&v(&[0.0, 1.0, 2.0]), 0.0, &v(&[1.0, 2.0, 1.0]), 0.0), 0.0);
        // closed form through graph points agrees with the explicit diode forces
        let a = GraphPoint {
            x: v(&[0.0, 1.0, 0.0]),
            u: v(&[0.0]),
            f: plant.dynamics(&v(&[0.0, 1.0, 0.0]), 0.0, -1.0),
        };
        let b = GraphPoint {
            x: v(&[0.0, 0.0, 0.0]),
            u: v(&[0.0]),
            f: plant.dynamics(&v(&[0.0, 0.0, 0.0]), 0.0, 0.0),
        };
        assert_abs_diff_eq!(dissipation_h(&plant, &a, &b).unwrap(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn principal_section_examples() {
        let plant = unit_plant();
        let conducting = plant.principal_section(&v(&[0.0, 1.0, 0.5]), &v(&[0.0]));
        assert_eq!(conducting[2], -1.5);
        let s = plant.principal_section(&v(&[0.0, -1.0, 0.0]), &v(&[0.0]));
        assert_eq!(s[2], 1.0);
        let s = plant.principal_section(&v(&[0.0, 2.0, 0.0]), &v(&[0.0]));
        assert_eq!(s[2], 0.0);
        // grid search over admissible diode voltages
        for i1 in [-2.0, -0.5, 0.0, 0.5, 2.0] {
            let x = v(&[0.0, i1, 0.0]);
            let best = (0..=4000)
                .map(|k| -(k as f64) * 1e-3)
                .map(|vd| plant.dynamics(&x, 0.0, vd)[2].abs())
                .fold(f64::INFINITY, f64::min);
            assert_abs_diff_eq!(plant.principal_section(&x, &v(&[0.0]))[2].abs(), best, epsilon = 1e-12);
        }
    }

    #[test]
    fn one_step_from_rest_blocks_the_diode() {
        let plant = unit_plant();
        let s = plant.implicit_step(0.1, &v(&[0.0, 0.0, 0.0]), 1.0, 1.0, unit_bounds()).unwrap();
        // reference values from an independent scalar bisection on z
        assert_abs_diff_eq!(s.state[0], 0.10793933987511153, epsilon = 1e-12);
        assert_abs_diff_eq!(s.state[1], 0.009812667261373776, epsilon = 1e-12);
        assert_eq!(s.state[2], 0.0);
        assert_abs_diff_eq!(s.z, 1.0892060660124891, epsilon = 1e-12);
        assert_abs_diff_eq!(s.diode_voltage, -0.009812667261373777, epsilon = 1e-12);
        assert_eq!(s.z_force, 0.0);
    }

    #[test]
    fn negative_inductor_current_makes_the_diode_conduct() {
        let plant = unit_plant();
        let s = plant.implicit_step(0.1, &v(&[0.0, -5.0, 0.0]), 1.0, 1.0, unit_bounds()).unwrap();
        assert_abs_diff_eq!(s.state[0], 0.5576451349141456, epsilon = 1e-12);
        assert_abs_diff_eq!(s.state[1], -4.53221586263287, epsilon = 1e-12);
        assert_abs_diff_eq!(s.state[2], 0.4120196238757155, epsilon = 1e-12);
        assert_abs_diff_eq!(s.z, 1.0442354865085854, epsilon = 1e-12);
        assert_eq!(s.diode_voltage, 0.0);

        let s = plant.implicit_step(0.1, &v(&[1.0, 2.0, 0.5]), 1.0, 1.0, unit_bounds()).unwrap();
        assert_abs_diff_eq!(s.state[0], 0.9133278822567457, epsilon = 1e-12);
        assert_abs_diff_eq!(s.state[1], 1.8753883892068683, epsilon = 1e-12);
        assert_abs_diff_eq!(s.state[2], 0.2840556009811938, epsilon = 1e-12);
        assert_abs_diff_eq!(s.z, 1.0086672117743256, epsilon = 1e-12);
    }

    #[test]
    fn constraint_face_carries_the_multiplier() {
        let plant = unit_plant();
        // large reference pushes z to the upper bound
        let s = plant
            .implicit_step(0.5, &v(&[0.0, 0.0, 0.0]), 2.9, 50.0, unit_bounds())
            .unwrap();
        assert_eq!(s.z, 3.0);
        assert!(s.z_force > 0.0);
        let s = plant
            .implicit_step(0.5, &v(&[5.0, 0.0, 0.0]), 0.3, -50.0, unit_bounds())
            .unwrap();
        assert_eq!(s.z, 0.25);
        assert!(s.z_force < 0.0);
    }

    #[test]
    fn steady_state_is_a_fixed_point() {
        let plant = RlcPlant::new(RlcParams::default()).unwrap();
        let k = ConvexSet::new_box(vec![0.25], vec![3.0]).unwrap();
        for u in [0.25, 1.0, 2.2, 3.0] {
            let pair = steady_state(&plant, &v(&[u])).unwrap();
            let r = pair.output(&plant);
            for h in [1e-3, 0.1, 10.0] {
                let input = StepInput {
                    step: h,
                    x_prev: &pair.x_star,
                    z_prev: &pair.u_star,
                    reference: &r,
                    constraint: &k,
                    options: SolverOptions::default(),
                };
                let (x, z) = plant.coupled_resolvent(&input).unwrap();
                assert!((x - &pair.x_star).amax() < 1e-12);
                assert!((z - &pair.u_star).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn dissipativity_probe_passes() {
        let plant = RlcPlant::new(RlcParams::default()).unwrap();
        let report = probe_dissipativity(&plant, 100, 7);
        assert!(report.passed, "{report:?}");
        assert!(report.worst_margin <= 0.0);
    }

    #[test]
    fn linear_part_dissipates_exactly() {
        let params = RlcParams {
            c: 0.5,
            l1: 2.0,
            l2: 1.5,
            r: 3.0,
        };
        let plant = RlcPlant::new(params).unwrap();
        let a = linear_part(&params);
        let mut rng = seeded(11);
        for _ in 0..100 {
            let x = plant.sample_state(&mut rng);
            let ax = &a * &x;
            let s = x[1] + x[2];
            assert_abs_diff_eq!(plant.state_metric(&ax, &x), -params.r * s * s, epsilon = 1e-12);
            let u: f64 = rng.random_range(-3.0..3.0);
            // input enters through the capacitor only: ⟨B u, x⟩_Q = u V_C
            let bu = v(&[u / params.c, 0.0, 0.0]);
            assert_abs_diff_eq!(plant.state_metric(&bu, &x), u * x[0], epsilon = 1e-12);
        }
    }
}
