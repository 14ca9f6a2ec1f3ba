//! Affine variational inequalities over a convex set.
//!
//! Solves `0 ∈ G z − c + N_K(z)` for a matrix `G` whose symmetric part is
//! positive definite. This is the input-side equation of one implicit step
//! once the state has been eliminated (exactly for linear plants, after a
//! Newton linearization for nonlinear ones). Strong monotonicity makes the
//! solution unique.

use nalgebra::{DMatrix, DVector};

use crate::sets::{ConvexSet, SetError};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AviError {
    #[error(transparent)]
    Set(#[from] SetError),
    #[error("matrix of the variational inequality is singular")]
    Singular,
    #[error("projected fixed-point iteration stalled after {iterations} iterations (step {change:e})")]
    NonConvergence { iterations: usize, change: f64 },
    #[error("no active face of the box satisfies the complementarity signs")]
    NoFace,
}

/// Box dimensions up to which all `3^m` face assignments are enumerated.
pub const MAX_ENUMERATED_BOX_DIM: usize = 2;

pub fn solve(
    g: &DMatrix<f64>,
    c: &DVector<f64>,
    set: &ConvexSet,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>, AviError> {
    let m = c.len();
    if set.dim() != m {
        return Err(SetError::DimensionMismatch {
            expected: set.dim(),
            got: m,
        }
        .into());
    }
    if let Some(interval) = set.as_interval() {
        let gain = g[(0, 0)];
        if gain <= 0.0 {
            return Err(AviError::Singular);
        }
        return Ok(DVector::from_element(1, interval.clamp(c[0] / gain)));
    }
    match set {
        ConvexSet::Box { lower, upper } if m <= MAX_ENUMERATED_BOX_DIM => {
            enumerate_box_faces(g, c, lower, upper, tol)
        }
        ConvexSet::Ball { center, radius } => radial_kkt(g, c, center, *radius, tol),
        _ => projected_fixed_point(g, c, set, tol, max_iter),
    }
}

/// Face states of a box coordinate.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Face {
    Free,
    Lower,
    Upper,
}

fn enumerate_box_faces(
    g: &DMatrix<f64>,
    c: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    tol: f64,
) -> Result<DVector<f64>, AviError> {
    let m = c.len();
    let combos = 3usize.pow(m as u32);
    let scale = 1.0 + c.amax() + g.amax();
    let sign_tol = tol.max(1e-10) * scale;
    for code in 0..combos {
        let mut faces = vec![Face::Free; m];
        let mut rest = code;
        for face in faces.iter_mut() {
            *face = match rest % 3 {
                0 => Face::Free,
                1 => Face::Lower,
                _ => Face::Upper,
            };
            rest /= 3;
        }
        let Some(z) = solve_face(g, c, lower, upper, &faces) else {
            continue;
        };
        // multiplier: c − G z must lie in N_K(z)
        let eta = c - g * &z;
        let mut violation = 0.0f64;
        for i in 0..m {
            let v = match faces[i] {
                Face::Free => (lower[i] - z[i]).max(z[i] - upper[i]).max(0.0),
                Face::Lower => eta[i].max(0.0),
                Face::Upper => (-eta[i]).max(0.0),
            };
            violation = violation.max(v);
        }
        if violation <= sign_tol {
            return Ok(z);
        }
    }
    Err(AviError::NoFace)
}

fn solve_face(
    g: &DMatrix<f64>,
    c: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    faces: &[Face],
) -> Option<DVector<f64>> {
    let m = c.len();
    let mut z = DVector::zeros(m);
    let mut free = Vec::new();
    for i in 0..m {
        match faces[i] {
            Face::Free => free.push(i),
            Face::Lower if lower[i].is_finite() => z[i] = lower[i],
            Face::Upper if upper[i].is_finite() => z[i] = upper[i],
            _ => return None,
        }
    }
    if free.is_empty() {
        return Some(z);
    }
    let gz = g * &z;
    let sub = DMatrix::from_fn(free.len(), free.len(), |a, b| g[(free[a], free[b])]);
    let rhs = DVector::from_fn(free.len(), |a, _| c[free[a]] - gz[free[a]]);
    let sol = sub.lu().solve(&rhs)?;
    for (a, &i) in free.iter().enumerate() {
        z[i] = sol[a];
    }
    Some(z)
}

/// Ball constraint: either the unconstrained solution is inside, or
/// `(G + μ I) z = c + μ center` on the sphere for the unique `μ > 0`.
fn radial_kkt(
    g: &DMatrix<f64>,
    c: &DVector<f64>,
    center: &DVector<f64>,
    radius: f64,
    tol: f64,
) -> Result<DVector<f64>, AviError> {
    let m = c.len();
    let at = |mu: f64| -> Result<DVector<f64>, AviError> {
        let shifted = g + DMatrix::identity(m, m) * mu;
        shifted.lu().solve(&(c + center * mu)).ok_or(AviError::Singular)
    };
    let free = at(0.0)?;
    if (&free - center).norm() <= radius {
        return Ok(free);
    }
    // ‖z(μ) − center‖ decreases strictly in μ when G has a positive definite
    // symmetric part.
    let (mut lo, mut hi) = (0.0, 1.0);
    while (at(hi)? - center).norm() > radius {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Err(AviError::Singular);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (at(mid)? - center).norm() > radius {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= tol * (1.0 + hi) * 1e-3 {
            break;
        }
    }
    let z = at(hi)?;
    // land exactly on the sphere
    let offset = &z - center;
    let norm = offset.norm();
    Ok(center + offset * (radius / norm))
}

/// `z ← P_K(z − γ (G z − c))` with `γ = σ / L²`, a contraction when `σ` is
/// the monotonicity modulus and `L` the Lipschitz constant of `z ↦ G z`.
fn projected_fixed_point(
    g: &DMatrix<f64>,
    c: &DVector<f64>,
    set: &ConvexSet,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>, AviError> {
    let sym = (g + g.transpose()) * 0.5;
    let sigma = sym.symmetric_eigenvalues().min();
    if sigma <= 0.0 {
        return Err(AviError::Singular);
    }
    let lipschitz = g.singular_values().max();
    let gamma = sigma / (lipschitz * lipschitz);
    let mut z = set.project(&(c * gamma))?;
    let mut change = f64::INFINITY;
    for _ in 0..max_iter.max(1) {
        let next = set.project(&(&z - (g * &z - c) * gamma))?;
        change = (&next - &z).norm();
        z = next;
        if change <= tol {
            return Ok(z);
        }
    }
    Err(AviError::NonConvergence {
        iterations: max_iter,
        change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn residual_ok(g: &DMatrix<f64>, c: &DVector<f64>, set: &ConvexSet, z: &DVector<f64>) -> bool {
        let eta = c - g * z;
        set.normal_cone_contains(z, &eta, 1e-8).unwrap()
    }

    fn random_g(rng: &mut crate::rng::SampleRng, m: usize, h: f64) -> DMatrix<f64> {
        let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        // identity plus a monotone perturbation (PSD + skew)
        DMatrix::identity(m, m) + (&a * a.transpose()) * h + (&a - a.transpose()) * h
    }

    #[test]
    fn scalar_interval_is_clamped_quotient() {
        let set = ConvexSet::new_box(vec![-1.0], vec![1.0]).unwrap();
        let g = DMatrix::from_element(1, 1, 2.0);
        let z = solve(&g, &DVector::from_element(1, 5.0), &set, 1e-12, 10).unwrap();
        assert_eq!(z[0], 1.0);
        let z = solve(&g, &DVector::from_element(1, 1.0), &set, 1e-12, 10).unwrap();
        assert_eq!(z[0], 0.5);
    }

    #[test]
    fn all_strategies_satisfy_the_inclusion() {
        let mut rng = seeded(5);
        let sets = [
            ConvexSet::new_box(vec![-0.5, -0.2], vec![0.3, 0.4]).unwrap(),
            ConvexSet::new_ball(vec![0.1, -0.1], 0.3).unwrap(),
            ConvexSet::new_box(vec![-0.5, -0.2, -0.1], vec![0.3, 0.4, 0.2]).unwrap(),
            ConvexSet::new_intersection(vec![
                ConvexSet::new_ball(vec![0.0, 0.0], 1.0).unwrap(),
                ConvexSet::new_halfspace(vec![1.0, 1.0], 0.2).unwrap(),
            ])
            .unwrap(),
        ];
        for set in &sets {
            for _ in 0..30 {
                let m = set.dim();
                let g = random_g(&mut rng, m, 0.3);
                let c = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
                let z = solve(&g, &c, set, 1e-13, 100_000).unwrap();
                assert!(set.contains(&z, 1e-10).unwrap());
                assert!(residual_ok(&g, &c, set, &z), "set {set:?}");
            }
        }
    }

    #[test]
    fn face_enumeration_agrees_with_fixed_point() {
        let mut rng = seeded(9);
        let set = ConvexSet::new_box(vec![-0.5, -0.2], vec![0.3, 0.4]).unwrap();
        for _ in 0..30 {
            let g = random_g(&mut rng, 2, 0.5);
            let c = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let exact = enumerate_box_faces(
                &g,
                &c,
                &DVector::from_vec(vec![-0.5, -0.2]),
                &DVector::from_vec(vec![0.3, 0.4]),
                1e-12,
            )
            .unwrap();
            let iterative = projected_fixed_point(&g, &c, &set, 1e-14, 200_000).unwrap();
            assert!((exact - iterative).norm() < 1e-10);
        }
    }
}
