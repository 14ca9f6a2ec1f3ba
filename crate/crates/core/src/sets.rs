//! Closed convex sets in Euclidean space with exact projections.
//!
//! A [`ConvexSet`] plays the role of the input constraint region `K`. Its
//! projection is the resolvent of the normal cone operator `N_K` for every
//! positive step, which is what the projected integrator relies on. Boxes,
//! balls and halfspaces project in closed form; intersections use Dykstra's
//! alternating projections.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default absolute tolerance for membership and normal-cone queries.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Iteration cap for Dykstra's algorithm.
pub const DYKSTRA_MAX_ITER: usize = 10_000;

/// Stop tolerance for Dykstra's algorithm (squared change over one sweep).
pub const DYKSTRA_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SetError {
    #[error("dimension mismatch: set has dimension {expected}, point has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("Dykstra projection did not converge after {iterations} sweeps (last change {change:e})")]
    DykstraNonConvergence { iterations: usize, change: f64 },
    #[error("point lies outside the set (distance {distance:e} > tol {tol:e})")]
    OutsideSet { distance: f64, tol: f64 },
    #[error("invalid set: {0}")]
    Invalid(String),
}

/// A nonempty closed convex subset of `R^m` with nonempty interior.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexSet {
    /// `{v : lower <= v <= upper}` componentwise, with `lower < upper`.
    Box { lower: DVector<f64>, upper: DVector<f64> },
    /// Closed Euclidean ball.
    Ball { center: DVector<f64>, radius: f64 },
    /// `{v : <normal, v> <= offset}` with `normal` of unit length.
    Halfspace { normal: DVector<f64>, offset: f64 },
    Intersection(Vec<ConvexSet>),
}

/// Closed interval with possibly infinite endpoints; the 1-D view of a set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn clamp(&self, v: f64) -> f64 {
        v.max(self.lower).min(self.upper)
    }
}

impl ConvexSet {
    pub fn new_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, SetError> {
        let set = ConvexSet::Box {
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn new_ball(center: Vec<f64>, radius: f64) -> Result<Self, SetError> {
        let set = ConvexSet::Ball {
            center: DVector::from_vec(center),
            radius,
        };
        set.validate()?;
        Ok(set)
    }

    /// Builds `{v : <normal, v> <= offset}`; the normal is rescaled to unit
    /// length together with the offset.
    pub fn new_halfspace(normal: Vec<f64>, offset: f64) -> Result<Self, SetError> {
        let normal = DVector::from_vec(normal);
        let len = normal.norm();
        if !(len.is_finite() && len > 0.0) {
            return Err(SetError::Invalid("halfspace normal must be nonzero and finite".into()));
        }
        let set = ConvexSet::Halfspace {
            normal: normal / len,
            offset: offset / len,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn new_intersection(sets: Vec<ConvexSet>) -> Result<Self, SetError> {
        let set = ConvexSet::Intersection(sets);
        set.validate()?;
        Ok(set)
    }

    /// Checks the structural invariants (finite data, nonempty interior for
    /// boxes and balls, consistent dimensions).
    pub fn validate(&self) -> Result<(), SetError> {
        match self {
            ConvexSet::Box { lower, upper } => {
                if lower.len() != upper.len() || lower.is_empty() {
                    return Err(SetError::Invalid(format!(
                        "box bounds have lengths {} and {}",
                        lower.len(),
                        upper.len()
                    )));
                }
                for (i, (l, u)) in lower.iter().zip(upper.iter()).enumerate() {
                    if l.is_nan() || u.is_nan() {
                        return Err(SetError::Invalid(format!("box bound {i} is NaN")));
                    }
                    if l >= u {
                        return Err(SetError::Invalid(format!(
                            "box requires lower < upper, got lower[{i}] = {l} >= upper[{i}] = {u}"
                        )));
                    }
                }
                Ok(())
            }
            ConvexSet::Ball { center, radius } => {
                if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
                    return Err(SetError::Invalid("ball center must be finite and nonempty".into()));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(SetError::Invalid(format!("ball radius must be > 0, got {radius}")));
                }
                Ok(())
            }
            ConvexSet::Halfspace { normal, offset } => {
                if normal.is_empty() || !offset.is_finite() {
                    return Err(SetError::Invalid("halfspace needs a normal and finite offset".into()));
                }
                if (normal.norm() - 1.0).abs() > 1e-12 {
                    return Err(SetError::Invalid("halfspace normal must have unit length".into()));
                }
                Ok(())
            }
            ConvexSet::Intersection(sets) => {
                let first = sets
                    .first()
                    .ok_or_else(|| SetError::Invalid("intersection of zero sets".into()))?;
                let dim = first.dim();
                for s in sets {
                    s.validate()?;
                    if s.dim() != dim {
                        return Err(SetError::Invalid(format!(
                            "intersection mixes dimensions {dim} and {}",
                            s.dim()
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Box { lower, .. } => lower.len(),
            ConvexSet::Ball { center, .. } => center.len(),
            ConvexSet::Halfspace { normal, .. } => normal.len(),
            ConvexSet::Intersection(sets) => sets.first().map_or(0, |s| s.dim()),
        }
    }

    fn check_dim(&self, point: &DVector<f64>) -> Result<(), SetError> {
        if point.len() != self.dim() {
            return Err(SetError::DimensionMismatch {
                expected: self.dim(),
                got: point.len(),
            });
        }
        Ok(())
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, point: &DVector<f64>) -> Result<DVector<f64>, SetError> {
        self.check_dim(point)?;
        match self {
            ConvexSet::Intersection(sets) => dykstra(sets, point),
            _ => Ok(self.project_simple(point)),
        }
    }

    fn project_simple(&self, point: &DVector<f64>) -> DVector<f64> {
        match self {
            ConvexSet::Box { lower, upper } => {
                DVector::from_fn(point.len(), |i, _| point[i].max(lower[i]).min(upper[i]))
            }
            ConvexSet::Ball { center, radius } => {
                let offset = point - center;
                let dist = offset.norm();
                if dist <= *radius {
                    point.clone()
                } else {
                    center + offset * (*radius / dist)
                }
            }
            ConvexSet::Halfspace { normal, offset } => {
                let excess = normal.dot(point) - offset;
                if excess <= 0.0 {
                    point.clone()
                } else {
                    point - normal * excess
                }
            }
            ConvexSet::Intersection(_) => unreachable!("intersections go through dykstra"),
        }
    }

    pub fn distance(&self, point: &DVector<f64>) -> Result<f64, SetError> {
        Ok((point - self.project(point)?).norm())
    }

    /// True iff `dist(point, set) <= tol`.
    pub fn contains(&self, point: &DVector<f64>, tol: f64) -> Result<bool, SetError> {
        Ok(self.distance(point)? <= tol)
    }

    /// Tests `w ∈ N_K(z)` through the characterization `z = P_K(z + w)`.
    ///
    /// `z` must belong to the set within `tol`; the normal cone is empty
    /// outside the set, which is reported as an error.
    pub fn normal_cone_contains(
        &self,
        z: &DVector<f64>,
        w: &DVector<f64>,
        tol: f64,
    ) -> Result<bool, SetError> {
        self.check_dim(w)?;
        let distance = self.distance(z)?;
        if distance > tol {
            return Err(SetError::OutsideSet { distance, tol });
        }
        let moved = self.project(&(z + w))?;
        Ok((moved - z).norm() <= tol)
    }

    /// Interval form of a one-dimensional set.
    pub fn as_interval(&self) -> Option<Interval> {
        if self.dim() != 1 {
            return None;
        }
        match self {
            ConvexSet::Box { lower, upper } => Some(Interval {
                lower: lower[0],
                upper: upper[0],
            }),
            ConvexSet::Ball { center, radius } => Some(Interval {
                lower: center[0] - radius,
                upper: center[0] + radius,
            }),
            ConvexSet::Halfspace { normal, offset } => {
                let n = normal[0];
                Some(if n > 0.0 {
                    Interval {
                        lower: f64::NEG_INFINITY,
                        upper: offset / n,
                    }
                } else {
                    Interval {
                        lower: offset / n,
                        upper: f64::INFINITY,
                    }
                })
            }
            ConvexSet::Intersection(sets) => {
                let mut acc = Interval {
                    lower: f64::NEG_INFINITY,
                    upper: f64::INFINITY,
                };
                for s in sets {
                    let iv = s.as_interval()?;
                    acc.lower = acc.lower.max(iv.lower);
                    acc.upper = acc.upper.min(iv.upper);
                }
                Some(acc)
            }
        }
    }

    /// Draws a point of the set. Boxes and balls are sampled uniformly;
    /// other sets project a Gaussian-ish cloud around a reference point.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>, SetError> {
        match self {
            ConvexSet::Box { lower, upper } => Ok(DVector::from_fn(lower.len(), |i, _| {
                let (l, u) = (lower[i], upper[i]);
                if l.is_finite() && u.is_finite() {
                    rng.random_range(l..=u)
                } else if l.is_finite() {
                    l + rng.random_range(0.0..4.0)
                } else if u.is_finite() {
                    u - rng.random_range(0.0..4.0)
                } else {
                    rng.random_range(-4.0..4.0)
                }
            })),
            ConvexSet::Ball { center, radius } => {
                let dir: DVector<f64> = DVector::from_fn(center.len(), |_, _| rng.random_range(-1.0..1.0));
                let n = dir.norm().max(1e-300);
                let scale = radius * rng.random_range(0.0f64..1.0).powf(1.0 / center.len() as f64);
                Ok(center + dir * (scale / n))
            }
            _ => {
                let anchor = self.project(&DVector::zeros(self.dim()))?;
                let cloud = DVector::from_fn(self.dim(), |_, _| rng.random_range(-3.0..3.0));
                self.project(&(anchor + cloud))
            }
        }
    }
}

/// Dykstra's alternating projections onto an intersection.
fn dykstra(sets: &[ConvexSet], point: &DVector<f64>) -> Result<DVector<f64>, SetError> {
    if sets.len() == 1 {
        return sets[0].project(point);
    }
    let mut x = point.clone();
    let mut increments = vec![DVector::zeros(point.len()); sets.len()];
    let mut change = f64::INFINITY;
    for _ in 0..DYKSTRA_MAX_ITER {
        change = 0.0;
        for (set, inc) in sets.iter().zip(increments.iter_mut()) {
            let shifted = &x + &*inc;
            let y = set.project(&shifted)?;
            let new_inc = shifted - &y;
            change += (&y - &x).norm_squared() + (&new_inc - &*inc).norm_squared();
            *inc = new_inc;
            x = y;
        }
        if change <= DYKSTRA_TOL * DYKSTRA_TOL {
            return Ok(x);
        }
    }
    Err(SetError::DykstraNonConvergence {
        iterations: DYKSTRA_MAX_ITER,
        change,
    })
}

/// Serializable description of a [`ConvexSet`], as it appears in scenario
/// configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConvexSetSpec {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Halfspace { normal: Vec<f64>, offset: f64 },
    Intersection { sets: Vec<ConvexSetSpec> },
}

impl TryFrom<&ConvexSetSpec> for ConvexSet {
    type Error = SetError;

    fn try_from(spec: &ConvexSetSpec) -> Result<Self, SetError> {
        match spec {
            ConvexSetSpec::Box { lower, upper } => ConvexSet::new_box(lower.clone(), upper.clone()),
            ConvexSetSpec::Ball { center, radius } => ConvexSet::new_ball(center.clone(), *radius),
            ConvexSetSpec::Halfspace { normal, offset } => {
                ConvexSet::new_halfspace(normal.clone(), *offset)
            }
            ConvexSetSpec::Intersection { sets } => ConvexSet::new_intersection(
                sets.iter().map(ConvexSet::try_from).collect::<Result<_, _>>()?,
            ),
        }
    }
}

impl From<&ConvexSet> for ConvexSetSpec {
    fn from(set: &ConvexSet) -> Self {
        match set {
            ConvexSet::Box { lower, upper } => ConvexSetSpec::Box {
                lower: lower.iter().copied().collect(),
                upper: upper.iter().copied().collect(),
            },
            ConvexSet::Ball { center, radius } => ConvexSetSpec::Ball {
                center: center.iter().copied().collect(),
                radius: *radius,
            },
            ConvexSet::Halfspace { normal, offset } => ConvexSetSpec::Halfspace {
                normal: normal.iter().copied().collect(),
                offset: *offset,
            },
            ConvexSet::Intersection(sets) => ConvexSetSpec::Intersection {
                sets: sets.iter().map(ConvexSetSpec::from).collect(),
            },
        }
    }
}
