//! Projected integral control of monotone plants.
//!
//! A plant `ẋ ∈ A(x, u)`, `y = g(x, u)` with a maximal dissipative `A` is put
//! in closed loop with the projected integrator `ż ∈ r − y − N_K(z)`. The
//! crate provides convex constraint sets, three plants (an RLC circuit with
//! an ideal diode, a strictified linear system node, and a boundary
//! controlled p-Laplacian diffusion), implicit and splitting time steppers,
//! and a verification harness for the contraction, passivity and tracking
//! properties of the closed loop.

pub mod app;
pub mod avi;
pub mod config;
pub mod harness;
pub mod integrator;
pub mod node;
pub mod plant;
pub mod plaplacian;
pub mod rlc;
pub mod rng;
pub mod sets;

pub use integrator::{simulate, ClosedLoopConfig, Scheme, SimulationError, Trajectory};
pub use plant::{feasible_input, steady_state, Feasibility, Plant, PlantError, SteadyStatePair};
pub use sets::ConvexSet;
