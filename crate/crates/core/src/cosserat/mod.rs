//! Steady-state Cosserat statics of the tapered, tendon-driven limb.
//!
//! The limb is an inextensible-in-shear (Bernoulli-Euler) rod clamped at the
//! origin with its undeformed centerline along +x. Four tendons run inside
//! the body at a radial offset that shrinks linearly from base to tip and
//! terminate on a disc at the distal end.

mod frames;
mod geometry;
mod solver;

pub use frames::integrate_frames;
pub use geometry::{clamp_frame, LimbGeometry, MaterialProperties, TendonForces};
pub use solver::{
    refine, solve_statics, tendon_tip_loads, RodConfiguration, SolverOptions, TipLoads,
};
