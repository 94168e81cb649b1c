//! Explicit adaptive Runge–Kutta integration.
//!
//! The stepper is generic over [`Real`](crate::autodiff::Real) so the same
//! code path produces plain trajectories and recorded, differentiable ones.
//! Step-size decisions only ever look at primal values.

mod solver;
mod tableau;

pub use solver::{
    integrate, rk_step, IntegrationFailure, RkStep, Solver, SolverStats, StepController, Trajectory,
    VectorField,
};
pub use tableau::{ButcherTableau, FEHLBERG78, TSIT5};
