//! Stabilized neural differential equations.
//!
//! A learned vector field `f_θ` is augmented with the term `−γ G⁺(u) g(u)`,
//! which leaves the dynamics on the constraint manifold `g(u) = 0` untouched
//! and makes that manifold attracting nearby.

pub mod autodiff;
pub mod error;
pub mod evaluation;
pub mod neural;
pub mod ode;
pub mod stabilization;
pub mod systems;
pub mod training;

pub use error::{Error, Result};
