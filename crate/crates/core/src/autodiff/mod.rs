//! Differentiation machinery.
//!
//! All numerical code in this crate (vector fields, constraints, the
//! Runge–Kutta stepper) is written once over the [`Real`] scalar trait and
//! then instantiated with
//!
//! - `f64` for plain evaluation,
//! - [`Dual`] for forward-mode Jacobians of constraint maps,
//! - [`Var`] for reverse-mode gradients recorded on a [`Tape`].
//!
//! Nesting works: `Dual<Var>` yields a constraint Jacobian whose entries are
//! themselves differentiable, which is what backpropagation through the
//! stabilization term needs.

mod dual;
mod tape;

pub use dual::{jacobian, Dual, LANES};
pub use tape::{fd_check, loss_gradient, Tape, Var};

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar type the numerical kernels are generic over.
pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// A constant (carries no derivative information).
    fn cst(x: f64) -> Self;

    /// The primal value.
    fn value(self) -> f64;

    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn powf(self, p: f64) -> Self;

    /// `max(x, 0)` with derivative 0 at the kink.
    fn relu(self) -> Self;

    /// `base + Σ wᵢ·xᵢ`. Tape scalars record this as a single node.
    fn lin_comb(base: Self, terms: &[(f64, Self)]) -> Self {
        terms.iter().fold(base, |acc, &(w, x)| acc + x * w)
    }

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn is_finite(self) -> bool {
        self.value().is_finite()
    }
}

impl Real for f64 {
    #[inline]
    fn cst(x: f64) -> Self {
        x
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    #[inline]
    fn relu(self) -> Self {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }
    #[inline]
    fn lin_comb(base: Self, terms: &[(f64, Self)]) -> Self {
        let mut acc = base;
        for &(w, x) in terms {
            acc += w * x;
        }
        acc
    }
}

/// Primal values of a slice of scalars.
pub fn values<S: Real>(xs: &[S]) -> Vec<f64> {
    xs.iter().map(|x| x.value()).collect()
}

/// Lift plain values to constants of `S`.
pub fn constants<S: Real>(xs: &[f64]) -> Vec<S> {
    xs.iter().map(|&x| S::cst(x)).collect()
}
