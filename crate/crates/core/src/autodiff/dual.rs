use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Real;
use crate::error::{Error, Result};

/// Number of tangent directions carried by one [`Dual`].
pub const LANES: usize = 4;

/// Forward-mode dual number with a batch of [`LANES`] tangent directions.
///
/// The tangent scalar is generic so that `Dual<Var>` produces Jacobian
/// entries that can still be differentiated in reverse mode.
#[derive(Debug, Clone, Copy)]
pub struct Dual<S> {
    pub v: S,
    pub d: [S; LANES],
}

impl<S: Real> Dual<S> {
    pub fn constant(v: S) -> Self {
        Dual {
            v,
            d: [S::zero(); LANES],
        }
    }

    /// A variable seeded with a unit tangent in `lane`.
    pub fn seeded(v: S, lane: usize) -> Self {
        let mut d = [S::zero(); LANES];
        d[lane] = S::cst(1.0);
        Dual { v, d }
    }

    #[inline]
    fn chain(self, v: S, dv: S) -> Self {
        Dual {
            v,
            d: self.d.map(|t| t * dv),
        }
    }
}

impl<S: Real> Add for Dual<S> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        let mut d = self.d;
        for (x, y) in d.iter_mut().zip(o.d) {
            *x = *x + y;
        }
        Dual { v: self.v + o.v, d }
    }
}

impl<S: Real> Sub for Dual<S> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        let mut d = self.d;
        for (x, y) in d.iter_mut().zip(o.d) {
            *x = *x - y;
        }
        Dual { v: self.v - o.v, d }
    }
}

impl<S: Real> Mul for Dual<S> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut d = [S::zero(); LANES];
        for k in 0..LANES {
            d[k] = self.d[k] * o.v + o.d[k] * self.v;
        }
        Dual { v: self.v * o.v, d }
    }
}

impl<S: Real> Div for Dual<S> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.v / o.v;
        let mut d = [S::zero(); LANES];
        for k in 0..LANES {
            d[k] = (self.d[k] - q * o.d[k]) / o.v;
        }
        Dual { v: q, d }
    }
}

impl<S: Real> Neg for Dual<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual {
            v: -self.v,
            d: self.d.map(|t| -t),
        }
    }
}

impl<S: Real> Add<f64> for Dual<S> {
    type Output = Self;
    #[inline]
    fn add(self, c: f64) -> Self {
        Dual {
            v: self.v + c,
            d: self.d,
        }
    }
}

impl<S: Real> Sub<f64> for Dual<S> {
    type Output = Self;
    #[inline]
    fn sub(self, c: f64) -> Self {
        Dual {
            v: self.v - c,
            d: self.d,
        }
    }
}

impl<S: Real> Mul<f64> for Dual<S> {
    type Output = Self;
    #[inline]
    fn mul(self, c: f64) -> Self {
        Dual {
            v: self.v * c,
            d: self.d.map(|t| t * c),
        }
    }
}

impl<S: Real> Div<f64> for Dual<S> {
    type Output = Self;
    #[inline]
    fn div(self, c: f64) -> Self {
        Dual {
            v: self.v / c,
            d: self.d.map(|t| t / c),
        }
    }
}

impl<S: Real> Real for Dual<S> {
    fn cst(x: f64) -> Self {
        Dual::constant(S::cst(x))
    }

    fn value(self) -> f64 {
        self.v.value()
    }

    fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        self.chain(r, S::cst(0.5) / r)
    }

    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }

    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }

    fn powf(self, p: f64) -> Self {
        self.chain(self.v.powf(p), self.v.powf(p - 1.0) * p)
    }

    fn relu(self) -> Self {
        if self.v.value() > 0.0 {
            self
        } else {
            Dual::constant(S::zero())
        }
    }

    fn is_finite(self) -> bool {
        self.v.is_finite() && self.d.iter().all(|t| t.is_finite())
    }
}

/// Jacobian of `func` at `u` by forward-mode differentiation.
///
/// Row `i` holds the gradient of output component `i`. The map is evaluated
/// `ceil(n / LANES)` times, each pass seeding up to [`LANES`] coordinate
/// directions.
pub fn jacobian<S, F>(func: F, u: &[S]) -> Result<Vec<Vec<S>>>
where
    S: Real,
    F: Fn(&[Dual<S>]) -> Vec<Dual<S>>,
{
    let n = u.len();
    let mut rows: Vec<Vec<S>> = Vec::new();
    let mut m = None;
    let mut start = 0;
    while start < n.max(1) {
        let lanes = (n - start).min(LANES);
        let x: Vec<Dual<S>> = u
            .iter()
            .enumerate()
            .map(|(j, &uj)| {
                if j >= start && j < start + lanes {
                    Dual::seeded(uj, j - start)
                } else {
                    Dual::constant(uj)
                }
            })
            .collect();
        let out = func(&x);
        match m {
            None => {
                m = Some(out.len());
                rows = vec![Vec::with_capacity(n); out.len()];
            }
            Some(m) if m != out.len() => {
                return Err(Error::dims("jacobian output", m, out.len()));
            }
            _ => {}
        }
        for (i, yi) in out.iter().enumerate() {
            if !yi.is_finite() {
                return Err(Error::non_finite(format!("jacobian output component {i}")));
            }
            rows[i].extend_from_slice(&yi.d[..lanes]);
        }
        if n == 0 {
            break;
        }
        start += lanes;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_differentiated_jacobian() {
        let j = jacobian(|u: &[Dual<f64>]| vec![u[0] * u[0], u[0] * u[1]], &[2.0, 3.0]).unwrap();
        assert_eq!(j, vec![vec![4.0, 0.0], vec![3.0, 2.0]]);
    }

    #[test]
    fn circle_constraint_gradient() {
        let j = jacobian(
            |u: &[Dual<f64>]| vec![(u[0] * u[0] + u[1] * u[1] - 1.0) * 0.5],
            &[1.0, 0.0],
        )
        .unwrap();
        assert_eq!(j, vec![vec![1.0, 0.0]]);
    }

    #[test]
    fn affine_map_has_constant_jacobian() {
        let f = |u: &[Dual<f64>]| vec![u[0] * 2.0 - u[1] * 3.0 + 1.0, u[1] * 0.5 + u[2]];
        let a = jacobian(f, &[0.1, -4.0, 7.0]).unwrap();
        let b = jacobian(f, &[9.0, 2.5, -1.0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, vec![vec![2.0, -3.0, 0.0], vec![0.0, 0.5, 1.0]]);
    }

    #[test]
    fn more_inputs_than_lanes() {
        // gradient of Σ k·u_k² over 6 inputs needs two passes
        let u: Vec<f64> = (0..6).map(|k| k as f64 * 0.5 - 1.0).collect();
        let j = jacobian(
            |x: &[Dual<f64>]| {
                let mut s = Dual::cst(0.0);
                for (k, &xk) in x.iter().enumerate() {
                    s = s + xk * xk * (k as f64);
                }
                vec![s]
            },
            &u,
        )
        .unwrap();
        for k in 0..6 {
            assert_eq!(j[0][k], 2.0 * k as f64 * u[k]);
        }
    }

    #[test]
    fn non_finite_output_names_component() {
        let err = jacobian(|u: &[Dual<f64>]| vec![u[0], u[0] / 0.0], &[1.0]).unwrap_err();
        assert!(err.to_string().contains("component 1"), "{err}");
    }

    #[test]
    fn elementary_derivatives() {
        let x = 0.7;
        let j = jacobian(
            |u: &[Dual<f64>]| vec![u[0].sin(), u[0].cos(), u[0].sqrt(), u[0].powf(1.5)],
            &[x],
        )
        .unwrap();
        assert!((j[0][0] - x.cos()).abs() < 1e-15);
        assert!((j[1][0] + x.sin()).abs() < 1e-15);
        assert!((j[2][0] - 0.5 / x.sqrt()).abs() < 1e-15);
        assert!((j[3][0] - 1.5 * x.sqrt()).abs() < 1e-15);
    }
}
