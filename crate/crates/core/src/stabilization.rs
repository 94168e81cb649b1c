//! Constraint manifolds and the stabilized vector field
//! `u̇ = f(u) − γ F(u) g(u)` with `F = G⁺ = Gᵀ(GGᵀ)⁻¹`.
//!
//! On the manifold `g(u) = 0` the added term vanishes, so every solution of
//! the constrained dynamics is still a solution. Off the manifold,
//! `V(u) = ½‖g(u)‖²` decays whenever `γ ≥ ‖G f‖ / ‖g‖` (here `λ₀ = 1`, since
//! `G G⁺` is the identity for full-rank `G`).

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::autodiff::{Dual, Real, LANES};
use crate::error::{Error, Result};
use crate::ode::{Trajectory, VectorField};
use crate::systems::Invariant;

/// Largest admissible condition number of `G Gᵀ`.
pub const MAX_CONDITION: f64 = 1e12;

/// The map whose level set defines the manifold. The residual is
/// `quantity(u) − reference`.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintKind {
    /// `A u`, one row per constraint.
    Affine(Vec<Vec<f64>>),
    /// `scale · ‖u‖²` as a single constraint.
    SquaredNorm { scale: f64 },
    /// A conserved quantity of one of the benchmark systems.
    Invariant(Invariant),
}

impl ConstraintKind {
    pub fn n_constraints(&self) -> usize {
        match self {
            ConstraintKind::Affine(rows) => rows.len(),
            ConstraintKind::SquaredNorm { .. } => 1,
            ConstraintKind::Invariant(inv) => inv.n_constraints(),
        }
    }

    pub fn quantity<S: Real>(&self, u: &[S]) -> Vec<S> {
        match self {
            ConstraintKind::Affine(rows) => rows
                .iter()
                .map(|row| {
                    let terms: Vec<(f64, S)> = row.iter().zip(u).map(|(&a, &x)| (a, x)).collect();
                    S::lin_comb(S::zero(), &terms)
                })
                .collect(),
            ConstraintKind::SquaredNorm { scale } => {
                let s = u.iter().fold(S::zero(), |acc, &x| acc + x * x);
                vec![s * *scale]
            }
            ConstraintKind::Invariant(inv) => inv.quantity(u),
        }
    }
}

/// `M = {u : g(u) = 0}` with `g(u) = quantity(u) − reference`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintManifold {
    kind: ConstraintKind,
    dim: usize,
    reference: Vec<f64>,
    /// `true` for coordinates that receive stabilization.
    mask: Vec<bool>,
}

impl ConstraintManifold {
    pub fn new(kind: ConstraintKind, dim: usize, reference: Vec<f64>, mask: Option<Vec<bool>>) -> Result<Self> {
        let m = kind.n_constraints();
        if m >= dim {
            return Err(Error::invalid(format!("need fewer constraints than dimensions (m = {m}, n = {dim})")));
        }
        if reference.len() != m {
            return Err(Error::dims("constraint reference", m, reference.len()));
        }
        if reference.iter().any(|r| !r.is_finite()) {
            return Err(Error::non_finite("constraint reference"));
        }
        let mask = mask.unwrap_or_else(|| vec![true; dim]);
        if mask.len() != dim {
            return Err(Error::dims("stabilization mask", dim, mask.len()));
        }
        if let ConstraintKind::Affine(rows) = &kind {
            if rows.iter().any(|r| r.len() != dim) {
                return Err(Error::invalid("affine constraint rows must match the state dimension"));
            }
        }
        Ok(ConstraintManifold {
            kind,
            dim,
            reference,
            mask,
        })
    }

    /// The manifold through `u0`: the reference is captured from `u0`, so
    /// `g(u0) = 0` holds exactly.
    pub fn through(kind: ConstraintKind, u0: &[f64], mask: Option<Vec<bool>>) -> Result<Self> {
        let reference = kind.quantity(u0);
        Self::new(kind, u0.len(), reference, mask)
    }

    pub fn kind(&self) -> &ConstraintKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_constraints(&self) -> usize {
        self.reference.len()
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn residual<S: Real>(&self, u: &[S]) -> Vec<S> {
        self.kind
            .quantity(u)
            .into_iter()
            .zip(&self.reference)
            .map(|(q, &r)| q - r)
            .collect()
    }

    /// Residual and its Jacobian with respect to the stabilized coordinates
    /// (masked-out columns are zero).
    pub fn residual_and_jacobian<S: Real>(&self, u: &[S]) -> Result<(Vec<S>, Vec<Vec<S>>)> {
        if u.len() != self.dim {
            return Err(Error::dims("constraint input", self.dim, u.len()));
        }
        let active: Vec<usize> = (0..self.dim).filter(|&j| self.mask[j]).collect();
        let m = self.n_constraints();
        let mut g: Vec<S> = Vec::new();
        let mut jac = vec![vec![S::zero(); self.dim]; m];
        for (pass, chunk) in active.chunks(LANES).enumerate() {
            let x: Vec<Dual<S>> = u.iter().map(|&v| Dual::constant(v)).collect();
            let mut x = x;
            for (lane, &j) in chunk.iter().enumerate() {
                x[j] = Dual::seeded(u[j], lane);
            }
            let q = self.kind.quantity(&x);
            for (i, qi) in q.iter().enumerate() {
                if !qi.is_finite() {
                    return Err(Error::non_finite(format!("constraint Jacobian row {i}")));
                }
                for (lane, &j) in chunk.iter().enumerate() {
                    jac[i][j] = qi.d[lane];
                }
            }
            if pass == 0 {
                g = q.iter().zip(&self.reference).map(|(qi, &r)| qi.v - r).collect();
            }
        }
        if active.is_empty() {
            g = self.residual(u);
        }
        Ok((g, jac))
    }

    /// `G(u)`, the constraint Jacobian (masked columns zero).
    pub fn jacobian<S: Real>(&self, u: &[S]) -> Result<Vec<Vec<S>>> {
        Ok(self.residual_and_jacobian(u)?.1)
    }

    /// `G⁺(u) g(u)`, computed as `Gᵀ · solve(G Gᵀ, g)`.
    pub fn stabilization_term<S: Real>(&self, u: &[S]) -> Result<Vec<S>> {
        let (g, jac) = self.residual_and_jacobian(u)?;
        PseudoInverse.apply(&jac, &g)
    }

    /// `V(u) = ½ gᵀ g`.
    pub fn lyapunov(&self, u: &[f64]) -> f64 {
        0.5 * self.residual(u).iter().map(|g| g * g).sum::<f64>()
    }
}

/// The stabilization matrix `F(u)`: given `G(u)` and `g(u)`, returns
/// `F(u) g(u)`. `G F` must be symmetric positive definite near the manifold.
pub trait StabilizationMatrix {
    fn apply<S: Real>(&self, jac: &[Vec<S>], g: &[S]) -> Result<Vec<S>>;
}

/// `F = G⁺`, the Moore–Penrose pseudoinverse of the constraint Jacobian.
#[derive(Debug, Clone, Copy, Default)]
pub struct PseudoInverse;

impl StabilizationMatrix for PseudoInverse {
    fn apply<S: Real>(&self, jac: &[Vec<S>], g: &[S]) -> Result<Vec<S>> {
        let m = jac.len();
        let n = jac.first().map_or(0, |r| r.len());
        let mut gram = vec![vec![S::zero(); m]; m];
        for i in 0..m {
            for k in 0..=i {
                let mut s = S::zero();
                for j in 0..n {
                    s = s + jac[i][j] * jac[k][j];
                }
                gram[i][k] = s;
                gram[k][i] = s;
            }
        }
        let values: Vec<Vec<f64>> = gram.iter().map(|r| r.iter().map(|x| x.value()).collect()).collect();
        let condition = condition_number(&values);
        if !(condition <= MAX_CONDITION) {
            return Err(Error::SingularConfiguration {
                condition,
                limit: MAX_CONDITION,
            });
        }
        let y = cholesky_solve(&gram, g)?;
        Ok((0..n)
            .map(|j| {
                let mut s = S::zero();
                for i in 0..m {
                    s = s + jac[i][j] * y[i];
                }
                s
            })
            .collect())
    }
}

/// Spectral condition number of a symmetric positive semidefinite matrix;
/// infinite when it is singular.
pub fn condition_number(a: &[Vec<f64>]) -> f64 {
    let m = a.len();
    let (lo, hi) = match m {
        0 => return 1.0,
        1 => (a[0][0], a[0][0]),
        2 => {
            let tr = a[0][0] + a[1][1];
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            let disc = ((a[0][0] - a[1][1]).powi(2) + 4.0 * a[0][1] * a[1][0]).max(0.0).sqrt();
            let hi = 0.5 * (tr + disc);
            // det / hi is the accurate form of the small root
            let lo = if hi > 0.0 { det / hi } else { 0.5 * (tr - disc) };
            (lo, hi)
        }
        _ => {
            let mat = DMatrix::from_fn(m, m, |i, j| a[i][j]);
            let eig = SymmetricEigen::new(mat).eigenvalues;
            (eig.min(), eig.max())
        }
    };
    if hi > 0.0 && lo > 0.0 && lo.is_finite() && hi.is_finite() {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Solves `A y = b` for symmetric positive definite `A` by Cholesky
/// factorization, generic over the scalar type.
pub fn cholesky_solve<S: Real>(a: &[Vec<S>], b: &[S]) -> Result<Vec<S>> {
    let m = a.len();
    if b.len() != m {
        return Err(Error::dims("cholesky right-hand side", m, b.len()));
    }
    let mut l = vec![vec![S::zero(); m]; m];
    for j in 0..m {
        let mut s = a[j][j];
        for k in 0..j {
            s = s - l[j][k] * l[j][k];
        }
        if !(s.value() > 0.0) {
            return Err(Error::SingularConfiguration {
                condition: f64::INFINITY,
                limit: MAX_CONDITION,
            });
        }
        let d = s.sqrt();
        l[j][j] = d;
        for i in j + 1..m {
            let mut s = a[i][j];
            for k in 0..j {
                s = s - l[i][k] * l[j][k];
            }
            l[i][j] = s / d;
        }
    }
    let mut z = vec![S::zero(); m];
    for i in 0..m {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[i][k] * z[k];
        }
        z[i] = s / l[i][i];
    }
    let mut y = vec![S::zero(); m];
    for i in (0..m).rev() {
        let mut s = z[i];
        for k in i + 1..m {
            s = s - l[k][i] * y[k];
        }
        y[i] = s / l[i][i];
    }
    Ok(y)
}

/// Moore–Penrose pseudoinverse by SVD, truncating singular values below
/// `1e-12 · σ_max`. Returns the `n × m` matrix.
pub fn pseudo_inverse(jac: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = jac.len();
    let n = jac.first().map_or(0, |r| r.len());
    let mat = DMatrix::from_fn(m, n, |i, j| jac[i][j]);
    let svd = mat.svd(true, true);
    let smax = svd.singular_values.max();
    let pinv = svd
        .pseudo_inverse(1e-12 * smax.max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| DMatrix::zeros(n, m));
    (0..n).map(|i| (0..m).map(|j| pinv[(i, j)]).collect()).collect()
}

/// The practical stabilized field `f(u, t) − γ F(u) g(u)`.
#[derive(Debug, Clone)]
pub struct StabilizedField<F, M = PseudoInverse> {
    pub base: F,
    pub manifold: Arc<ConstraintManifold>,
    pub gamma: f64,
    pub matrix: M,
}

impl<F> StabilizedField<F, PseudoInverse> {
    pub fn new(base: F, manifold: Arc<ConstraintManifold>, gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::invalid(format!("gamma must be a finite value ≥ 0, got {gamma}")));
        }
        Ok(StabilizedField {
            base,
            manifold,
            gamma,
            matrix: PseudoInverse,
        })
    }
}

impl<S: Real, F: VectorField<S>, M: StabilizationMatrix> VectorField<S> for StabilizedField<F, M> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval(&self, t: f64, u: &[S]) -> Result<Vec<S>> {
        let f = self.base.eval(t, u)?;
        if self.gamma == 0.0 {
            return Ok(f);
        }
        let (g, jac) = self.manifold.residual_and_jacobian(u)?;
        let term = self.matrix.apply(&jac, &g)?;
        Ok(f.into_iter()
            .zip(term)
            .map(|(fi, ti)| S::lin_comb(fi, &[(-self.gamma, ti)]))
            .collect())
    }

    fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        self.base.breakpoints(t0, t1)
    }
}

/// Smallest γ certified by the Lyapunov argument on the given probe states:
/// `max ‖G f‖ / ‖g‖` with `λ₀ = 1`.
pub fn gamma_lower_bound<F: VectorField<f64>>(
    field: &F,
    manifold: &ConstraintManifold,
    probes: &[Vec<f64>],
    t: f64,
) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::invalid("gamma bound needs at least one probe state"));
    }
    let mut bound: f64 = 0.0;
    for (k, u) in probes.iter().enumerate() {
        let (g, jac) = manifold.residual_and_jacobian(u)?;
        let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if gnorm == 0.0 {
            return Err(Error::invalid(format!("probe {k} lies on the manifold")));
        }
        let f = field.eval(t, u)?;
        let gf = jac
            .iter()
            .map(|row| row.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        bound = bound.max(gf / gnorm);
    }
    Ok(bound)
}

/// `V(u) = ½‖g(u)‖²` at every saved state.
pub fn lyapunov_series(manifold: &ConstraintManifold, traj: &Trajectory) -> Vec<f64> {
    traj.states().map(|u| manifold.lyapunov(u)).collect()
}
