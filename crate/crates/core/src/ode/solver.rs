use std::fmt;

use super::tableau::{ButcherTableau, FEHLBERG78, TSIT5};
use crate::autodiff::Real;
use crate::error::{Error, Result};

/// Right-hand side `u̇ = f(u, t)`.
pub trait VectorField<S: Real> {
    fn dim(&self) -> usize;

    fn eval(&self, t: f64, u: &[S]) -> Result<Vec<S>>;

    /// Times in `(t0, t1)` where the field is discontinuous in `t`. The
    /// integrator lands on each one and restarts there.
    fn breakpoints(&self, _t0: f64, _t1: f64) -> Vec<f64> {
        Vec::new()
    }
}

impl<S: Real, F: VectorField<S> + ?Sized> VectorField<S> for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, t: f64, u: &[S]) -> Result<Vec<S>> {
        (**self).eval(t, u)
    }
    fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        (**self).breakpoints(t0, t1)
    }
}

/// Sampled solution: `times[i]` pairs with row `i` of `states`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S = f64> {
    dim: usize,
    times: Vec<f64>,
    states: Vec<S>,
}

impl<S: Real> Trajectory<S> {
    pub fn empty(dim: usize) -> Self {
        Trajectory {
            dim,
            times: Vec::new(),
            states: Vec::new(),
        }
    }

    /// Builds a trajectory from rows, checking the grid is strictly
    /// increasing and every entry is finite.
    pub fn from_rows(times: Vec<f64>, rows: &[Vec<S>]) -> Result<Self> {
        if times.len() != rows.len() {
            return Err(Error::dims("trajectory rows", times.len(), rows.len()));
        }
        let dim = rows.first().map_or(0, |r| r.len());
        let mut traj = Trajectory::empty(dim);
        for (t, row) in times.into_iter().zip(rows) {
            if row.len() != dim {
                return Err(Error::dims("trajectory row width", dim, row.len()));
            }
            if !t.is_finite() || row.iter().any(|x| !x.is_finite()) {
                return Err(Error::non_finite(format!("trajectory at t = {t}")));
            }
            if traj.times.last().is_some_and(|&last| t <= last) {
                return Err(Error::invalid("trajectory times must be strictly increasing"));
            }
            traj.push(t, row);
        }
        Ok(traj)
    }

    pub fn push(&mut self, t: f64, u: &[S]) {
        debug_assert_eq!(u.len(), self.dim);
        self.times.push(t);
        self.states.extend_from_slice(u);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, i: usize) -> &[S] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[S]> {
        self.states.chunks(self.dim.max(1))
    }

    pub fn last_state(&self) -> Option<&[S]> {
        (!self.is_empty()).then(|| self.state(self.len() - 1))
    }

    pub fn end_time(&self) -> Option<f64> {
        self.times.last().copied()
    }

    /// Primal values.
    pub fn to_values(&self) -> Trajectory<f64> {
        Trajectory {
            dim: self.dim,
            times: self.times.clone(),
            states: self.states.iter().map(|x| x.value()).collect(),
        }
    }

    /// Rows `range` as a new trajectory.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Trajectory {
            dim: self.dim,
            times: self.times[range.clone()].to_vec(),
            states: self.states[range.start * self.dim..range.end * self.dim].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolverStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

impl std::ops::AddAssign for SolverStats {
    fn add_assign(&mut self, o: Self) {
        self.accepted += o.accepted;
        self.rejected += o.rejected;
        self.rhs_evals += o.rhs_evals;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepController {
    pub abstol: f64,
    pub reltol: f64,
    pub safety: f64,
    pub min_factor: f64,
    pub max_factor: f64,
    /// `None` selects the first step automatically.
    pub initial_step: Option<f64>,
}

impl StepController {
    pub fn new(abstol: f64, reltol: f64) -> Self {
        StepController {
            abstol,
            reltol,
            safety: 0.9,
            min_factor: 0.2,
            max_factor: 10.0,
            initial_step: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abstol > 0.0 && self.reltol > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        if !(self.safety > 0.0 && self.safety < 1.0) {
            return Err(Error::invalid("safety factor must lie in (0, 1)"));
        }
        if !(self.min_factor > 0.0 && self.min_factor < 1.0 && self.max_factor > 1.0) {
            return Err(Error::invalid("step growth factors must bracket 1"));
        }
        if let Some(h) = self.initial_step {
            if !(h > 0.0) {
                return Err(Error::invalid("initial step must be positive"));
            }
        }
        Ok(())
    }
}

/// An embedded pair plus its step-size controller.
#[derive(Debug, Clone, Copy)]
pub struct Solver {
    pub tableau: &'static ButcherTableau,
    pub controller: StepController,
}

impl Solver {
    /// Tsit5 at the given absolute/relative tolerances.
    pub fn tsit5(abstol: f64, reltol: f64) -> Self {
        Solver {
            tableau: &TSIT5,
            controller: StepController::new(abstol, reltol),
        }
    }

    /// Tsit5 at 1e-6, the setting used for training and inference.
    pub fn training() -> Self {
        Self::tsit5(1e-6, 1e-6)
    }

    /// Fehlberg 7(8) at 1e-12, used to generate reference data.
    pub fn ground_truth() -> Self {
        Solver {
            tableau: &FEHLBERG78,
            controller: StepController::new(1e-12, 1e-12),
        }
    }
}

/// One embedded step: the propagated and the embedded update.
#[derive(Debug, Clone)]
pub struct RkStep<S> {
    pub high: Vec<S>,
    pub low: Vec<S>,
}

struct StepOutput<S> {
    high: Vec<S>,
    err: Vec<f64>,
    /// Derivative at the new point when the tableau is FSAL.
    fsal: Option<Vec<S>>,
    evals: usize,
}

fn check_finite<S: Real>(v: &[S], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::non_finite(what.to_string()))
    }
}

#[allow(clippy::too_many_arguments)]
fn step_impl<S: Real, F: VectorField<S> + ?Sized>(
    tab: &ButcherTableau,
    field: &F,
    t: f64,
    u: &[S],
    h: f64,
    k1: &[S],
    time_cap: f64,
    want_low: Option<&mut Vec<S>>,
) -> Result<StepOutput<S>> {
    let s = tab.stages();
    let n = u.len();
    let mut ks: Vec<Vec<S>> = Vec::with_capacity(s);
    ks.push(k1.to_vec());
    let mut terms: Vec<(f64, S)> = Vec::with_capacity(s);
    let mut last_y: Option<Vec<S>> = None;
    for i in 1..s {
        let y: Vec<S> = (0..n)
            .map(|c| {
                terms.clear();
                for (j, &aij) in tab.a[i].iter().enumerate() {
                    if aij != 0.0 {
                        terms.push((h * aij, ks[j][c]));
                    }
                }
                S::lin_comb(u[c], &terms)
            })
            .collect();
        let ti = (t + tab.c[i] * h).min(time_cap);
        let k = field.eval(ti, &y)?;
        check_finite(&k, "stage derivative")?;
        ks.push(k);
        if i == s - 1 {
            last_y = Some(y);
        }
    }
    let combine = |w: &[f64], terms: &mut Vec<(f64, S)>| -> Vec<S> {
        (0..n)
            .map(|c| {
                terms.clear();
                for (j, &wj) in w.iter().enumerate() {
                    if wj != 0.0 {
                        terms.push((h * wj, ks[j][c]));
                    }
                }
                S::lin_comb(u[c], terms)
            })
            .collect()
    };
    let (high, fsal) = if tab.fsal {
        (last_y.expect("FSAL tableau has more than one stage"), ks.last().cloned())
    } else {
        (combine(&tab.b, &mut terms), None)
    };
    if let Some(low) = want_low {
        *low = combine(&tab.b_hat, &mut terms);
    }
    let err = (0..n)
        .map(|c| {
            let mut e = 0.0;
            for j in 0..s {
                let w = tab.b[j] - tab.b_hat[j];
                if w != 0.0 {
                    e += w * ks[j][c].value();
                }
            }
            h * e
        })
        .collect();
    check_finite(&high, "step solution")?;
    Ok(StepOutput {
        high,
        err,
        fsal,
        evals: s - 1,
    })
}

/// A single embedded Runge–Kutta step of size `h` from `(t, u)`.
///
/// `high - low` is the local error estimate. A non-finite stage value is
/// reported as an error so the caller can shrink `h`.
pub fn rk_step<S: Real, F: VectorField<S> + ?Sized>(
    tableau: &ButcherTableau,
    field: &F,
    t: f64,
    u: &[S],
    h: f64,
) -> Result<RkStep<S>> {
    if !(h > 0.0) {
        return Err(Error::invalid("step size must be positive"));
    }
    let k1 = field.eval(t, u)?;
    check_finite(&k1, "stage derivative")?;
    let mut low = Vec::new();
    let out = step_impl(tableau, field, t, u, h, &k1, f64::INFINITY, Some(&mut low))?;
    Ok(RkStep {
        high: out.high,
        low,
    })
}

/// Failure of [`integrate`], carrying whatever was computed before it.
#[derive(Debug, Clone)]
pub struct IntegrationFailure<S = f64> {
    pub error: Error,
    pub partial: Trajectory<S>,
    pub stats: SolverStats,
}

impl<S> fmt::Display for IntegrationFailure<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl<S: fmt::Debug> std::error::Error for IntegrationFailure<S> {}

impl<S> From<IntegrationFailure<S>> for Error {
    fn from(f: IntegrationFailure<S>) -> Self {
        f.error
    }
}

fn wrms(err: &[f64], u0: &[f64], u1: &[f64], ctl: &StepController) -> f64 {
    let n = err.len().max(1) as f64;
    let s: f64 = err
        .iter()
        .zip(u0.iter().zip(u1))
        .map(|(e, (a, b))| {
            let sc = ctl.abstol + ctl.reltol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

/// Automatic first step (Hairer, Nørsett & Wanner, vol. I, II.4).
fn auto_initial_step<S: Real, F: VectorField<S> + ?Sized>(
    field: &F,
    t: f64,
    u: &[S],
    f0: &[S],
    order: u32,
    ctl: &StepController,
    stats: &mut SolverStats,
) -> Result<f64> {
    let uv: Vec<f64> = u.iter().map(|x| x.value()).collect();
    let fv: Vec<f64> = f0.iter().map(|x| x.value()).collect();
    let norm = |v: &[f64]| {
        let n = v.len().max(1) as f64;
        (v.iter()
            .zip(&uv)
            .map(|(x, y)| (x / (ctl.abstol + ctl.reltol * y.abs())).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
    };
    let d0 = norm(&uv);
    let d1 = norm(&fv);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let u1: Vec<S> = uv
        .iter()
        .zip(&fv)
        .map(|(a, b)| S::cst(a + h0 * b))
        .collect();
    let f1 = field.eval(t + h0, &u1)?;
    stats.rhs_evals += 1;
    let diff: Vec<f64> = f1.iter().zip(&fv).map(|(a, b)| a.value() - b).collect();
    let d2 = norm(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / (order as f64 + 1.0))
    };
    let h = (100.0 * h0).min(h1);
    if h.is_finite() && h > 0.0 {
        Ok(h)
    } else {
        Ok(1e-6)
    }
}

/// Integrates `field` from `(t0, u0)` and samples the solution exactly at
/// `output_times`.
///
/// Steps are shortened to land on every output time (the returned grid is
/// bitwise equal to the request) and on every breakpoint reported by the
/// field. If the step size collapses below `1e-13 · span` the failure
/// carries the trajectory computed so far.
pub fn integrate<S: Real, F: VectorField<S> + ?Sized>(
    field: &F,
    u0: &[S],
    t0: f64,
    output_times: &[f64],
    solver: &Solver,
) -> Result<(Trajectory<S>, SolverStats), IntegrationFailure<S>> {
    let n = field.dim();
    let mut traj = Trajectory::empty(n);
    let mut stats = SolverStats::default();
    macro_rules! fail {
        ($err:expr) => {
            return Err(IntegrationFailure {
                error: $err,
                partial: traj,
                stats,
            })
        };
    }
    if u0.len() != n {
        fail!(Error::dims("initial state", n, u0.len()));
    }
    if let Err(e) = solver.controller.validate() {
        fail!(e);
    }
    if output_times.is_empty() {
        fail!(Error::invalid("no output times requested"));
    }
    if !(output_times[0] >= t0) || output_times.windows(2).any(|w| !(w[1] > w[0])) {
        fail!(Error::invalid("output times must be strictly increasing and start at or after t0"));
    }
    if output_times.iter().any(|t| !t.is_finite()) || !t0.is_finite() {
        fail!(Error::invalid("output times must be finite"));
    }
    if u0.iter().any(|x| !x.is_finite()) {
        fail!(Error::non_finite("initial state"));
    }

    let mut out_idx = 0;
    if output_times[0] == t0 {
        traj.push(t0, u0);
        out_idx = 1;
    }
    if out_idx == output_times.len() {
        return Ok((traj, stats));
    }

    let tab = solver.tableau;
    let ctl = &solver.controller;
    let t_end = *output_times.last().unwrap();
    let span = t_end - t0;
    let min_h = 1e-13 * span;
    let mut breaks: Vec<f64> = field
        .breakpoints(t0, t_end)
        .into_iter()
        .filter(|&b| b > t0 && b < t_end)
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut brk_idx = 0;

    let mut t = t0;
    let mut u = u0.to_vec();
    let mut k1 = match field.eval(t, &u) {
        Ok(k) => k,
        Err(e) => fail!(e),
    };
    stats.rhs_evals += 1;
    if k1.iter().any(|x| !x.is_finite()) {
        fail!(Error::non_finite("initial derivative"));
    }
    let mut h = match ctl.initial_step {
        Some(h) => h,
        None => match auto_initial_step(field, t, &u, &k1, tab.order, ctl, &mut stats) {
            Ok(h) => h,
            Err(e) => fail!(e),
        },
    }
    .min(span);
    let expo = -1.0 / (tab.order.min(tab.embedded_order) as f64 + 1.0);
    let mut last_rejected = false;
    let mut last_error: Option<Error> = None;
    let mut uv: Vec<f64> = u.iter().map(|x| x.value()).collect();

    loop {
        let next_out = output_times[out_idx];
        let target = if brk_idx < breaks.len() && breaks[brk_idx] < next_out {
            breaks[brk_idx]
        } else {
            next_out
        };
        let is_break = brk_idx < breaks.len() && breaks[brk_idx] == target;
        let remaining = target - t;
        let landing = h >= remaining;
        let h_step = if landing { remaining } else { h };
        let cap = if landing && is_break {
            target.next_down()
        } else {
            f64::INFINITY
        };

        let attempt = step_impl(tab, field, t, &u, h_step, &k1, cap, None);
        stats.rhs_evals += tab.stages() - 1;
        let err_norm = match &attempt {
            Ok(out) => {
                let hv: Vec<f64> = out.high.iter().map(|x| x.value()).collect();
                let e = wrms(&out.err, &uv, &hv, ctl);
                if e.is_finite() {
                    e
                } else {
                    f64::INFINITY
                }
            }
            Err(e) => {
                last_error = Some(e.clone());
                f64::INFINITY
            }
        };

        if err_norm <= 1.0 {
            let out = attempt.expect("accepted step has output");
            debug_assert_eq!(out.evals, tab.stages() - 1);
            let mut factor = if err_norm == 0.0 {
                ctl.max_factor
            } else {
                (ctl.safety * err_norm.powf(expo)).clamp(ctl.min_factor, ctl.max_factor)
            };
            if last_rejected {
                factor = factor.min(1.0);
            }
            let h_next = h_step * factor;
            h = if landing { h_next.max(h) } else { h_next };
            t = if landing { target } else { t + h_step };
            u = out.high;
            uv = u.iter().map(|x| x.value()).collect();
            stats.accepted += 1;
            last_rejected = false;
            let restart = landing && is_break;
            k1 = match out.fsal {
                Some(k) if !restart => k,
                _ => {
                    stats.rhs_evals += 1;
                    match field.eval(t, &u) {
                        Ok(k) if k.iter().all(|x| x.is_finite()) => k,
                        Ok(_) => fail!(Error::non_finite(format!("derivative at t = {t}"))),
                        Err(e) => fail!(e),
                    }
                }
            };
            if landing {
                if target == next_out {
                    traj.push(t, &u);
                    out_idx += 1;
                    if out_idx == output_times.len() {
                        return Ok((traj, stats));
                    }
                }
                if is_break {
                    brk_idx += 1;
                }
            }
        } else {
            stats.rejected += 1;
            let factor = if err_norm.is_finite() {
                (ctl.safety * err_norm.powf(expo)).clamp(ctl.min_factor, 1.0)
            } else {
                ctl.min_factor
            };
            h = h_step * factor;
            last_rejected = true;
            if h < min_h {
                let reason = match last_error.take() {
                    Some(e) if !err_norm.is_finite() => format!("step size underflow after: {e}"),
                    _ => format!("step size underflow (h = {h:.3e}); problem is stiff or diverging"),
                };
                fail!(Error::Integration { t, reason });
            }
        }
    }
}
