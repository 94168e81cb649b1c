//! Test-time metrics: relative errors, stable time, occupation measures and
//! the Hellinger distance, plus the trial runner that produces them.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::neural::{assemble_field, FieldSpec};
use crate::ode::{integrate, Solver, SolverStats, Trajectory, VectorField};
use crate::stabilization::{ConstraintManifold, StabilizedField};
use crate::systems::{sample_times, System};
use crate::training::{rng_for, streams, Checkpoint};

/// Default divergence threshold for the stable time.
pub const E_STAB: f64 = 1e3;

/// `‖u(t) − û(t)‖ / ‖u(t)‖` at every time of `pred`. `pred` may stop early
/// (a diverged prediction); its grid must be a prefix of the truth grid.
pub fn relative_error_series(truth: &Trajectory, pred: &Trajectory) -> Result<Vec<f64>> {
    check_prefix(truth, pred)?;
    (0..pred.len())
        .map(|i| {
            let (u, p) = (truth.state(i), pred.state(i));
            let nu = norm(u);
            if nu == 0.0 {
                return Err(Error::invalid(format!(
                    "relative error undefined: true state is zero at t = {}",
                    truth.times()[i]
                )));
            }
            let d: Vec<f64> = u.iter().zip(p).map(|(a, b)| a - b).collect();
            Ok(finite_or_inf(norm(&d) / nu))
        })
        .collect()
}

fn check_prefix(truth: &Trajectory, pred: &Trajectory) -> Result<()> {
    if truth.dim() != pred.dim() {
        return Err(Error::dims("trajectory dimension", truth.dim(), pred.dim()));
    }
    if pred.len() > truth.len() || truth.times()[..pred.len()] != *pred.times() {
        return Err(Error::invalid("prediction and truth are sampled on different grids"));
    }
    Ok(())
}

/// Euclidean norm, scaled so that large blown-up states do not overflow.
fn norm(x: &[f64]) -> f64 {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m == 0.0 || !m.is_finite() {
        return if x.iter().any(|v| v.is_nan()) { f64::NAN } else { m };
    }
    m * x.iter().map(|v| (v / m) * (v / m)).sum::<f64>().sqrt()
}

fn finite_or_inf(x: f64) -> f64 {
    if x.is_nan() {
        f64::INFINITY
    } else {
        x
    }
}

/// Constraint error of a prediction: `‖g(û(t))‖ / ‖reference‖`. When the
/// reference is zero the absolute `‖g‖` is returned and the flag is set.
pub fn constraint_error_series(manifold: &ConstraintManifold, pred: &Trajectory) -> (Vec<f64>, bool) {
    let rn = norm(manifold.reference());
    let absolute = rn == 0.0;
    let scale = if absolute { 1.0 } else { rn };
    let series = pred
        .states()
        .map(|u| finite_or_inf(norm(&manifold.residual(u)) / scale))
        .collect();
    (series, absolute)
}

/// Time until the error first reaches `threshold`. Entries missing at the
/// end of `errors` (a diverged prediction) count as infinite; a series that
/// stays below the threshold gives the final time.
pub fn stable_time(errors: &[f64], times: &[f64], threshold: f64) -> f64 {
    for (i, &t) in times.iter().enumerate() {
        match errors.get(i) {
            Some(&e) if e < threshold => {}
            _ => return t,
        }
    }
    times.last().copied().unwrap_or(0.0)
}

/// Regular box grid over the state space.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub bins: Vec<usize>,
    /// Angular coordinates are wrapped to `[−π, π)` and use those bounds.
    pub angular: Vec<bool>,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, bins: Vec<usize>, angular: Vec<bool>) -> Result<Self> {
        let n = lower.len();
        if upper.len() != n || bins.len() != n || angular.len() != n {
            return Err(Error::invalid("grid specification fields differ in length"));
        }
        for k in 0..n {
            if bins[k] == 0 {
                return Err(Error::invalid(format!("grid dimension {k} has no bins")));
            }
            if !(upper[k] > lower[k]) || !lower[k].is_finite() || !upper[k].is_finite() {
                return Err(Error::invalid(format!("grid dimension {k} has empty bounds")));
            }
        }
        Ok(GridSpec {
            lower,
            upper,
            bins,
            angular,
        })
    }

    /// Angular coordinates span `[−π, π)`; the others span the data
    /// envelope widened by `margin` of its range on each side.
    pub fn from_envelope(trajs: &[&Trajectory], bins: usize, angular: &[bool], margin: f64) -> Result<Self> {
        let n = angular.len();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for tr in trajs {
            if tr.dim() != n {
                return Err(Error::dims("trajectory dimension", n, tr.dim()));
            }
            for u in tr.states() {
                for k in 0..n {
                    lo[k] = lo[k].min(u[k]);
                    hi[k] = hi[k].max(u[k]);
                }
            }
        }
        for k in 0..n {
            if angular[k] {
                lo[k] = -PI;
                hi[k] = PI;
            } else {
                if !lo[k].is_finite() {
                    return Err(Error::invalid("no samples to build a grid from"));
                }
                let pad = margin * (hi[k] - lo[k]).max(1e-12);
                lo[k] -= pad;
                hi[k] += pad;
            }
        }
        Self::new(lo, hi, vec![bins; n], angular.to_vec())
    }

    pub fn n_boxes(&self) -> usize {
        self.bins.iter().product()
    }

    /// Box index of `u` and whether a coordinate had to be clamped.
    pub fn locate(&self, u: &[f64]) -> (usize, bool) {
        let mut idx = 0;
        let mut clamped = false;
        for k in 0..self.bins.len() {
            let (lo, hi) = if self.angular[k] { (-PI, PI) } else { (self.lower[k], self.upper[k]) };
            let x = if self.angular[k] { wrap_angle(u[k]) } else { u[k] };
            let nb = self.bins[k];
            let pos = ((x - lo) / (hi - lo) * nb as f64).floor();
            let b = if pos < 0.0 {
                clamped |= !self.angular[k];
                0
            } else if pos >= nb as f64 {
                clamped |= !self.angular[k];
                nb - 1
            } else {
                pos as usize
            };
            idx = idx * nb + b;
        }
        (idx, clamped)
    }
}

/// `x` wrapped to `[−π, π)`.
pub fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y >= PI {
        -PI
    } else {
        y
    }
}

/// Normalized visit frequencies over the boxes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxHistogram {
    pub grid: GridSpec,
    pub weights: Vec<f64>,
    pub samples: usize,
    /// Samples outside the non-angular bounds, assigned to the edge box.
    pub clamped: usize,
}

/// Occupation histogram of the samples at `t ≥ t₀ + burn_in`.
pub fn occupation_measure(traj: &Trajectory, grid: &GridSpec, burn_in: f64) -> Result<BoxHistogram> {
    if traj.dim() != grid.bins.len() {
        return Err(Error::dims("histogram state dimension", grid.bins.len(), traj.dim()));
    }
    let t0 = traj.times().first().copied().unwrap_or(0.0);
    let mut counts = vec![0usize; grid.n_boxes()];
    let mut samples = 0;
    let mut clamped = 0;
    for (i, &t) in traj.times().iter().enumerate() {
        if t < t0 + burn_in {
            continue;
        }
        let (b, c) = grid.locate(traj.state(i));
        counts[b] += 1;
        samples += 1;
        clamped += c as usize;
    }
    if samples == 0 {
        return Err(Error::invalid("no samples after burn-in"));
    }
    let weights = counts.iter().map(|&c| c as f64 / samples as f64).collect();
    Ok(BoxHistogram {
        grid: grid.clone(),
        weights,
        samples,
        clamped,
    })
}

/// `(1/√2)·‖√p − √q‖₂`.
pub fn hellinger(p: &BoxHistogram, q: &BoxHistogram) -> Result<f64> {
    if p.grid != q.grid {
        return Err(Error::invalid("histograms use different grids"));
    }
    hellinger_weights(&p.weights, &q.weights)
}

pub fn hellinger_weights(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dims("histogram", p.len(), q.len()));
    }
    let s: f64 = p
        .iter()
        .zip(q)
        .map(|(a, b)| {
            let d = a.sqrt() - b.sqrt();
            d * d
        })
        .sum();
    Ok((s / 2.0).sqrt().min(1.0))
}

/// Metrics of one test trial.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub trial: usize,
    pub seed: u64,
    pub gamma: f64,
    pub model: String,
    pub initial_state: Vec<f64>,
    /// Truth grid; the error series may be shorter when the prediction diverged.
    pub times: Vec<f64>,
    pub state_error: Vec<f64>,
    pub constraint_error: Vec<f64>,
    pub constraint_absolute: bool,
    pub stable_time: f64,
    pub stats: SolverStats,
    pub diverged: bool,
}

/// What to integrate in each trial.
#[derive(Debug, Clone)]
pub struct TrialSetup {
    pub system: System,
    pub spec: FieldSpec,
    pub gamma: f64,
    pub model: String,
    pub solver: Solver,
    pub horizon: f64,
    pub seed: u64,
}

/// Keeps the physical coordinates (drops the robot arm's clock).
pub fn physical(traj: &Trajectory, k: usize) -> Trajectory {
    if traj.dim() == k {
        return traj.clone();
    }
    let rows: Vec<Vec<f64>> = traj.states().map(|u| u[..k].to_vec()).collect();
    let mut out = Trajectory::empty(k);
    for (t, r) in traj.times().iter().zip(&rows) {
        out.push(*t, r);
    }
    out
}

/// Prediction of a field from `u0` on `times`, truncated on solver failure.
pub fn predict<F: VectorField<f64>>(field: &F, u0: &[f64], times: &[f64], solver: &Solver) -> (Trajectory, SolverStats, bool) {
    match integrate(field, u0, times[0], times, solver) {
        Ok((tr, st)) => (tr, st, false),
        Err(f) => (f.partial, f.stats, true),
    }
}

pub fn run_trial(setup: &TrialSetup, trial: usize) -> Result<EvalReport> {
    let sys = setup.system;
    let u0 = sys.sample_initial_state(&mut rng_for(setup.seed, streams::TRIALS + trial as u64));
    let times = sample_times(sys.dt(), setup.horizon);
    let (truth, _) = sys.ground_truth(&u0, &times)?;
    let manifold = Arc::new(sys.manifold(&u0)?);
    let field = assemble_field(&setup.spec)?;
    let (pred, stats, diverged) = if setup.gamma > 0.0 {
        predict(&StabilizedField::new(field, manifold.clone(), setup.gamma)?, &u0, &times, &setup.solver)
    } else {
        predict(&field, &u0, &times, &setup.solver)
    };
    let k = sys.physical_dim();
    let state_error = relative_error_series(&physical(&truth, k), &physical(&pred, k))?;
    let (constraint_error, constraint_absolute) = constraint_error_series(&manifold, &pred);
    let stable = stable_time(&state_error, &times, E_STAB);
    Ok(EvalReport {
        trial,
        seed: setup.seed,
        gamma: setup.gamma,
        model: setup.model.clone(),
        initial_state: u0,
        times,
        state_error,
        constraint_error,
        constraint_absolute,
        stable_time: stable,
        stats,
        diverged,
    })
}

/// Worker count from `SNDE_THREADS`, defaulting to the machine's parallelism.
pub fn thread_count() -> usize {
    std::env::var("SNDE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs trials `0..n_trials` in parallel; results come back in trial order.
pub fn run_trials(setup: &TrialSetup, n_trials: usize) -> Result<Vec<EvalReport>> {
    if !(setup.horizon > 0.0) {
        return Err(Error::invalid("evaluation horizon must be positive"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| (0..n_trials).into_par_iter().map(|k| run_trial(setup, k)).collect())
}

/// Evaluates a trained model on fresh initial states. `gamma` overrides the
/// checkpoint's value when given.
pub fn evaluate_model(
    checkpoint: &Checkpoint,
    n_trials: usize,
    horizon: f64,
    seed: u64,
    gamma: Option<f64>,
) -> Result<Vec<EvalReport>> {
    let cfg = &checkpoint.config;
    let gamma = gamma.unwrap_or(cfg.gamma);
    let setup = TrialSetup {
        system: cfg.system,
        spec: cfg.field_spec(checkpoint.net.clone()),
        gamma,
        model: if gamma > 0.0 { format!("snde-{}", cfg.model) } else { cfg.model.to_string() },
        solver: cfg.solver(),
        horizon,
        seed,
    };
    run_trials(&setup, n_trials)
}

/// Mean and normal-approximation 95% interval at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub t: f64,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

/// Mean ± 1.96·stderr of `values`.
pub fn mean_ci(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, mean, mean);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let half = 1.96 * (var / n).sqrt();
    (mean, mean - half, mean + half)
}

/// Per-time aggregate of one series over trials; trials that stopped
/// early contribute only up to their last point.
pub fn aggregate(reports: &[EvalReport], series: impl Fn(&EvalReport) -> &[f64]) -> Vec<Aggregate> {
    let Some(first) = reports.first() else {
        return Vec::new();
    };
    first
        .times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let vals: Vec<f64> = reports.iter().filter_map(|r| series(r).get(i).copied()).collect();
            let (mean, ci_low, ci_high) = mean_ci(&vals);
            Aggregate {
                t,
                mean,
                ci_low,
                ci_high,
                n: vals.len(),
            }
        })
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn trial_csv(r: &EvalReport) -> String {
    let mut s = String::from("t,rel_err_state,rel_err_constraint\n");
    for i in 0..r.state_error.len() {
        let _ = writeln!(s, "{},{:e},{:e}", r.times[i], r.state_error[i], r.constraint_error[i]);
    }
    s
}

pub fn aggregate_csv(rows: &[Aggregate]) -> String {
    let mut s = String::from("t,mean,ci_low,ci_high\n");
    for a in rows {
        let _ = writeln!(s, "{},{:e},{:e},{:e}", a.t, a.mean, a.ci_low, a.ci_high);
    }
    s
}

pub fn stats_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("trial,accepted,rejected,rhs_evals,stable_time\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.trial, r.stats.accepted, r.stats.rejected, r.stats.rhs_evals, r.stable_time
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(rows: &[Vec<f64>]) -> Trajectory {
        Trajectory::from_rows((0..rows.len()).map(|i| i as f64).collect(), rows).unwrap()
    }

    #[test]
    fn relative_error_examples() {
        let truth = traj(&[vec![1.0, 0.0], vec![0.0, 2.0]]);
        assert_eq!(relative_error_series(&truth, &truth).unwrap(), vec![0.0, 0.0]);
        let zero = traj(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(relative_error_series(&truth, &zero).unwrap(), vec![1.0, 1.0]);
        let t1 = traj(&[vec![1.0, 0.0]]);
        let p1 = traj(&[vec![1.1, 0.0]]);
        assert!((relative_error_series(&t1, &p1).unwrap()[0] - 0.1).abs() < 1e-15);
        assert!(relative_error_series(&zero, &truth).is_err());
    }

    #[test]
    fn blown_up_predictions_stay_ordered() {
        let truth = traj(&[vec![1.0, 0.0, 0.0]]);
        let pred = traj(&[vec![3e200, -4e200, 0.0]]);
        let e = relative_error_series(&truth, &pred).unwrap()[0];
        assert!((e / 5e200 - 1.0).abs() < 1e-12, "{e}");
        let m = System::RigidBody.manifold(&[1.0, 0.0, 0.0]).unwrap();
        let (c, _) = constraint_error_series(&m, &traj(&[vec![1e300, 1e300, 0.0]]));
        assert_eq!(c, vec![f64::INFINITY]);
    }

    #[test]
    fn truncated_prediction_is_a_prefix() {
        let truth = traj(&[vec![1.0], vec![2.0], vec![3.0]]);
        let pred = traj(&[vec![1.0], vec![2.5]]);
        assert_eq!(relative_error_series(&truth, &pred).unwrap().len(), 2);
        let shifted = Trajectory::from_rows(vec![0.5], &[vec![1.0]]).unwrap();
        assert!(relative_error_series(&truth, &shifted).is_err());
    }

    #[test]
    fn constraint_error_of_scaled_casimir() {
        let m = System::RigidBody.manifold(&[1.0, 0.0, 0.0]).unwrap();
        let y = (1.1f64).sqrt();
        let pred = traj(&[vec![y, 0.0, 0.0]]);
        let (e, abs) = constraint_error_series(&m, &pred);
        assert!(!abs);
        assert!((e[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_reference_falls_back_to_absolute() {
        // angular momentum of a radial state is zero
        let m = System::TwoBody.manifold(&[1.0, 0.0, 0.5, 0.0]).unwrap();
        let pred = traj(&[vec![1.0, 0.0, 0.0, 0.25]]);
        let (e, abs) = constraint_error_series(&m, &pred);
        assert!(abs);
        assert_eq!(e, vec![0.25]);
    }

    #[test]
    fn stable_time_examples() {
        let times: Vec<f64> = (0..=2000).map(|k| k as f64).collect();
        assert_eq!(stable_time(&times, &times, 1e3), 1000.0);
        let small = vec![1.0; 1601];
        let grid: Vec<f64> = (0..=1600).map(|k| k as f64 * 0.1).collect();
        assert_eq!(stable_time(&small, &grid, 1e3), 160.0);
        assert_eq!(stable_time(&[2e3, 1.0], &[0.0, 1.0], 1e3), 0.0);
        // diverged after two points
        assert_eq!(stable_time(&[1.0, 2.0], &[0.0, 1.0, 2.0, 3.0], 1e3), 2.0);
    }

    #[test]
    fn hellinger_examples() {
        assert_eq!(hellinger_weights(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(hellinger_weights(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        let h = hellinger_weights(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((h - 0.54120).abs() < 1e-5, "{h}");
        assert!(hellinger_weights(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn histogram_examples() {
        let grid = GridSpec::new(vec![0.0], vec![2.0], vec![2], vec![false]).unwrap();
        let still = traj(&[vec![0.5], vec![0.5], vec![0.5]]);
        let h = occupation_measure(&still, &grid, 0.0).unwrap();
        assert_eq!(h.weights, vec![1.0, 0.0]);
        let split = traj(&[vec![0.5], vec![1.5], vec![0.2], vec![1.9]]);
        let h = occupation_measure(&split, &grid, 0.0).unwrap();
        assert_eq!(h.weights, vec![0.5, 0.5]);
        let outside = traj(&[vec![-1.0], vec![5.0]]);
        let h = occupation_measure(&outside, &grid, 0.0).unwrap();
        assert_eq!(h.clamped, 2);
        assert_eq!(h.weights, vec![0.5, 0.5]);
        assert!(occupation_measure(&still, &grid, 10.0).is_err());
    }

    #[test]
    fn angles_wrap() {
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert_eq!(wrap_angle(PI), -PI);
        assert_eq!(wrap_angle(-PI), -PI);
        let grid = GridSpec::new(vec![-PI], vec![PI], vec![4], vec![true]).unwrap();
        assert_eq!(grid.locate(&[2.0 * PI + 0.1]), grid.locate(&[0.1]));
    }

    #[test]
    fn mean_ci_of_constant_values() {
        assert_eq!(mean_ci(&[2.0, 2.0, 2.0]), (2.0, 2.0, 2.0));
        let (m, lo, hi) = mean_ci(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((hi - m - 1.96).abs() < 1e-12 && (m - lo - 1.96).abs() < 1e-12);
    }

    #[test]
    fn oracle_field_trials_are_accurate() {
        let setup = TrialSetup {
            system: System::RigidBody,
            spec: FieldSpec::ground_truth(System::RigidBody),
            gamma: 0.0,
            model: "truth".into(),
            solver: Solver::training(),
            horizon: 15.0,
            seed: 4,
        };
        let reports = run_trials(&setup, 3).unwrap();
        for r in &reports {
            assert!(!r.diverged);
            let mean = r.state_error.iter().sum::<f64>() / r.state_error.len() as f64;
            assert!(mean < 1e-5, "{mean}");
            assert_eq!(r.stable_time, 15.0);
        }
        assert_ne!(reports[0].initial_state, reports[1].initial_state);
        assert_eq!(run_trial(&setup, 1).unwrap(), reports[1]);
    }
}
