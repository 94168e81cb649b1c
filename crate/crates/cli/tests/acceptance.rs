//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when a gating criterion fails.
//!
//! `cargo test --release --test acceptance -- 4 9` runs only criteria 4 and 9.

use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use snde_core::autodiff::{fd_check, Tape, Var};
use snde_core::evaluation::{
    evaluate_model, hellinger, hellinger_weights, median, occupation_measure, EvalReport, GridSpec, E_STAB,
};
use snde_core::neural::{layer_shapes, FieldSpec, Mlp, NeuralField, TapedNet};
use snde_core::ode::{integrate, rk_step, Solver, Trajectory, VectorField, TSIT5};
use snde_core::stabilization::{ConstraintKind, ConstraintManifold, StabilizedField};
use snde_core::systems::{kepler_period, sample_times, two_body_initial_state, ModelKind, System};
use snde_core::training::{chunk_and_split, chunk_loss, generate_dataset, train_on, Chunk, TrainingConfig};
use snde_core::Result;

// criterion 1
const RESIDUAL_STATES: usize = 1000;
const RESIDUAL_REL_TOL: f64 = 1e-12;
const RESIDUAL_BUDGET: Duration = Duration::from_secs(60);
// criterion 2
const DECAY_REL_TOL: f64 = 1e-6;
const DECAY_GAMMAS: [f64; 3] = [1.0, 8.0, 32.0];
const DECAY_TIMES: [f64; 3] = [0.5, 1.0, 2.0];
const LYAPUNOV_SLACK: f64 = 1e-6;
// criterion 3
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_MIN_STEPS: usize = 5;
const GRAD_FD_STEP: f64 = 1e-6;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
// criterion 4
const ORDER_RANGE: (f64, f64) = (4.5, 5.5);
const ORDER_STEPS: [usize; 6] = [200, 283, 400, 566, 800, 1131];
// criterion 5
const DRIFT_REL_TOL: f64 = 1e-8;
const PATH_RESIDUAL_TOL: f64 = 1e-8;
// criteria 6, 7, 8, 10
const STUDY_SEED: u64 = 0;
const TEST_SEED: u64 = 12345;
const RIGID_TRAJECTORIES: usize = 10;
const RIGID_EPOCHS: usize = 300;
const RIGID_HORIZON: f64 = 150.0;
const STUDY_TRIALS: usize = 20;
const SNDE_CONSTRAINT_MAX: f64 = 1e-2;
const CONSTRAINT_FACTOR: f64 = 10.0;
const SWEEP_GAMMAS: [f64; 6] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
const SWEEP_SPREAD: f64 = 10.0;
const TWO_BODY_TRAJECTORIES: usize = 40;
const TWO_BODY_EPOCHS: usize = 1000;
const TWO_BODY_HORIZON: f64 = 200.0;
const OVERHEAD_RANGE: (f64, f64) = (1.0, 2.5);
// criterion 9
const MEASURE_HALF: f64 = 300.0;
const MEASURE_DT: f64 = 0.05;
const MEASURE_BINS: usize = 20;
const MEASURE_BURN_IN: f64 = 10.0;
const MEASURE_MAX: f64 = 0.1;
const TWO_BIN_EXPECTED: f64 = 0.54120;
const TWO_BIN_TOL: f64 = 1e-5;

struct Outcome {
    pass: bool,
    gating: bool,
    detail: String,
}

fn gate(pass: bool, detail: String) -> Outcome {
    Outcome {
        pass,
        gating: true,
        detail,
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_field(sys: System, kind: ModelKind, width: usize, seed: u64) -> Result<FieldSpec> {
    let probe = FieldSpec::learned(sys, kind, Mlp::zeros(vec![(1, 1)])?);
    let (i, o) = probe.net_io()?;
    Ok(FieldSpec::learned(sys, kind, Mlp::init(layer_shapes(i, width, 2, o), seed)?))
}

fn on_manifold_residual() -> Result<Outcome> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for sys in System::ALL {
        let d = sys.defaults();
        let kind = if sys == System::DoublePendulum { ModelKind::Node } else { d.model };
        let mut r = rng(1);
        for k in 0..RESIDUAL_STATES {
            let u0 = sys.sample_initial_state(&mut r);
            let spec = random_field(sys, kind, 16, k as u64)?;
            let base = snde_core::neural::assemble_field(&spec)?;
            let m = Arc::new(sys.manifold(&u0)?);
            let t = 0.01 * k as f64;
            let f: Vec<f64> = base.eval(t, &u0)?;
            let s: Vec<f64> = StabilizedField::new(base, m, d.gamma)?.eval(t, &u0)?;
            let diff: Vec<f64> = f.iter().zip(&s).map(|(a, b)| a - b).collect();
            worst = worst.max(norm(&diff) / norm(&f).max(f64::MIN_POSITIVE));
        }
    }
    let elapsed = start.elapsed();
    Ok(gate(
        worst <= RESIDUAL_REL_TOL && elapsed < RESIDUAL_BUDGET,
        format!(
            "max relative ‖stabilized − base‖ over {} states/system = {worst:.2e} (tol {RESIDUAL_REL_TOL:.0e}), {:.1}s",
            RESIDUAL_STATES,
            elapsed.as_secs_f64()
        ),
    ))
}

struct Zero(usize);

impl VectorField<f64> for Zero {
    fn dim(&self) -> usize {
        self.0
    }
    fn eval(&self, _t: f64, _u: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.0])
    }
}

fn decay_law() -> Result<Outcome> {
    let a = vec![1.0, -2.0, 0.5];
    let solver = Solver::tsit5(1e-200, 1e-12);
    let mut times = vec![0.0];
    times.extend(DECAY_TIMES);
    // through the origin every coordinate decays, so relative error is meaningful
    // all the way down; the offset case is judged against |g(0)|
    let through_origin = Arc::new(ConstraintManifold::new(ConstraintKind::Affine(vec![a.clone()]), 3, vec![0.0], None)?);
    let offset = Arc::new(ConstraintManifold::new(ConstraintKind::Affine(vec![a.clone()]), 3, vec![0.7], None)?);
    let mut worst_rel = 0.0f64;
    let mut worst_offset = 0.0f64;
    for &gamma in &DECAY_GAMMAS {
        let u0: Vec<f64> = a.iter().map(|x| 0.3 * x).collect();
        let (tr, _) = integrate(&StabilizedField::new(Zero(3), through_origin.clone(), gamma)?, &u0, 0.0, &times, &solver)?;
        let g0 = through_origin.residual(&u0)[0];
        for (i, &t) in times.iter().enumerate().skip(1) {
            let want = g0 * (-gamma * t).exp();
            worst_rel = worst_rel.max((through_origin.residual(tr.state(i))[0] - want).abs() / want.abs());
        }
        let u0 = vec![0.4, 1.1, -0.3];
        let (tr, _) = integrate(&StabilizedField::new(Zero(3), offset.clone(), gamma)?, &u0, 0.0, &times, &Solver::tsit5(1e-12, 1e-12))?;
        let g0 = offset.residual(&u0)[0];
        for (i, &t) in times.iter().enumerate().skip(1) {
            let want = g0 * (-gamma * t).exp();
            worst_offset = worst_offset.max((offset.residual(tr.state(i))[0] - want).abs() / g0.abs());
        }
    }
    let circle = Arc::new(ConstraintManifold::new(ConstraintKind::SquaredNorm { scale: 1.0 }, 2, vec![1.0], None)?);
    let grid = sample_times(0.01, 2.0);
    let mut worst_rise = 0.0f64;
    let mut r = rng(2);
    for &gamma in &DECAY_GAMMAS {
        for _ in 0..10 {
            let u0: Vec<f64> = (0..2).map(|_| rand::Rng::gen_range(&mut r, -2.0..2.0)).collect();
            let field = StabilizedField::new(Zero(2), circle.clone(), gamma)?;
            let (tr, _) = integrate(&field, &u0, 0.0, &grid, &Solver::tsit5(1e-10, 1e-10))?;
            let v: Vec<f64> = tr.states().map(|u| circle.lyapunov(u)).collect();
            for w in v.windows(2) {
                worst_rise = worst_rise.max(w[1] - w[0]);
            }
        }
    }
    Ok(gate(
        worst_rel <= DECAY_REL_TOL && worst_offset <= DECAY_REL_TOL && worst_rise <= LYAPUNOV_SLACK,
        format!(
            "affine decay rel err {worst_rel:.2e}, offset start {worst_offset:.2e} (tol {DECAY_REL_TOL:.0e}); circle V max rise {worst_rise:.2e}"
        ),
    ))
}

fn gradient_check() -> Result<Outcome> {
    let start = Instant::now();
    let sys = System::RigidBody;
    let u0 = sys.sample_initial_state(&mut rng(3));
    let times = vec![0.0, 0.5, 1.0];
    let (truth, _) = sys.ground_truth(&u0, &times)?;
    let chunk = Chunk {
        traj: 0,
        start: 0,
        times: times.clone(),
        states: truth.states().map(<[f64]>::to_vec).collect(),
    };
    let spec = random_field(sys, ModelKind::Node, 8, 7)?;
    let net = spec.net.clone().expect("learned");
    let shapes = net.shapes().to_vec();
    let params = net.params().to_vec();
    let manifold = Arc::new(sys.manifold(&u0)?);
    let gamma = sys.defaults().gamma;
    let solver = Solver::tsit5(1e-8, 1e-8);
    let plain = snde_core::neural::assemble_field(&spec)?;
    let stab = StabilizedField::new(plain, manifold.clone(), gamma)?;
    let (_, stats) = integrate(&stab, &u0, 0.0, &times, &solver)?;
    let dev = fd_check(
        |tape: &Tape| -> Result<Var<'_>> {
            let net = TapedNet {
                tape,
                offset: 0,
                shapes: &shapes,
            };
            let field = NeuralField::with_net::<Var>(&spec, Some(net))?;
            chunk_loss(&StabilizedField::new(field, manifold.clone(), gamma)?, &chunk, &solver)
        },
        &params,
        GRAD_FD_STEP,
    )?;
    let elapsed = start.elapsed();
    Ok(gate(
        dev < GRAD_REL_TOL && stats.accepted >= GRAD_MIN_STEPS && elapsed < GRAD_BUDGET,
        format!(
            "{} params, {} accepted steps, max rel deviation vs central FD {dev:.2e} (tol {GRAD_REL_TOL:.0e}), {:.1}s",
            params.len(),
            stats.accepted,
            elapsed.as_secs_f64()
        ),
    ))
}

fn solver_order() -> Result<Outcome> {
    let sys = System::TwoBody;
    let u0 = two_body_initial_state(0.1);
    let period = kepler_period(&u0)?;
    let field = sys.truth();
    let mut pts = Vec::new();
    for &n in &ORDER_STEPS {
        let h = period / n as f64;
        let mut u = u0.clone();
        for k in 0..n {
            u = rk_step(&TSIT5, &field, k as f64 * h, &u, h)?.high;
        }
        // one full period returns to the start
        let err = norm(&u.iter().zip(&u0).map(|(a, b)| a - b).collect::<Vec<_>>());
        pts.push((h.ln(), err.ln()));
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    Ok(gate(
        (ORDER_RANGE.0..=ORDER_RANGE.1).contains(&slope),
        format!(
            "fitted order {slope:.3} over h = T/{}..T/{} (errors {:.1e}..{:.1e})",
            ORDER_STEPS[0],
            ORDER_STEPS[ORDER_STEPS.len() - 1],
            pts[0].1.exp(),
            pts[pts.len() - 1].1.exp()
        ),
    ))
}

fn max_drift(sys: System, u0: &[f64], horizon: f64) -> Result<f64> {
    let (tr, _) = sys.ground_truth(u0, &sample_times(sys.dt(), horizon))?;
    let inv = sys.invariant();
    let q0 = inv.quantity(u0);
    let scale = norm(&q0);
    Ok(tr
        .states()
        .map(|u| {
            let q = inv.quantity(u);
            norm(&q.iter().zip(&q0).map(|(a, b)| a - b).collect::<Vec<_>>()) / scale
        })
        .fold(0.0, f64::max))
}

fn conservation() -> Result<Outcome> {
    let mut lines = Vec::new();
    let mut pass = true;
    let mut r = rng(5);
    for (sys, horizon) in [
        (System::TwoBody, None),
        (System::RigidBody, Some(15.0)),
        (System::DcConverter, Some(10.0)),
        (System::DoublePendulum, Some(60.0)),
    ] {
        let mut worst = 0.0f64;
        for _ in 0..3 {
            let u0 = sys.sample_initial_state(&mut r);
            let h = match horizon {
                Some(h) => h,
                None => kepler_period(&u0)?,
            };
            worst = worst.max(max_drift(sys, &u0, h)?);
        }
        pass &= worst < DRIFT_REL_TOL;
        lines.push(format!("{sys} {worst:.1e}"));
    }
    let sys = System::RobotArm;
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let u0 = sys.sample_initial_state(&mut r);
        let m = sys.manifold(&u0)?;
        let (tr, _) = sys.ground_truth(&u0, &sample_times(sys.dt(), 5.0))?;
        worst = tr.states().map(|u| norm(&m.residual(u))).fold(worst, f64::max);
    }
    pass &= worst < PATH_RESIDUAL_TOL;
    lines.push(format!("robot_arm path {worst:.1e}"));
    Ok(gate(
        pass,
        format!("max drift (tol {DRIFT_REL_TOL:.0e}): {}", lines.join(", ")),
    ))
}

struct Run {
    gamma: f64,
    train_seconds: f64,
    reports: Vec<EvalReport>,
}

impl Run {
    fn final_of(&self, f: impl Fn(&EvalReport) -> &[f64]) -> f64 {
        let v: Vec<f64> = self
            .reports
            .iter()
            .map(|r| {
                let s = f(r);
                if s.len() == r.times.len() {
                    s[s.len() - 1]
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        median(&v)
    }
    fn final_state(&self) -> f64 {
        self.final_of(|r| &r.state_error)
    }
    fn final_constraint(&self) -> f64 {
        self.final_of(|r| &r.constraint_error)
    }
    fn stable_median(&self) -> f64 {
        median(&self.reports.iter().map(|r| r.stable_time).collect::<Vec<_>>())
    }
    fn never_unstable(&self, horizon: f64) -> bool {
        self.reports.iter().all(|r| !r.diverged && r.stable_time >= horizon)
    }
    fn steps(&self) -> (usize, usize, usize) {
        self.reports.iter().fold((0, 0, 0), |(a, b, c), r| {
            (a + r.stats.accepted, b + r.stats.rejected, c + r.stats.rhs_evals)
        })
    }
}

struct Study {
    horizon: f64,
    runs: Vec<Run>,
}

impl Study {
    fn run(&self, gamma: f64) -> &Run {
        self.runs.iter().find(|r| r.gamma == gamma).expect("gamma was studied")
    }
}

fn study(system: System, trajectories: usize, epochs: usize, horizon: f64, gammas: &[f64]) -> Result<Study> {
    let base = TrainingConfig {
        epochs,
        trajectories,
        seed: STUDY_SEED,
        ..TrainingConfig::new(system)
    };
    let set = generate_dataset(system, trajectories, STUDY_SEED, None)?;
    let data = chunk_and_split(&set, base.chunk_len, base.train_fraction, STUDY_SEED)?;
    let mut runs = Vec::new();
    for &gamma in gammas {
        let cfg = TrainingConfig { gamma, ..base.clone() };
        let start = Instant::now();
        let ck = train_on(&cfg, &set, &data, |_| {})?;
        let train_seconds = start.elapsed().as_secs_f64();
        let reports = evaluate_model(&ck, STUDY_TRIALS, horizon, TEST_SEED, None)?;
        let run = Run {
            gamma,
            train_seconds,
            reports,
        };
        let (a, r, e) = run.steps();
        println!(
            "    {system} γ={gamma:<4} train {train_seconds:>6.1}s  final state {:.3e}  constraint {:.3e}  stable {}  steps {a}/{r}/{e}",
            run.final_state(),
            run.final_constraint(),
            run.stable_median()
        );
        runs.push(run);
    }
    Ok(Study { horizon, runs })
}

#[derive(Default)]
struct Studies {
    rigid: Option<Study>,
    two_body: Option<Study>,
}

impl Studies {
    fn rigid(&mut self) -> Result<&Study> {
        if self.rigid.is_none() {
            let mut gammas = vec![0.0];
            gammas.extend(SWEEP_GAMMAS.iter().rev());
            self.rigid = Some(study(System::RigidBody, RIGID_TRAJECTORIES, RIGID_EPOCHS, RIGID_HORIZON, &gammas)?);
        }
        Ok(self.rigid.as_ref().expect("set above"))
    }
    fn two_body(&mut self) -> Result<&Study> {
        if self.two_body.is_none() {
            let g = System::TwoBody.defaults().gamma;
            self.two_body = Some(study(System::TwoBody, TWO_BODY_TRAJECTORIES, TWO_BODY_EPOCHS, TWO_BODY_HORIZON, &[g, 0.0])?);
        }
        Ok(self.two_body.as_ref().expect("set above"))
    }
}

fn fig2_trend(studies: &mut Studies) -> Result<Outcome> {
    let s = studies.rigid()?;
    let (snde, node) = (s.run(32.0), s.run(0.0));
    let (sc, nc) = (snde.final_constraint(), node.final_constraint());
    let (ss, ns) = (snde.final_state(), node.final_state());
    Ok(gate(
        sc < SNDE_CONSTRAINT_MAX && sc * CONSTRAINT_FACTOR <= nc && ss <= ns,
        format!("median final constraint SNDE {sc:.2e} vs NODE {nc:.2e}; state SNDE {ss:.3} vs NODE {ns:.3}"),
    ))
}

fn stable_time_trend(studies: &mut Studies) -> Result<Outcome> {
    let mut detail = Vec::new();
    let mut snde_ok = true;
    let mut node_shorter = false;
    let g = System::TwoBody.defaults().gamma;
    studies.rigid()?;
    studies.two_body()?;
    let both = [
        ("rigid_body", studies.rigid.as_ref().expect("built"), 32.0),
        ("two_body", studies.two_body.as_ref().expect("built"), g),
    ];
    for (name, s, gamma) in both {
        let snde = s.run(gamma);
        let node = s.run(0.0);
        snde_ok &= snde.never_unstable(s.horizon);
        node_shorter |= node.stable_median() < s.horizon;
        detail.push(format!(
            "{name}: SNDE min stable {:.1}, NODE median stable {:.1} of {}",
            snde.reports.iter().map(|r| r.stable_time).fold(f64::INFINITY, f64::min),
            node.stable_median(),
            s.horizon
        ));
    }
    Ok(gate(snde_ok && node_shorter, format!("E_stab={E_STAB:.0e}; {}", detail.join("; "))))
}

fn gamma_insensitivity(studies: &mut Studies) -> Result<Outcome> {
    let s = studies.rigid()?;
    let finals: Vec<f64> = SWEEP_GAMMAS.iter().map(|&g| s.run(g).final_state()).collect();
    let lo = finals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finals.iter().copied().fold(0.0, f64::max);
    let list: Vec<String> = SWEEP_GAMMAS.iter().zip(&finals).map(|(g, f)| format!("γ={g}:{f:.3}")).collect();
    Ok(gate(
        hi <= SWEEP_SPREAD * lo,
        format!("median final state errors {} (spread {:.2}×)", list.join(" "), hi / lo),
    ))
}

fn invariant_measure() -> Result<Outcome> {
    let sys = System::DoublePendulum;
    let u0 = sys.sample_initial_state(&mut rng(9));
    let times = sample_times(MEASURE_DT, 2.0 * MEASURE_HALF);
    let (tr, _) = sys.ground_truth(&u0, &times)?;
    let split = times.iter().position(|&t| t >= MEASURE_HALF).expect("grid spans both halves");
    let (first, second): (Trajectory, Trajectory) = (tr.slice(0..split), tr.slice(split..tr.len()));
    let grid = GridSpec::from_envelope(&[&tr], MEASURE_BINS, &sys.angular(), 0.1)?;
    let p = occupation_measure(&first, &grid, MEASURE_BURN_IN)?;
    let q = occupation_measure(&second, &grid, 0.0)?;
    let h = hellinger(&p, &q)?;
    let same = hellinger(&p, &p)?;
    let disjoint = hellinger_weights(&[1.0, 0.0], &[0.0, 1.0])?;
    let two_bin = hellinger_weights(&[1.0, 0.0], &[0.5, 0.5])?;
    let units = same == 0.0 && disjoint == 1.0 && (two_bin - TWO_BIN_EXPECTED).abs() <= TWO_BIN_TOL;
    let coarse: Vec<String> = [5, 10]
        .iter()
        .map(|&b| -> Result<String> {
            let g = GridSpec::from_envelope(&[&tr], b, &sys.angular(), 0.1)?;
            let h = hellinger(&occupation_measure(&first, &g, MEASURE_BURN_IN)?, &occupation_measure(&second, &g, 0.0)?)?;
            Ok(format!("{b} bins {h:.3}"))
        })
        .collect::<Result<_>>()?;
    let occupied = p.weights.iter().filter(|w| **w > 0.0).count();
    Ok(gate(
        h < MEASURE_MAX && units,
        format!(
            "halves of a {}s pendulum run at {MEASURE_BINS} bins/dim: H = {h:.4} (< {MEASURE_MAX}), {occupied} boxes occupied by {} samples; coarser grids: {}; unit values {same}, {disjoint}, {two_bin:.5}",
            2.0 * MEASURE_HALF,
            p.samples,
            coarse.join(", ")
        ),
    ))
}

fn overhead(studies: &mut Studies) -> Result<Outcome> {
    let s = studies.rigid()?;
    let ratio = s.run(32.0).train_seconds / s.run(0.0).train_seconds;
    let mut gammas = vec![0.0];
    gammas.extend(SWEEP_GAMMAS);
    let rejected: Vec<String> = gammas
        .iter()
        .map(|&g| {
            let (a, r, e) = s.run(g).steps();
            format!("γ={g}:{a}/{r}/{e}")
        })
        .collect();
    Ok(Outcome {
        pass: (OVERHEAD_RANGE.0..=OVERHEAD_RANGE.1).contains(&ratio),
        gating: false,
        detail: format!(
            "training time ratio SNDE/NODE {ratio:.2} (expected {:.1}..{:.1}); accepted/rejected/rhs per γ: {}",
            OVERHEAD_RANGE.0,
            OVERHEAD_RANGE.1,
            rejected.join(" ")
        ),
    })
}

fn reproducibility() -> Result<Outcome> {
    let dir = std::env::temp_dir().join(format!("snde-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).map_err(|e| snde_core::Error::Io(e.to_string()))?;
    let cfg = dir.join("config.txt");
    std::fs::write(
        &cfg,
        "system=rigid_body\nepochs=5\ntrajectories=4\nhidden_width=16\ntest_trials=4\neval_horizon=30\nseed=42\n",
    )
    .map_err(|e| snde_core::Error::Io(e.to_string()))?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.join(run);
        for cmd in ["generate", "train", "eval"] {
            let status = Command::new(env!("CARGO_BIN_EXE_snde"))
                .args([cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
                .env("SNDE_THREADS", "1")
                .output()
                .map_err(|e| snde_core::Error::Io(e.to_string()))?;
            if !status.status.success() {
                return Ok(gate(false, format!("`snde {cmd}` failed: {}", String::from_utf8_lossy(&status.stderr))));
            }
        }
        let mut files = Vec::new();
        for f in ["dataset.csv", "checkpoint.txt", "eval/aggregate_state.csv", "eval/aggregate_constraint.csv", "eval/stats.csv"] {
            files.push(std::fs::read(out.join(f)).map_err(|e| snde_core::Error::Io(e.to_string()))?);
        }
        outputs.push(files);
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(gate(
        outputs[0] == outputs[1],
        "generate→train→eval twice with seed 42, SNDE_THREADS=1: dataset, checkpoint and report CSVs compared byte for byte".into(),
    ))
}

fn main() -> ExitCode {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |id: usize| wanted.is_empty() || wanted.contains(&id);
    let mut studies = Studies::default();
    let mut failed = 0;
    type Check<'a> = Box<dyn FnMut(&mut Studies) -> Result<Outcome> + 'a>;
    let checks: Vec<(usize, &str, Check)> = vec![
        (1, "on-manifold residual", Box::new(|_| on_manifold_residual())),
        (2, "decay law", Box::new(|_| decay_law())),
        (3, "gradient correctness", Box::new(|_| gradient_check())),
        (4, "solver order", Box::new(|_| solver_order())),
        (5, "conservation oracles", Box::new(|_| conservation())),
        (6, "rigid-body error trend", Box::new(fig2_trend)),
        (7, "stable-time trend", Box::new(stable_time_trend)),
        (8, "gamma insensitivity", Box::new(gamma_insensitivity)),
        (9, "invariant measure", Box::new(|_| invariant_measure())),
        (10, "training overhead", Box::new(overhead)),
        (11, "reproducibility", Box::new(|_| reproducibility())),
    ];
    for (id, name, mut check) in checks {
        if !run(id) {
            continue;
        }
        let started = Instant::now();
        let outcome = check(&mut studies).unwrap_or_else(|e| gate(false, format!("error: {e}")));
        let tag = match (outcome.pass, outcome.gating) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "WARN",
        };
        println!(
            "criterion {id:>2} {tag} {name}: {} [{:.1}s]",
            outcome.detail,
            started.elapsed().as_secs_f64()
        );
        if !outcome.pass && outcome.gating {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} gating criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
