//! The six experiment commands. Each writes `config.txt` next to its outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use snde_core::evaluation::{
    aggregate, aggregate_csv, hellinger, median, occupation_measure, physical, predict, run_trials, stats_csv,
    trial_csv, Aggregate, EvalReport, GridSpec, TrialSetup,
};
use snde_core::neural::{assemble_field, FieldSpec};
use snde_core::ode::Trajectory;
use snde_core::stabilization::StabilizedField;
use snde_core::systems::sample_times;
use snde_core::training::{
    chunk_and_split, generate_dataset, rng_for, streams, train_on, Checkpoint, TrajectorySet,
};
use snde_core::{Error, Result};

use crate::config::ExperimentConfig;
use crate::dataset;

pub const DATASET_FILE: &str = "dataset.csv";
pub const META_FILE: &str = "dataset.meta";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const LOSS_FILE: &str = "loss.csv";
pub const CONFIG_FILE: &str = "config.txt";

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn snapshot(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    write(&dir.join(CONFIG_FILE), &cfg.to_text())
}

pub fn generate(cfg: &ExperimentConfig) -> Result<TrajectorySet> {
    let t = &cfg.training;
    let set = generate_dataset(t.system, t.trajectories, t.seed, t.train_horizon)?;
    write(&cfg.out_dir.join(DATASET_FILE), &dataset::to_csv(&set))?;
    write(&cfg.out_dir.join(META_FILE), &dataset::meta_text(&set))?;
    snapshot(cfg, &cfg.out_dir)?;
    Ok(set)
}

/// Reads the dataset in `out_dir` if one exists, otherwise generates it.
pub fn load_or_generate(cfg: &ExperimentConfig) -> Result<TrajectorySet> {
    let csv = cfg.out_dir.join(DATASET_FILE);
    if !csv.exists() {
        return generate(cfg);
    }
    let (system, seed, n) = dataset::parse_meta(&read(&cfg.out_dir.join(META_FILE))?)?;
    let t = &cfg.training;
    if system != t.system {
        return Err(Error::invalid(format!(
            "{} holds {system} data but the config trains {}",
            csv.display(),
            t.system
        )));
    }
    let set = dataset::from_csv(&read(&csv)?, system, seed)?;
    if set.trajectories.len() != n {
        return Err(Error::dims("dataset trajectories", n, set.trajectories.len()));
    }
    Ok(set)
}

fn loss_csv(ck: &Checkpoint) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,diverged\n");
    for h in &ck.history {
        let _ = writeln!(s, "{},{:e},{:e},{}", h.epoch, h.train_loss, h.val_loss, h.diverged);
    }
    s
}

/// Trains into `dir`, returning the checkpoint and the wall-clock seconds.
fn train_into(cfg: &ExperimentConfig, set: &TrajectorySet, dir: &Path) -> Result<(Checkpoint, f64)> {
    let t = &cfg.training;
    let data = chunk_and_split(set, t.chunk_len, t.train_fraction, t.seed)?;
    let every = (t.epochs / 10).max(1);
    let start = Instant::now();
    let ck = train_on(t, set, &data, |log| {
        if log.epoch % every == 0 || log.epoch + 1 == t.epochs {
            eprintln!(
                "[{}] epoch {:>5}  train {:.4e}  val {:.4e}  diverged {}",
                dir.display(),
                log.epoch,
                log.train_loss,
                log.val_loss,
                log.diverged
            );
        }
    })?;
    let secs = start.elapsed().as_secs_f64();
    write(&dir.join(CHECKPOINT_FILE), &ck.to_text())?;
    write(&dir.join(LOSS_FILE), &loss_csv(&ck))?;
    write(&dir.join("timing.txt"), &format!("train_seconds={secs:.3}\n"))?;
    snapshot(cfg, dir)?;
    Ok((ck, secs))
}

pub fn train(cfg: &ExperimentConfig) -> Result<Checkpoint> {
    let set = load_or_generate(cfg)?;
    Ok(train_into(cfg, &set, &cfg.out_dir)?.0)
}

fn final_value(r: &EvalReport, series: &[f64]) -> f64 {
    if series.len() == r.times.len() {
        series[series.len() - 1]
    } else {
        f64::INFINITY
    }
}

/// Writes per-trial, aggregate and solver-statistics CSVs under `dir/eval`.
fn write_reports(reports: &[EvalReport], dir: &Path) -> Result<()> {
    let eval = dir.join("eval");
    for r in reports {
        write(&eval.join(format!("trial_{:03}.csv", r.trial)), &trial_csv(r))?;
    }
    write(&eval.join("stats.csv"), &stats_csv(reports))?;
    write(&eval.join("aggregate_state.csv"), &aggregate_csv(&aggregate(reports, |r| &r.state_error)))?;
    write(
        &eval.join("aggregate_constraint.csv"),
        &aggregate_csv(&aggregate(reports, |r| &r.constraint_error)),
    )?;
    Ok(())
}

fn eval_setup(cfg: &ExperimentConfig, spec: FieldSpec, model: String) -> TrialSetup {
    TrialSetup {
        system: cfg.system(),
        spec,
        gamma: cfg.training.gamma,
        model,
        solver: cfg.training.solver(),
        horizon: cfg.eval_horizon,
        seed: cfg.training.seed,
    }
}

fn model_name(cfg: &ExperimentConfig) -> String {
    let t = &cfg.training;
    if t.gamma > 0.0 {
        format!("snde-{}", t.model)
    } else {
        t.model.to_string()
    }
}

/// Evaluates a checkpoint (or the true field when `oracle`) at the config's γ.
pub fn eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>, oracle: bool) -> Result<Vec<EvalReport>> {
    let setup = if oracle {
        eval_setup(cfg, FieldSpec::ground_truth(cfg.system()), "oracle".into())
    } else {
        let path = checkpoint.map_or_else(|| cfg.out_dir.join(CHECKPOINT_FILE), Path::to_path_buf);
        let ck = Checkpoint::from_text(&read(&path)?)?;
        if ck.config.system != cfg.system() {
            return Err(Error::invalid(format!(
                "checkpoint {} was trained on {} but the config evaluates {}",
                path.display(),
                ck.config.system,
                cfg.system()
            )));
        }
        eval_setup(cfg, ck.config.field_spec(ck.net.clone()), model_name(cfg))
    };
    let reports = run_trials(&setup, cfg.test_trials)?;
    write_reports(&reports, &cfg.out_dir)?;
    snapshot(cfg, &cfg.out_dir)?;
    Ok(reports)
}

/// One row of the sweep summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub gamma: f64,
    pub dir: PathBuf,
    pub final_state_median: f64,
    pub final_constraint_median: f64,
    pub stable_time_median: f64,
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub train_seconds: f64,
}

pub fn gamma_dir(out: &Path, gamma: f64) -> PathBuf {
    out.join(format!("gamma_{gamma}"))
}

pub fn sweep_gamma(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let set = load_or_generate(cfg)?;
    let mut rows = Vec::with_capacity(cfg.gamma_sweep.len());
    for &g in &cfg.gamma_sweep {
        let mut sub = cfg.clone();
        sub.training.gamma = g;
        sub.out_dir = gamma_dir(&cfg.out_dir, g);
        let (ck, secs) = train_into(&sub, &set, &sub.out_dir)?;
        let setup = eval_setup(&sub, ck.config.field_spec(ck.net.clone()), model_name(&sub));
        let reports = run_trials(&setup, sub.test_trials)?;
        write_reports(&reports, &sub.out_dir)?;
        let fs: Vec<f64> = reports.iter().map(|r| final_value(r, &r.state_error)).collect();
        let fc: Vec<f64> = reports.iter().map(|r| final_value(r, &r.constraint_error)).collect();
        let st: Vec<f64> = reports.iter().map(|r| r.stable_time).collect();
        rows.push(SweepRow {
            gamma: g,
            dir: sub.out_dir.clone(),
            final_state_median: median(&fs),
            final_constraint_median: median(&fc),
            stable_time_median: median(&st),
            accepted: reports.iter().map(|r| r.stats.accepted).sum(),
            rejected: reports.iter().map(|r| r.stats.rejected).sum(),
            rhs_evals: reports.iter().map(|r| r.stats.rhs_evals).sum(),
            train_seconds: secs,
        });
    }
    let mut s = String::from(
        "gamma,final_state_median,final_constraint_median,stable_time_median,accepted,rejected,rhs_evals\n",
    );
    let mut timing = String::from("gamma,train_seconds\n");
    for r in &rows {
        let _ = writeln!(
            s,
            "{},{:e},{:e},{},{},{},{}",
            r.gamma, r.final_state_median, r.final_constraint_median, r.stable_time_median, r.accepted, r.rejected, r.rhs_evals
        );
        let _ = writeln!(timing, "{},{:.3}", r.gamma, r.train_seconds);
    }
    write(&cfg.out_dir.join("sweep_summary.csv"), &s)?;
    write(&cfg.out_dir.join("sweep_timing.csv"), &timing)?;
    snapshot(cfg, &cfg.out_dir)?;
    Ok(rows)
}

/// Hellinger distance of one trial's model histogram to the truth histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureRow {
    pub gamma: f64,
    pub trial: usize,
    pub hellinger: f64,
    pub truth_clamped: usize,
    pub model_clamped: usize,
    pub diverged: bool,
}

fn histogram_csv(truth: &[f64], model: &[f64]) -> String {
    let mut s = String::from("box,truth,model\n");
    for (i, (p, q)) in truth.iter().zip(model).enumerate() {
        if *p > 0.0 || *q > 0.0 {
            let _ = writeln!(s, "{i},{p:e},{q:e}");
        }
    }
    s
}

/// Compares long-run occupation histograms of trained models against the
/// truth. One model is trained per γ in {0, config γ}.
pub fn measure(cfg: &ExperimentConfig) -> Result<Vec<MeasureRow>> {
    let sys = cfg.system();
    let angular = sys.angular();
    let set = load_or_generate(cfg)?;
    let mut gammas = vec![0.0];
    if cfg.training.gamma > 0.0 {
        gammas.push(cfg.training.gamma);
    }
    let times = sample_times(sys.dt(), cfg.measure_horizon);
    let k = sys.physical_dim();
    let mut truths = Vec::with_capacity(cfg.measure_trials);
    for trial in 0..cfg.measure_trials {
        let u0 = sys.sample_initial_state(&mut rng_for(cfg.training.seed, streams::TRIALS + trial as u64));
        let (truth, _) = sys.ground_truth(&u0, &times)?;
        truths.push((u0, physical(&truth, k)));
    }
    let mut rows = Vec::new();
    for &g in &gammas {
        let mut sub = cfg.clone();
        sub.training.gamma = g;
        sub.out_dir = gamma_dir(&cfg.out_dir, g);
        let (ck, _) = train_into(&sub, &set, &sub.out_dir)?;
        let field = assemble_field(&ck.config.field_spec(ck.net.clone()))?;
        let solver = sub.training.solver();
        for (trial, (u0, truth)) in truths.iter().enumerate() {
            let (pred, _, diverged) = if g > 0.0 {
                let m = Arc::new(sys.manifold(u0)?);
                predict(&StabilizedField::new(field.clone(), m, g)?, u0, &times, &solver)
            } else {
                predict(&field, u0, &times, &solver)
            };
            let pred: Trajectory = physical(&pred, k);
            let grid = GridSpec::from_envelope(&[truth], cfg.measure_bins, &angular[..k], 0.1)?;
            let p = occupation_measure(truth, &grid, cfg.measure_burn_in)?;
            let q = occupation_measure(&pred, &grid, cfg.measure_burn_in);
            let (h, q_clamped, q_weights) = match q {
                Ok(q) => (hellinger(&p, &q)?, q.clamped, q.weights),
                // too short to leave the burn-in window
                Err(_) => (1.0, 0, vec![0.0; p.weights.len()]),
            };
            write(
                &sub.out_dir.join("measure").join(format!("histogram_{trial:03}.csv")),
                &histogram_csv(&p.weights, &q_weights),
            )?;
            rows.push(MeasureRow {
                gamma: g,
                trial,
                hellinger: h,
                truth_clamped: p.clamped,
                model_clamped: q_clamped,
                diverged,
            });
        }
    }
    let mut s = String::from("gamma,trial,bins,hellinger,truth_clamped,model_clamped,diverged\n");
    for r in &rows {
        let _ = writeln!(
            s,
            "{},{},{},{:e},{},{},{}",
            r.gamma, r.trial, cfg.measure_bins, r.hellinger, r.truth_clamped, r.model_clamped, r.diverged as u8
        );
    }
    write(&cfg.out_dir.join("hellinger.csv"), &s)?;
    snapshot(cfg, &cfg.out_dir)?;
    Ok(rows)
}

fn parse_trial_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let text = read(path)?;
    let (mut t, mut s, mut c) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse {
            line: i + 1,
            msg: format!("{}: bad row '{line}'", path.display()),
        };
        if f.len() != 3 {
            return Err(bad());
        }
        t.push(f[0].parse().map_err(|_| bad())?);
        s.push(f[1].parse().map_err(|_| bad())?);
        c.push(f[2].parse().map_err(|_| bad())?);
    }
    Ok((t, s, c))
}

/// Recomputes the aggregate CSVs from the per-trial files in `out_dir/eval`.
pub fn report(cfg: &ExperimentConfig) -> Result<(Vec<Aggregate>, Vec<Aggregate>)> {
    let eval = cfg.out_dir.join("eval");
    let mut files: Vec<PathBuf> = fs::read_dir(&eval)
        .map_err(|e| io_err(&eval, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("trial_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!("no trial files in {}", eval.display())));
    }
    let mut reports = Vec::with_capacity(files.len());
    let mut longest: Vec<f64> = Vec::new();
    for (trial, f) in files.iter().enumerate() {
        let (t, s, c) = parse_trial_csv(f)?;
        if t.len() > longest.len() {
            longest = t;
        }
        reports.push((trial, s, c));
    }
    let reports: Vec<EvalReport> = reports
        .into_iter()
        .map(|(trial, s, c)| EvalReport {
            trial,
            seed: cfg.training.seed,
            gamma: cfg.training.gamma,
            model: String::new(),
            initial_state: Vec::new(),
            times: longest.clone(),
            state_error: s,
            constraint_error: c,
            constraint_absolute: false,
            stable_time: f64::NAN,
            stats: Default::default(),
            diverged: false,
        })
        .collect();
    let state = aggregate(&reports, |r| &r.state_error);
    let constraint = aggregate(&reports, |r| &r.constraint_error);
    let dir = cfg.out_dir.join("report");
    write(&dir.join("aggregate_state.csv"), &aggregate_csv(&state))?;
    write(&dir.join("aggregate_constraint.csv"), &aggregate_csv(&constraint))?;
    snapshot(cfg, &dir)?;
    Ok((state, constraint))
}
