//! Dataset generation, chunking, the chunk loss, AdamW and the training loop.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{constants, loss_gradient, Real, Var};
use crate::error::{Error, Result};
use crate::neural::{layer_shapes, FieldSpec, Mlp, NeuralField, TapedNet};
use crate::ode::{integrate, Solver, VectorField};
use crate::stabilization::{ConstraintManifold, StabilizedField};
use crate::systems::{sample_times, ModelKind, System};
use crate::ode::Trajectory;

/// RNG stream used for each purpose, so that adding draws to one never
/// shifts another.
pub mod streams {
    pub const DATASET: u64 = 0;
    pub const SPLIT: u64 = 1;
    pub const EPOCH_ORDER: u64 = 2;
    pub const NET_INIT: u64 = 3;
    /// Test trial `k` uses stream `TRIALS + k`.
    pub const TRIALS: u64 = 1 << 32;
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub system: System,
    pub model: ModelKind,
    pub gamma: f64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub abstol: f64,
    pub reltol: f64,
    pub trajectories: usize,
    /// Sample points per chunk.
    pub chunk_len: usize,
    pub train_fraction: f64,
    /// Overrides the system's training-trajectory length.
    pub train_horizon: Option<f64>,
    /// Epoch from which the stabilization term is switched on.
    pub stabilize_from_epoch: Option<usize>,
}

impl TrainingConfig {
    pub fn new(system: System) -> Self {
        let d = system.defaults();
        TrainingConfig {
            system,
            model: d.model,
            gamma: d.gamma,
            hidden_layers: d.hidden_layers,
            hidden_width: d.hidden_width,
            epochs: 1000,
            lr_max: d.lr_max,
            lr_min: d.lr_min,
            weight_decay: 1e-6,
            seed: 0,
            abstol: 1e-6,
            reltol: 1e-6,
            trajectories: 40,
            chunk_len: 3,
            train_fraction: 0.75,
            train_horizon: None,
            stabilize_from_epoch: None,
        }
    }

    /// The single long trajectory used for the hybrid pendulum model.
    pub fn hybrid_pendulum() -> Self {
        TrainingConfig {
            model: ModelKind::Hybrid,
            trajectories: 1,
            train_horizon: Some(60.0),
            ..Self::new(System::DoublePendulum)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be finite and ≥ 0, got {}", self.gamma));
        }
        if !(self.lr_min > 0.0 && self.lr_max >= self.lr_min && self.lr_max.is_finite()) {
            return bad(format!("need lr_max ≥ lr_min > 0, got {} and {}", self.lr_max, self.lr_min));
        }
        if self.epochs == 0 {
            return bad("epochs must be ≥ 1".into());
        }
        if self.chunk_len < 2 {
            return bad("chunk_len must be ≥ 2".into());
        }
        if self.trajectories == 0 {
            return bad("trajectories must be ≥ 1".into());
        }
        if self.hidden_width == 0 {
            return bad("hidden_width must be ≥ 1".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be finite and ≥ 0".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)".into());
        }
        if let Some(h) = self.train_horizon {
            if !(h > 0.0 && h.is_finite()) {
                return bad("train_horizon must be positive".into());
            }
        }
        self.solver().controller.validate()?;
        self.field_spec(Mlp::zeros(self.shapes()?)?).net_io()?;
        Ok(())
    }

    pub fn solver(&self) -> Solver {
        Solver::tsit5(self.abstol, self.reltol)
    }

    fn aux_width(&self) -> usize {
        self.system.aux_width()
    }

    pub fn shapes(&self) -> Result<Vec<(usize, usize)>> {
        let sys = self.system;
        let (nin, nout) = match self.model {
            ModelKind::Node => (sys.physical_dim() + self.aux_width(), sys.physical_dim()),
            ModelKind::SoNode => (sys.dim() + self.aux_width(), sys.dim() / 2),
            ModelKind::Hybrid => (sys.dim() + self.aux_width(), 1),
        };
        Ok(layer_shapes(nin, self.hidden_width, self.hidden_layers, nout))
    }

    pub fn field_spec(&self, net: Mlp) -> FieldSpec {
        FieldSpec::learned(self.system, self.model, net)
    }

    /// Key/value pairs in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "off".into());
        vec![
            ("system", self.system.name().into()),
            ("model", self.model.name().into()),
            ("gamma", self.gamma.to_string()),
            ("hidden_layers", self.hidden_layers.to_string()),
            ("hidden_width", self.hidden_width.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr_max", self.lr_max.to_string()),
            ("lr_min", self.lr_min.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("seed", self.seed.to_string()),
            ("abstol", self.abstol.to_string()),
            ("reltol", self.reltol.to_string()),
            ("trajectories", self.trajectories.to_string()),
            ("chunk_len", self.chunk_len.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("train_horizon", opt(self.train_horizon.map(|h| h.to_string()))),
            ("stabilize_from_epoch", opt(self.stabilize_from_epoch.map(|e| e.to_string()))),
        ]
    }

    pub const KEYS: [&'static str; 17] = [
        "system",
        "model",
        "gamma",
        "hidden_layers",
        "hidden_width",
        "epochs",
        "lr_max",
        "lr_min",
        "weight_decay",
        "seed",
        "abstol",
        "reltol",
        "trajectories",
        "chunk_len",
        "train_fraction",
        "train_horizon",
        "stabilize_from_epoch",
    ];

    /// Sets one key. `system` is not settable here: it fixes the defaults.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::invalid(format!("malformed value '{v}' for {key}")))
        }
        let off = |v: &str| matches!(v, "off" | "none" | "auto");
        match key {
            "system" => {
                let s: System = value.parse()?;
                if s != self.system {
                    return Err(Error::invalid("system cannot be changed after defaults are applied"));
                }
            }
            "model" => self.model = value.parse()?,
            "gamma" => self.gamma = num(key, value)?,
            "hidden_layers" => self.hidden_layers = num(key, value)?,
            "hidden_width" => self.hidden_width = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "lr_max" => self.lr_max = num(key, value)?,
            "lr_min" => self.lr_min = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "abstol" => self.abstol = num(key, value)?,
            "reltol" => self.reltol = num(key, value)?,
            "trajectories" => self.trajectories = num(key, value)?,
            "chunk_len" => self.chunk_len = num(key, value)?,
            "train_fraction" => self.train_fraction = num(key, value)?,
            "train_horizon" => self.train_horizon = if off(value) { None } else { Some(num(key, value)?) },
            "stabilize_from_epoch" => {
                self.stabilize_from_epoch = if off(value) { None } else { Some(num(key, value)?) }
            }
            _ => return Err(Error::invalid(format!("unknown key '{key}'"))),
        }
        Ok(())
    }
}

/// Ground-truth trajectories of one system with the manifold of each.
#[derive(Debug, Clone)]
pub struct TrajectorySet {
    pub system: System,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
    pub manifolds: Vec<Arc<ConstraintManifold>>,
}

impl TrajectorySet {
    pub fn from_trajectories(system: System, seed: u64, trajectories: Vec<Trajectory>) -> Result<Self> {
        let manifolds = trajectories
            .iter()
            .map(|tr| {
                let u0 = tr.state(0);
                system.manifold(u0).map(Arc::new)
            })
            .collect::<Result<_>>()?;
        Ok(TrajectorySet {
            system,
            seed,
            trajectories,
            manifolds,
        })
    }
}

/// `n_traj` ground-truth trajectories on the system's sample grid.
pub fn generate_dataset(system: System, n_traj: usize, seed: u64, horizon: Option<f64>) -> Result<TrajectorySet> {
    if n_traj == 0 {
        return Err(Error::invalid("need at least one trajectory"));
    }
    let mut rng = rng_for(seed, streams::DATASET);
    let mut trajectories = Vec::with_capacity(n_traj);
    for i in 0..n_traj {
        let u0 = system.sample_initial_state(&mut rng);
        let h = match horizon {
            Some(h) => h,
            None => system.train_horizon(&u0)?,
        };
        let times = sample_times(system.dt(), h);
        let (traj, _) = system
            .ground_truth(&u0, &times)
            .map_err(|e| Error::Integration {
                t: 0.0,
                reason: format!("trajectory {i}: {e}"),
            })?;
        trajectories.push(traj);
    }
    TrajectorySet::from_trajectories(system, seed, trajectories)
}

/// A contiguous window of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub traj: usize,
    /// Index of the first sample within the trajectory.
    pub start: usize,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkDataset {
    pub chunks: Vec<Chunk>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Non-overlapping windows of `chunk_len` points (trailing points that do
/// not fill a window are dropped), shuffled and split `ratio : 1 − ratio`.
pub fn chunk_and_split(set: &TrajectorySet, chunk_len: usize, ratio: f64, seed: u64) -> Result<ChunkDataset> {
    if chunk_len < 2 {
        return Err(Error::invalid("chunk_len must be ≥ 2"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid("split ratio must lie in (0, 1)"));
    }
    let mut chunks = Vec::new();
    for (k, tr) in set.trajectories.iter().enumerate() {
        if tr.len() < chunk_len {
            return Err(Error::invalid(format!(
                "trajectory {k} has {} points, fewer than chunk_len = {chunk_len}",
                tr.len()
            )));
        }
        for c in 0..tr.len() / chunk_len {
            let start = c * chunk_len;
            chunks.push(Chunk {
                traj: k,
                start,
                times: tr.times()[start..start + chunk_len].to_vec(),
                states: (start..start + chunk_len).map(|i| tr.state(i).to_vec()).collect(),
            });
        }
    }
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    order.shuffle(&mut rng_for(seed, streams::SPLIT));
    let n_train = ((chunks.len() as f64) * ratio).round() as usize;
    let n_train = n_train.clamp(1.min(chunks.len()), chunks.len());
    let validation = order.split_off(n_train);
    Ok(ChunkDataset {
        chunks,
        train: order,
        validation,
    })
}

/// Squared error of the integrated chunk against the data, summed over all
/// points after the first.
pub fn chunk_loss<S: Real, F: VectorField<S> + ?Sized>(field: &F, chunk: &Chunk, solver: &Solver) -> Result<S> {
    let u0: Vec<S> = constants(&chunk.states[0]);
    let (traj, _) = integrate(field, &u0, chunk.times[0], &chunk.times, solver)?;
    let mut acc = S::zero();
    for (i, target) in chunk.states.iter().enumerate().skip(1) {
        for (&p, &y) in traj.state(i).iter().zip(target) {
            let d = p - y;
            acc = acc + d * d;
        }
    }
    if !acc.is_finite() {
        return Err(Error::non_finite("chunk loss"));
    }
    Ok(acc)
}

/// Loss of `net` on one chunk, stabilized with `gamma` against `manifold`.
pub fn evaluate_chunk(
    spec: &FieldSpec,
    manifold: &Arc<ConstraintManifold>,
    gamma: f64,
    chunk: &Chunk,
    solver: &Solver,
) -> Result<f64> {
    let field = crate::neural::assemble_field(spec)?;
    if gamma > 0.0 {
        chunk_loss(&StabilizedField::new(field, manifold.clone(), gamma)?, chunk, solver)
    } else {
        chunk_loss(&field, chunk, solver)
    }
}

/// Loss and parameter gradient on one chunk.
pub fn chunk_gradient(
    spec: &FieldSpec,
    params: &[f64],
    manifold: &Arc<ConstraintManifold>,
    gamma: f64,
    chunk: &Chunk,
    solver: &Solver,
) -> Result<(f64, Vec<f64>)> {
    let shapes = spec
        .net
        .as_ref()
        .ok_or_else(|| Error::invalid("a learned field needs a network"))?
        .shapes()
        .to_vec();
    loss_gradient(
        |tape| {
            let net = TapedNet {
                tape,
                offset: 0,
                shapes: &shapes,
            };
            let field = NeuralField::with_net::<Var>(spec, Some(net))?;
            if gamma > 0.0 {
                chunk_loss(&StabilizedField::new(field, manifold.clone(), gamma)?, chunk, solver)
            } else {
                chunk_loss(&field, chunk, solver)
            }
        },
        params,
    )
}

/// First and second moment estimates of AdamW.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One AdamW update: decoupled decay `w ← w − lr·wd·w`, then the
/// bias-corrected Adam step.
pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, wd: f64) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::dims("optimizer state", params.len(), grads.len()));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::non_finite(format!("gradient component {i}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        params[i] -= lr * wd * params[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// `lr_max·(lr_min/lr_max)^{k/(epochs−1)}`.
pub fn lr_at_epoch(k: usize, epochs: usize, lr_max: f64, lr_min: f64) -> f64 {
    if epochs <= 1 || k == 0 {
        return lr_max;
    }
    if k + 1 == epochs {
        return lr_min;
    }
    lr_max * (lr_min / lr_max).powf(k as f64 / (epochs - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean loss per training chunk (diverged chunks excluded).
    pub train_loss: f64,
    /// Mean loss per validation chunk (diverged chunks excluded).
    pub val_loss: f64,
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainingConfig,
    pub net: Mlp,
    pub epoch: usize,
    pub history: Vec<EpochLog>,
}

fn effective_gamma(config: &TrainingConfig, epoch: usize) -> f64 {
    match config.stabilize_from_epoch {
        Some(e) if epoch < e => 0.0,
        _ => config.gamma,
    }
}

/// Mean chunk loss of `net` over `indices`; diverged chunks are excluded and counted.
pub fn mean_loss(
    config: &TrainingConfig,
    net: &Mlp,
    set: &TrajectorySet,
    data: &ChunkDataset,
    indices: &[usize],
    gamma: f64,
) -> Result<(f64, usize)> {
    let spec = config.field_spec(net.clone());
    let solver = config.solver();
    let mut sum = 0.0;
    let mut ok = 0usize;
    for &c in indices {
        let chunk = &data.chunks[c];
        match evaluate_chunk(&spec, &set.manifolds[chunk.traj], gamma, chunk, &solver) {
            Ok(l) => {
                sum += l;
                ok += 1;
            }
            Err(e) if is_divergence(&e) => {}
            Err(e) => return Err(e),
        }
    }
    let mean = if ok > 0 { sum / ok as f64 } else { f64::INFINITY };
    Ok((mean, indices.len() - ok))
}

fn is_divergence(e: &Error) -> bool {
    matches!(
        e,
        Error::Integration { .. } | Error::NonFinite { .. } | Error::SingularConfiguration { .. } | Error::Field(_)
    )
}

/// Trains on the given data. `on_epoch` sees each epoch's log as it completes.
pub fn train_on(
    config: &TrainingConfig,
    set: &TrajectorySet,
    data: &ChunkDataset,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Checkpoint> {
    config.validate()?;
    if set.system != config.system {
        return Err(Error::invalid(format!(
            "dataset is for {} but the config trains {}",
            set.system, config.system
        )));
    }
    if data.train.is_empty() {
        return Err(Error::invalid("no training chunks"));
    }
    let mut net = Mlp::init_with(config.shapes()?, &mut rng_for(config.seed, streams::NET_INIT))?;
    let mut params = net.params().to_vec();
    let mut adam = AdamState::new(params.len());
    let mut order_rng = rng_for(config.seed, streams::EPOCH_ORDER);
    let solver = config.solver();
    let mut order = data.train.clone();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = lr_at_epoch(epoch, config.epochs, config.lr_max, config.lr_min);
        let gamma = effective_gamma(config, epoch);
        order.shuffle(&mut order_rng);
        let mut diverged = 0usize;
        let mut sum = 0.0;
        for &c in &order {
            let chunk = &data.chunks[c];
            net.set_params(&params)?;
            let spec = config.field_spec(net.clone());
            match chunk_gradient(&spec, &params, &set.manifolds[chunk.traj], gamma, chunk, &solver) {
                Ok((loss, grad)) => {
                    sum += loss;
                    adamw_step(&mut params, &grad, &mut adam, lr, config.weight_decay)?;
                }
                Err(e) if is_divergence(&e) => diverged += 1,
                Err(e) => return Err(e),
            }
        }
        if 2 * diverged > order.len() {
            return Err(Error::TrainingAborted(format!(
                "epoch {epoch}: {diverged} of {} training chunks diverged",
                order.len()
            )));
        }
        net.set_params(&params)?;
        let train_loss = sum / (order.len() - diverged) as f64;
        let (val_loss, _) = if data.validation.is_empty() {
            (f64::NAN, 0)
        } else {
            mean_loss(config, &net, set, data, &data.validation, gamma)?
        };
        let log = EpochLog {
            epoch,
            train_loss,
            val_loss,
            diverged,
        };
        on_epoch(&log);
        history.push(log);
    }
    Ok(Checkpoint {
        config: config.clone(),
        net,
        epoch: config.epochs,
        history,
    })
}

/// Generates the dataset described by `config` and trains on it.
pub fn train(config: &TrainingConfig) -> Result<Checkpoint> {
    config.validate()?;
    let set = generate_dataset(config.system, config.trajectories, config.seed, config.train_horizon)?;
    let data = chunk_and_split(&set, config.chunk_len, config.train_fraction, config.seed)?;
    train_on(config, &set, &data, |_| {})
}

impl Checkpoint {
    /// Text form: config lines, layer shapes, one parameter per line with
    /// 17 significant digits, then the loss history as CSV.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# snde checkpoint\n");
        for (k, v) in self.config.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        let _ = writeln!(s, "epoch={}", self.epoch);
        for &(i, o) in self.net.shapes() {
            let _ = writeln!(s, "layer={i},{o}");
        }
        let _ = writeln!(s, "params={}", self.net.n_params());
        for p in self.net.params() {
            let _ = writeln!(s, "{p:.16e}");
        }
        s.push_str("history\nepoch,train_loss,val_loss,diverged\n");
        for h in &self.history {
            let _ = writeln!(s, "{},{:.16e},{:.16e},{}", h.epoch, h.train_loss, h.val_loss, h.diverged);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse { line, msg };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut config: Option<TrainingConfig> = None;
        let mut epoch = None;
        let mut shapes = Vec::new();
        let mut n_params = None;
        let mut pending: Vec<(usize, String, String)> = Vec::new();
        for (ln, line) in lines.by_ref() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| perr(ln, format!("expected key=value, found '{line}'")))?;
            match k {
                "system" => config = Some(TrainingConfig::new(v.parse().map_err(|e: Error| perr(ln, e.to_string()))?)),
                "epoch" => epoch = Some(v.parse::<usize>().map_err(|_| perr(ln, format!("bad epoch '{v}'")))?),
                "layer" => {
                    let (a, b) = v
                        .split_once(',')
                        .ok_or_else(|| perr(ln, format!("bad layer shape '{v}'")))?;
                    let a = a.parse().map_err(|_| perr(ln, format!("bad layer shape '{v}'")))?;
                    let b = b.parse().map_err(|_| perr(ln, format!("bad layer shape '{v}'")))?;
                    shapes.push((a, b));
                }
                "params" => {
                    n_params = Some(v.parse::<usize>().map_err(|_| perr(ln, format!("bad count '{v}'")))?);
                    break;
                }
                _ => pending.push((ln, k.to_string(), v.to_string())),
            }
        }
        let mut config = config.ok_or_else(|| perr(0, "missing system".into()))?;
        for (ln, k, v) in pending {
            config.set(&k, &v).map_err(|e| perr(ln, e.to_string()))?;
        }
        let n = n_params.ok_or_else(|| perr(0, "missing params section".into()))?;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, line) = lines.next().ok_or_else(|| perr(0, "truncated parameter list".into()))?;
            params.push(line.parse::<f64>().map_err(|_| perr(ln, format!("bad parameter '{line}'")))?);
        }
        let net = Mlp::new(shapes, params)?;
        let mut history = Vec::new();
        let mut in_history = false;
        for (ln, line) in lines {
            if line.is_empty() {
                continue;
            }
            if !in_history {
                if line == "history" {
                    in_history = true;
                    continue;
                }
                return Err(perr(ln, format!("unexpected line '{line}'")));
            }
            if line.starts_with("epoch,") {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(perr(ln, format!("expected 4 history fields, found {}", f.len())));
            }
            let bad = || perr(ln, format!("bad history row '{line}'"));
            history.push(EpochLog {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_loss: f[1].parse().map_err(|_| bad())?,
                val_loss: f[2].parse().map_err(|_| bad())?,
                diverged: f[3].parse().map_err(|_| bad())?,
            });
        }
        let epoch = epoch.ok_or_else(|| perr(0, "missing epoch".into()))?;
        if history.len() != epoch {
            return Err(perr(0, format!("history has {} rows for {epoch} epochs", history.len())));
        }
        if config.shapes()? != net.shapes() {
            return Err(Error::invalid("checkpoint layer shapes do not match its config"));
        }
        Ok(Checkpoint {
            config,
            net,
            epoch,
            history,
        })
    }
}
