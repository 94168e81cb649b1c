//! Experiment configuration: flat `key=value` lines with `#` comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use snde_core::systems::{ModelKind, System};
use snde_core::training::TrainingConfig;
use snde_core::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub training: TrainingConfig,
    pub out_dir: PathBuf,
    pub eval_horizon: f64,
    pub test_trials: usize,
    pub gamma_sweep: Vec<f64>,
    pub measure_bins: usize,
    pub measure_burn_in: f64,
    pub measure_horizon: f64,
    pub measure_trials: usize,
}

pub const DEFAULT_MEASURE_BINS: usize = 20;

const EXTRA_KEYS: [&str; 8] = [
    "out_dir",
    "eval_horizon",
    "test_trials",
    "gamma_sweep",
    "measure_bins",
    "measure_burn_in",
    "measure_horizon",
    "measure_trials",
];

impl ExperimentConfig {
    pub fn new(system: System) -> Self {
        ExperimentConfig {
            training: TrainingConfig::new(system),
            out_dir: PathBuf::from("out"),
            eval_horizon: system.defaults().eval_horizon,
            test_trials: 100,
            gamma_sweep: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
            measure_bins: DEFAULT_MEASURE_BINS,
            measure_burn_in: 10.0,
            measure_horizon: 200.0,
            measure_trials: 5,
        }
    }

    pub fn system(&self) -> System {
        self.training.system
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        if !(self.eval_horizon > 0.0 && self.eval_horizon.is_finite()) {
            return Err(Error::invalid("eval_horizon must be positive"));
        }
        if self.test_trials == 0 {
            return Err(Error::invalid("test_trials must be ≥ 1"));
        }
        if self.gamma_sweep.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(Error::invalid("gamma_sweep values must be finite and ≥ 0"));
        }
        if self.measure_bins == 0 || self.measure_trials == 0 {
            return Err(Error::invalid("measure_bins and measure_trials must be ≥ 1"));
        }
        if !(self.measure_burn_in >= 0.0 && self.measure_horizon > self.measure_burn_in) {
            return Err(Error::invalid("measure_horizon must exceed measure_burn_in"));
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::invalid(format!("malformed value '{v}' for {key}")))
        }
        match key {
            "out_dir" => self.out_dir = PathBuf::from(value),
            "eval_horizon" => self.eval_horizon = num(key, value)?,
            "test_trials" => self.test_trials = num(key, value)?,
            "gamma_sweep" => {
                self.gamma_sweep = value
                    .split(',')
                    .map(|g| num(key, g.trim()))
                    .collect::<Result<_>>()?
            }
            "measure_bins" => self.measure_bins = num(key, value)?,
            "measure_burn_in" => self.measure_burn_in = num(key, value)?,
            "measure_horizon" => self.measure_horizon = num(key, value)?,
            "measure_trials" => self.measure_trials = num(key, value)?,
            _ => self.training.set(key, value)?,
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut e = self.training.entries();
        let sweep: Vec<String> = self.gamma_sweep.iter().map(|g| g.to_string()).collect();
        e.extend([
            ("out_dir", self.out_dir.display().to_string()),
            ("eval_horizon", self.eval_horizon.to_string()),
            ("test_trials", self.test_trials.to_string()),
            ("gamma_sweep", sweep.join(",")),
            ("measure_bins", self.measure_bins.to_string()),
            ("measure_burn_in", self.measure_burn_in.to_string()),
            ("measure_horizon", self.measure_horizon.to_string()),
            ("measure_trials", self.measure_trials.to_string()),
        ]);
        e
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Parses config text. `system` is required; every other key falls back
    /// to that system's defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: ln,
                msg: format!("expected key=value, found '{line}'"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !TrainingConfig::KEYS.contains(&k) && !EXTRA_KEYS.contains(&k) {
                return Err(Error::Parse {
                    line: ln,
                    msg: format!("unknown key '{k}'"),
                });
            }
            if let Some(prev) = seen.insert(k.to_string(), ln) {
                return Err(Error::Parse {
                    line: ln,
                    msg: format!("key '{k}' already set on line {prev}"),
                });
            }
            pairs.push((ln, k.to_string(), v.to_string()));
        }
        let (sys_line, _, sys_value) = pairs
            .iter()
            .find(|(_, k, _)| k == "system")
            .ok_or_else(|| Error::Parse {
                line: 0,
                msg: "missing required key 'system'".into(),
            })?;
        let system: System = sys_value.parse().map_err(|e: Error| Error::Parse {
            line: *sys_line,
            msg: e.to_string(),
        })?;
        let mut cfg = ExperimentConfig::new(system);
        // the hybrid pendulum model trains on one long trajectory
        let hybrid = pairs.iter().any(|(_, k, v)| k == "model" && v == ModelKind::Hybrid.name());
        if hybrid {
            let preset = TrainingConfig::hybrid_pendulum();
            cfg.training.trajectories = preset.trajectories;
            cfg.training.train_horizon = preset.train_horizon;
        }
        for (ln, k, v) in &pairs {
            cfg.set(k, v).map_err(|e| Error::Parse {
                line: *ln,
                msg: match e {
                    Error::InvalidArgument(m) => m,
                    other => other.to_string(),
                },
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}
