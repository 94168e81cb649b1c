//! The five benchmark systems: ground-truth dynamics, conserved quantities,
//! initial-condition samplers and per-system defaults.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::ode::{integrate, Solver, SolverStats, Trajectory, VectorField};
use crate::stabilization::{cholesky_solve, condition_number, ConstraintKind, ConstraintManifold, MAX_CONDITION};

pub const RIGID_BODY_INERTIA: [f64; 3] = [2.0, 1.0, 2.0 / 3.0];
pub const DC_CAPACITANCE_1: f64 = 0.1;
pub const DC_CAPACITANCE_2: f64 = 0.2;
pub const DC_INDUCTANCE_3: f64 = 0.5;
/// Half the switching period.
pub const DC_TOGGLE_INTERVAL: f64 = 1.5;
pub const PENDULUM_MASS: [f64; 2] = [1.0, 1.0];
pub const PENDULUM_LENGTH: [f64; 2] = [1.0, 1.0];
pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum System {
    TwoBody,
    RigidBody,
    DcConverter,
    RobotArm,
    DoublePendulum,
}

/// How the learned field is structured for a system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// `u̇ = net(u, aux(t))`.
    Node,
    /// `(q, v)˙ = (v, net(q, v, aux(t)))`.
    SoNode,
    /// Double pendulum with the first arm's acceleration known.
    Hybrid,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Node => "node",
            ModelKind::SoNode => "so-node",
            ModelKind::Hybrid => "hybrid",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "node" => Ok(ModelKind::Node),
            "so-node" => Ok(ModelKind::SoNode),
            "hybrid" => Ok(ModelKind::Hybrid),
            _ => Err(Error::invalid(format!("unknown model kind '{s}' (node, so-node, hybrid)"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameter defaults for one system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Defaults {
    pub gamma: f64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub model: ModelKind,
    pub eval_horizon: f64,
}

impl System {
    pub const ALL: [System; 5] = [
        System::TwoBody,
        System::RigidBody,
        System::DcConverter,
        System::RobotArm,
        System::DoublePendulum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            System::TwoBody => "two_body",
            System::RigidBody => "rigid_body",
            System::DcConverter => "dc_converter",
            System::RobotArm => "robot_arm",
            System::DoublePendulum => "double_pendulum",
        }
    }

    /// State dimension, including the clock coordinate of the robot arm.
    pub fn dim(self) -> usize {
        match self {
            System::RigidBody | System::DcConverter => 3,
            _ => 4,
        }
    }

    /// Coordinates that carry physical state (the robot arm's clock is not one).
    pub fn physical_dim(self) -> usize {
        match self {
            System::RobotArm => 3,
            s => s.dim(),
        }
    }

    pub fn dt(self) -> f64 {
        match self {
            System::DoublePendulum => 0.05,
            _ => 0.1,
        }
    }

    /// Length of a training trajectory starting at `u0`.
    pub fn train_horizon(self, u0: &[f64]) -> Result<f64> {
        match self {
            System::TwoBody => kepler_period(u0),
            System::RigidBody => Ok(15.0),
            System::DcConverter => Ok(10.0),
            System::RobotArm => Ok(5.0),
            System::DoublePendulum => Ok(10.0),
        }
    }

    pub fn defaults(self) -> Defaults {
        let (gamma, hidden_width, lr_max, lr_min, model, eval_horizon) = match self {
            System::TwoBody => (8.0, 128, 1e-3, 1e-5, ModelKind::SoNode, 200.0),
            System::RigidBody => (32.0, 64, 1e-4, 1e-5, ModelKind::Node, 1600.0),
            System::DcConverter => (8.0, 64, 5e-3, 1e-5, ModelKind::Node, 160.0),
            System::RobotArm => (16.0, 128, 1e-3, 1e-5, ModelKind::Node, 100.0),
            System::DoublePendulum => (16.0, 128, 1e-2, 1e-4, ModelKind::SoNode, 20.0),
        };
        Defaults {
            gamma,
            hidden_width,
            hidden_layers: 2,
            lr_max,
            lr_min,
            model,
            eval_horizon,
        }
    }

    pub fn parameters(self) -> Vec<(&'static str, f64)> {
        match self {
            System::TwoBody => vec![],
            System::RigidBody => vec![
                ("I1", RIGID_BODY_INERTIA[0]),
                ("I2", RIGID_BODY_INERTIA[1]),
                ("I3", RIGID_BODY_INERTIA[2]),
            ],
            System::DcConverter => vec![
                ("C1", DC_CAPACITANCE_1),
                ("C2", DC_CAPACITANCE_2),
                ("L3", DC_INDUCTANCE_3),
                ("toggle_interval", DC_TOGGLE_INTERVAL),
            ],
            System::RobotArm => vec![("segment_length", 1.0)],
            System::DoublePendulum => vec![
                ("m1", PENDULUM_MASS[0]),
                ("m2", PENDULUM_MASS[1]),
                ("l1", PENDULUM_LENGTH[0]),
                ("l2", PENDULUM_LENGTH[1]),
                ("g", GRAVITY),
            ],
        }
    }

    pub fn invariant(self) -> Invariant {
        match self {
            System::TwoBody => Invariant::AngularMomentum,
            System::RigidBody => Invariant::Casimir,
            System::DcConverter => Invariant::CircuitEnergy,
            System::RobotArm => Invariant::EndpointPath,
            System::DoublePendulum => Invariant::PendulumEnergy,
        }
    }

    /// The manifold through `u0` (reference constants captured from `u0`).
    pub fn manifold(self, u0: &[f64]) -> Result<ConstraintManifold> {
        if u0.len() != self.dim() {
            return Err(Error::dims(format!("{} initial state", self.name()), self.dim(), u0.len()));
        }
        let mask = match self {
            System::RobotArm => Some(vec![true, true, true, false]),
            _ => None,
        };
        ConstraintManifold::through(ConstraintKind::Invariant(self.invariant()), u0, mask)
    }

    pub fn sample_initial_state<R: Rng + ?Sized>(self, rng: &mut R) -> Vec<f64> {
        match self {
            System::TwoBody => {
                let e = rng.gen_range(0.5..0.7);
                two_body_initial_state(e)
            }
            System::RigidBody => {
                let phi: f64 = rng.gen_range(0.5..1.5);
                vec![phi.cos(), 0.0, phi.sin()]
            }
            System::DcConverter => (0..3).map(|_| rng.gen_range(0.0..1.0)).collect(),
            System::RobotArm => {
                let th: f64 = rng.gen_range(PI / 8.0..PI / 4.0);
                vec![th, -th, th, 0.0]
            }
            System::DoublePendulum => {
                let phi: f64 = rng.gen_range(PI / 4.0..3.0 * PI / 4.0);
                vec![phi, phi, 0.0, 0.0]
            }
        }
    }

    /// Width of the auxiliary input handed to the network.
    pub fn aux_width(self) -> usize {
        match self {
            System::DcConverter => 1,
            System::RobotArm => 2,
            _ => 0,
        }
    }

    /// Auxiliary input at time `t`: the switch state for the converter, the
    /// path velocity `ṗ(t)` for the robot arm.
    pub fn aux(self, t: f64) -> Vec<f64> {
        match self {
            System::DcConverter => vec![dc_switch(t)],
            System::RobotArm => path_velocity(t).to_vec(),
            _ => vec![],
        }
    }

    /// Discontinuities of the dynamics in the open interval `(t0, t1)`.
    pub fn breakpoints(self, t0: f64, t1: f64) -> Vec<f64> {
        match self {
            System::DcConverter => dc_toggle_times(t0, t1),
            _ => vec![],
        }
    }

    /// Coordinates that are angles (wrapped when binning).
    pub fn angular(self) -> Vec<bool> {
        match self {
            System::DoublePendulum => vec![true, true, false, false],
            System::RobotArm => vec![true, true, true, false],
            s => vec![false; s.dim()],
        }
    }

    pub fn is_second_order(self) -> bool {
        matches!(self, System::TwoBody | System::DoublePendulum)
    }

    pub fn truth(self) -> GroundTruth {
        GroundTruth(self)
    }

    /// High-accuracy reference trajectory sampled at `times`.
    pub fn ground_truth(self, u0: &[f64], times: &[f64]) -> Result<(Trajectory, SolverStats)> {
        let t0 = times.first().copied().unwrap_or(0.0);
        integrate(&self.truth(), u0, t0, times, &Solver::ground_truth()).map_err(Error::from)
    }
}

impl FromStr for System {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        System::ALL
            .into_iter()
            .find(|sys| sys.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = System::ALL.iter().map(|s| s.name()).collect();
                Error::invalid(format!("unknown system '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Conserved quantities (or, for the robot arm, the path residual) whose
/// level sets are the constraint manifolds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Invariant {
    /// `L = xẏ − yẋ`.
    AngularMomentum,
    /// `y₁² + y₂² + y₃²`.
    Casimir,
    /// `C₁v₁² + C₂v₂² + L₃i₃²`.
    CircuitEnergy,
    /// `e(θ) + (sin(2πτ)/2π, 0)`; equals `e₀` on the prescribed path.
    EndpointPath,
    /// Total mechanical energy of the double pendulum.
    PendulumEnergy,
}

impl Invariant {
    pub fn n_constraints(self) -> usize {
        match self {
            Invariant::EndpointPath => 2,
            _ => 1,
        }
    }

    pub fn quantity<S: Real>(self, u: &[S]) -> Vec<S> {
        match self {
            Invariant::AngularMomentum => vec![u[0] * u[3] - u[1] * u[2]],
            Invariant::Casimir => vec![u[0] * u[0] + u[1] * u[1] + u[2] * u[2]],
            Invariant::CircuitEnergy => vec![S::lin_comb(
                S::zero(),
                &[
                    (DC_CAPACITANCE_1, u[0] * u[0]),
                    (DC_CAPACITANCE_2, u[1] * u[1]),
                    (DC_INDUCTANCE_3, u[2] * u[2]),
                ],
            )],
            Invariant::EndpointPath => {
                let [ex, ey] = endpoint(&u[..3]);
                let shift = (u[3] * (2.0 * PI)).sin() / (2.0 * PI);
                vec![ex + shift, ey]
            }
            Invariant::PendulumEnergy => vec![pendulum_energy(u)],
        }
    }
}

/// `(1 − e, 0, 0, √((1 − e)/(1 + e)))`.
pub fn two_body_initial_state(e: f64) -> Vec<f64> {
    vec![1.0 - e, 0.0, 0.0, ((1.0 - e) / (1.0 + e)).sqrt()]
}

/// Orbital period from the vis-viva relation: `a = (2/r₀ − v₀²)⁻¹`,
/// `T = 2π a^{3/2}`.
pub fn kepler_period(u0: &[f64]) -> Result<f64> {
    if u0.len() != 4 {
        return Err(Error::dims("two-body state", 4, u0.len()));
    }
    let r0 = u0[0].hypot(u0[1]);
    let v2 = u0[2] * u0[2] + u0[3] * u0[3];
    let inv_a = 2.0 / r0 - v2;
    if !(inv_a > 0.0) || !inv_a.is_finite() {
        return Err(Error::invalid("two-body initial state is not on a bound orbit"));
    }
    Ok(2.0 * PI * (1.0 / inv_a).powf(1.5))
}

/// Sample grid `{0, Δt, 2Δt, …} ∩ [0, horizon]`.
pub fn sample_times(dt: f64, horizon: f64) -> Vec<f64> {
    let n = (horizon / dt + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 * dt).collect()
}

/// Switch state `s(t) ∈ {0, 1}`: 0 on `[0, 1.5)`, toggling at every
/// multiple of 1.5 s.
pub fn dc_switch(t: f64) -> f64 {
    if !(t >= DC_TOGGLE_INTERVAL) {
        return 0.0;
    }
    let mut n = (t / DC_TOGGLE_INTERVAL).floor() as u64;
    while (n + 1) as f64 * DC_TOGGLE_INTERVAL <= t {
        n += 1;
    }
    while n > 0 && n as f64 * DC_TOGGLE_INTERVAL > t {
        n -= 1;
    }
    (n % 2) as f64
}

/// Toggle times strictly inside `(t0, t1)`.
pub fn dc_toggle_times(t0: f64, t1: f64) -> Vec<f64> {
    let mut k = ((t0 / DC_TOGGLE_INTERVAL).floor().max(0.0)) as u64;
    let mut out = Vec::new();
    loop {
        let t = k as f64 * DC_TOGGLE_INTERVAL;
        if t >= t1 {
            break;
        }
        if t > t0 && k > 0 {
            out.push(t);
        }
        k += 1;
    }
    out
}

/// Endpoint of the three-segment arm with unit segments.
pub fn endpoint<S: Real>(theta: &[S]) -> [S; 2] {
    let x = theta[0].cos() + theta[1].cos() + theta[2].cos();
    let y = theta[0].sin() + theta[1].sin() + theta[2].sin();
    [x, y]
}

/// `ṗ(t) = (−cos 2πt, 0)`.
pub fn path_velocity(t: f64) -> [f64; 2] {
    [-(2.0 * PI * t).cos(), 0.0]
}

/// `E = ½m₁l₁²ω₁² + ½m₂(l₁²ω₁² + l₂²ω₂² + 2l₁l₂ω₁ω₂cos(θ₁−θ₂)) − (m₁+m₂)gl₁cosθ₁ − m₂gl₂cosθ₂`.
pub fn pendulum_energy<S: Real>(u: &[S]) -> S {
    let [m1, m2] = PENDULUM_MASS;
    let [l1, l2] = PENDULUM_LENGTH;
    let (th1, th2, w1, w2) = (u[0], u[1], u[2], u[3]);
    S::lin_comb(
        S::zero(),
        &[
            (0.5 * (m1 + m2) * l1 * l1, w1 * w1),
            (0.5 * m2 * l2 * l2, w2 * w2),
            (m2 * l1 * l2, w1 * w2 * (th1 - th2).cos()),
            (-(m1 + m2) * GRAVITY * l1, th1.cos()),
            (-m2 * GRAVITY * l2, th2.cos()),
        ],
    )
}

/// Angular accelerations `(θ̈₁, θ̈₂)` of the frictionless double pendulum.
pub fn pendulum_accelerations<S: Real>(u: &[S]) -> [S; 2] {
    let [m1, m2] = PENDULUM_MASS;
    let [l1, l2] = PENDULUM_LENGTH;
    let g = GRAVITY;
    let (th1, th2, w1, w2) = (u[0], u[1], u[2], u[3]);
    let delta = th1 - th2;
    let (sd, cd) = (delta.sin(), delta.cos());
    let den = ((delta * 2.0).cos() * -m2) + (2.0 * m1 + m2);
    let num1 = S::lin_comb(
        S::zero(),
        &[
            (-g * (2.0 * m1 + m2), th1.sin()),
            (-m2 * g, (th1 - th2 * 2.0).sin()),
            (-2.0 * m2, sd * (w2 * w2 * l2 + w1 * w1 * cd * l1)),
        ],
    );
    let inner = S::lin_comb(
        S::zero(),
        &[
            (l1 * (m1 + m2), w1 * w1),
            (g * (m1 + m2), th1.cos()),
            (l2 * m2, w2 * w2 * cd),
        ],
    );
    let a1 = num1 / (den * l1);
    let a2 = sd * inner * 2.0 / (den * l2);
    [a1, a2]
}

/// θ̈₁ alone, the known part of the hybrid pendulum model.
pub fn pendulum_first_acceleration<S: Real>(u: &[S]) -> S {
    pendulum_accelerations(u)[0]
}

/// The true dynamics of a system as a vector field.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruth(pub System);

impl<S: Real> VectorField<S> for GroundTruth {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn eval(&self, t: f64, u: &[S]) -> Result<Vec<S>> {
        let sys = self.0;
        if u.len() != sys.dim() {
            return Err(Error::dims(format!("{} state", sys.name()), sys.dim(), u.len()));
        }
        match sys {
            System::TwoBody => {
                let r2 = u[0] * u[0] + u[1] * u[1];
                if !(r2.value() > 0.0) {
                    return Err(Error::Field("two-body collision at r = 0".into()));
                }
                let inv_r3 = r2.powf(-1.5);
                Ok(vec![u[2], u[3], -(u[0] * inv_r3), -(u[1] * inv_r3)])
            }
            System::RigidBody => {
                let [i1, i2, i3] = RIGID_BODY_INERTIA;
                Ok(vec![
                    u[1] * u[2] * (1.0 / i3 - 1.0 / i2),
                    u[0] * u[2] * (1.0 / i1 - 1.0 / i3),
                    u[0] * u[1] * (1.0 / i2 - 1.0 / i1),
                ])
            }
            System::DcConverter => {
                let s = dc_switch(t);
                Ok(vec![
                    u[2] * ((1.0 - s) / DC_CAPACITANCE_1),
                    u[2] * (s / DC_CAPACITANCE_2),
                    S::lin_comb(S::zero(), &[(-(1.0 - s) / DC_INDUCTANCE_3, u[0]), (-s / DC_INDUCTANCE_3, u[1])]),
                ])
            }
            System::RobotArm => {
                // rows of e'(θ)
                let jx: Vec<S> = u[..3].iter().map(|&th| -th.sin()).collect();
                let jy: Vec<S> = u[..3].iter().map(|&th| th.cos()).collect();
                let dot = |a: &[S], b: &[S]| a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y);
                let gram = vec![vec![dot(&jx, &jx), dot(&jx, &jy)], vec![dot(&jy, &jx), dot(&jy, &jy)]];
                let vals: Vec<Vec<f64>> = gram.iter().map(|r| r.iter().map(|x| x.value()).collect()).collect();
                let condition = condition_number(&vals);
                if !(condition <= MAX_CONDITION) {
                    return Err(Error::SingularConfiguration {
                        condition,
                        limit: MAX_CONDITION,
                    });
                }
                let tau = u[3];
                let pdot = [-(tau * (2.0 * PI)).cos(), S::zero()];
                let y = cholesky_solve(&gram, &pdot)?;
                let mut out: Vec<S> = (0..3).map(|j| jx[j] * y[0] + jy[j] * y[1]).collect();
                out.push(S::cst(1.0));
                Ok(out)
            }
            System::DoublePendulum => {
                let [a1, a2] = pendulum_accelerations(u);
                Ok(vec![u[2], u[3], a1, a2])
            }
        }
    }

    fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        self.0.breakpoints(t0, t1)
    }
}
