//! ReLU multilayer perceptrons and the vector fields built from them.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Real, Tape, Var};
use crate::error::{Error, Result};
use crate::ode::VectorField;
use crate::systems::{pendulum_first_acceleration, ModelKind, System};

/// A dense ReLU network stored as one flat parameter vector.
///
/// Layer `(in, out)` occupies `in·out` weights (row-major, one row per
/// output) followed by `out` biases. Hidden layers use ReLU, the output
/// layer is affine.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    shapes: Vec<(usize, usize)>,
    params: Vec<f64>,
}

/// `[(input, width), (width, width)…, (width, output)]` with `hidden` hidden layers.
pub fn layer_shapes(input: usize, width: usize, hidden: usize, output: usize) -> Vec<(usize, usize)> {
    if hidden == 0 {
        return vec![(input, output)];
    }
    let mut shapes = vec![(input, width)];
    shapes.extend(std::iter::repeat((width, width)).take(hidden - 1));
    shapes.push((width, output));
    shapes
}

pub fn param_count(shapes: &[(usize, usize)]) -> usize {
    shapes.iter().map(|&(i, o)| i * o + o).sum()
}

fn check_shapes(shapes: &[(usize, usize)]) -> Result<()> {
    if shapes.is_empty() {
        return Err(Error::invalid("network needs at least one layer"));
    }
    if shapes.iter().any(|&(i, o)| i == 0 || o == 0) {
        return Err(Error::invalid("network layers must have nonzero width"));
    }
    for (l, w) in shapes.windows(2).enumerate() {
        if w[0].1 != w[1].0 {
            return Err(Error::invalid(format!(
                "layer {l} outputs {} values but layer {} expects {}",
                w[0].1,
                l + 1,
                w[1].0
            )));
        }
    }
    Ok(())
}

impl Mlp {
    pub fn new(shapes: Vec<(usize, usize)>, params: Vec<f64>) -> Result<Self> {
        check_shapes(&shapes)?;
        let n = param_count(&shapes);
        if params.len() != n {
            return Err(Error::dims("network parameters", n, params.len()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::non_finite("network parameters"));
        }
        Ok(Mlp { shapes, params })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(shapes: Vec<(usize, usize)>, seed: u64) -> Result<Self> {
        Self::init_with(shapes, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn init_with<R: Rng + ?Sized>(shapes: Vec<(usize, usize)>, rng: &mut R) -> Result<Self> {
        check_shapes(&shapes)?;
        let mut params = Vec::with_capacity(param_count(&shapes));
        for &(nin, nout) in &shapes {
            let limit = (6.0 / (nin + nout) as f64).sqrt();
            params.extend((0..nin * nout).map(|_| rng.gen_range(-limit..=limit)));
            params.extend(std::iter::repeat(0.0).take(nout));
        }
        Ok(Mlp { shapes, params })
    }

    pub fn zeros(shapes: Vec<(usize, usize)>) -> Result<Self> {
        let n = param_count(&shapes);
        Self::new(shapes, vec![0.0; n])
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Replaces the parameters, keeping the shapes.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::dims("network parameters", self.params.len(), params.len()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::non_finite("network parameters"));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn n_in(&self) -> usize {
        self.shapes[0].0
    }

    pub fn n_out(&self) -> usize {
        self.shapes[self.shapes.len() - 1].1
    }

    pub fn forward<S: Real>(&self, x: &[S]) -> Result<Vec<S>> {
        if x.len() != self.n_in() {
            return Err(Error::dims("network input", self.n_in(), x.len()));
        }
        let mut x = x.to_vec();
        let mut off = 0;
        let last = self.shapes.len() - 1;
        for (l, &(nin, nout)) in self.shapes.iter().enumerate() {
            let w = &self.params[off..off + nin * nout];
            let b = &self.params[off + nin * nout..off + nin * nout + nout];
            let y: Vec<S> = (0..nout)
                .map(|i| {
                    let row = &w[i * nin..(i + 1) * nin];
                    let mut s = S::zero();
                    for (&wij, &xj) in row.iter().zip(&x) {
                        s = s + xj * wij;
                    }
                    let z = s + b[i];
                    if l < last {
                        z.relu()
                    } else {
                        z
                    }
                })
                .collect();
            off += nin * nout + nout;
            x = y;
        }
        Ok(x)
    }
}

/// Anything that maps a network input to a network output.
pub trait NetEval<S> {
    fn n_in(&self) -> usize;
    fn n_out(&self) -> usize;
    fn eval(&self, x: &[S]) -> Result<Vec<S>>;
}

impl<S: Real> NetEval<S> for Mlp {
    fn n_in(&self) -> usize {
        Mlp::n_in(self)
    }
    fn n_out(&self) -> usize {
        Mlp::n_out(self)
    }
    fn eval(&self, x: &[S]) -> Result<Vec<S>> {
        self.forward(x)
    }
}

/// A network whose parameters live on a tape, so its outputs are
/// differentiable with respect to them.
#[derive(Clone, Copy)]
pub struct TapedNet<'t, 's> {
    pub tape: &'t Tape,
    pub offset: usize,
    pub shapes: &'s [(usize, usize)],
}

impl<'t, 's> NetEval<Var<'t>> for TapedNet<'t, 's> {
    fn n_in(&self) -> usize {
        self.shapes[0].0
    }
    fn n_out(&self) -> usize {
        self.shapes[self.shapes.len() - 1].1
    }
    fn eval(&self, x: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        if x.len() != NetEval::<Var<'t>>::n_in(self) {
            return Err(Error::dims("network input", NetEval::<Var<'t>>::n_in(self), x.len()));
        }
        Ok(self.tape.dense_block(self.offset, self.shapes, x))
    }
}

/// Structure of an assembled field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    GroundTruth,
    Neural,
    SecondOrder,
    Hybrid,
}

impl From<ModelKind> for FieldKind {
    fn from(k: ModelKind) -> Self {
        match k {
            ModelKind::Node => FieldKind::Neural,
            ModelKind::SoNode => FieldKind::SecondOrder,
            ModelKind::Hybrid => FieldKind::Hybrid,
        }
    }
}

/// Time-dependent side input fed to the network next to the state.
#[derive(Clone)]
pub struct AuxInput {
    width: usize,
    map: Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>,
}

impl AuxInput {
    pub fn new(width: usize, map: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        AuxInput {
            width,
            map: Arc::new(map),
        }
    }

    /// The system's own auxiliary signal (switch state, path velocity).
    pub fn of_system(system: System) -> Self {
        Self::new(system.aux_width(), move |t| system.aux(t))
    }

    pub fn none() -> Self {
        Self::new(0, |_| Vec::new())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn at(&self, t: f64) -> Result<Vec<f64>> {
        let v = (self.map)(t);
        if v.len() != self.width {
            return Err(Error::dims(format!("auxiliary input at t = {t}"), self.width, v.len()));
        }
        Ok(v)
    }
}

impl fmt::Debug for AuxInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AuxInput(width {})", self.width)
    }
}

/// Description of a vector field for one of the benchmark systems.
#[derive(Debug, Clone)]
pub struct FieldSpec {
    pub system: System,
    pub kind: FieldKind,
    pub net: Option<Mlp>,
    pub aux: AuxInput,
}

impl FieldSpec {
    pub fn ground_truth(system: System) -> Self {
        FieldSpec {
            system,
            kind: FieldKind::GroundTruth,
            net: None,
            aux: AuxInput::none(),
        }
    }

    pub fn learned(system: System, kind: ModelKind, net: Mlp) -> Self {
        FieldSpec {
            system,
            kind: kind.into(),
            net: Some(net),
            aux: AuxInput::of_system(system),
        }
    }

    /// `(input, output)` widths the network must have.
    pub fn net_io(&self) -> Result<(usize, usize)> {
        let sys = self.system;
        let aux = self.aux.width();
        match self.kind {
            FieldKind::GroundTruth => Ok((0, 0)),
            FieldKind::Neural => Ok((sys.physical_dim() + aux, sys.physical_dim())),
            FieldKind::SecondOrder => {
                let n = sys.dim();
                if n % 2 != 0 || sys.physical_dim() != n {
                    return Err(Error::invalid(format!(
                        "second-order model needs an even-dimensional state of positions and velocities; {} does not have one",
                        sys.name()
                    )));
                }
                Ok((n + aux, n / 2))
            }
            FieldKind::Hybrid => {
                if sys != System::DoublePendulum {
                    return Err(Error::invalid("hybrid model is defined for the double pendulum only"));
                }
                Ok((sys.dim() + aux, 1))
            }
        }
    }
}

/// An assembled field, generic over how the network is evaluated.
#[derive(Debug, Clone)]
pub struct NeuralField<N> {
    system: System,
    kind: FieldKind,
    net: Option<N>,
    aux: AuxInput,
}

/// Checks the spec's invariants and returns the field it describes.
pub fn assemble_field(spec: &FieldSpec) -> Result<NeuralField<Mlp>> {
    let net = match (spec.kind, &spec.net) {
        (FieldKind::GroundTruth, _) => None,
        (_, None) => return Err(Error::invalid("a learned field needs a network")),
        (_, Some(net)) => Some(net.clone()),
    };
    NeuralField::with_net::<f64>(spec, net)
}

impl<N> NeuralField<N> {
    /// Same structure as `spec`, evaluated through `net`.
    pub fn with_net<S>(spec: &FieldSpec, net: Option<N>) -> Result<Self>
    where
        N: NetEval<S>,
    {
        let (nin, nout) = spec.net_io()?;
        if let Some(n) = &net {
            if n.n_in() != nin {
                return Err(Error::dims(
                    format!("network input (state + auxiliary width {})", spec.aux.width()),
                    nin,
                    n.n_in(),
                ));
            }
            if n.n_out() != nout {
                return Err(Error::dims("network output", nout, n.n_out()));
            }
        } else if spec.kind != FieldKind::GroundTruth {
            return Err(Error::invalid("a learned field needs a network"));
        }
        Ok(NeuralField {
            system: spec.system,
            kind: spec.kind,
            net,
            aux: spec.aux.clone(),
        })
    }

    pub fn system(&self) -> System {
        self.system
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn net(&self) -> Option<&N> {
        self.net.as_ref()
    }

    fn net_input<S: Real>(&self, t: f64, state: &[S]) -> Result<Vec<S>> {
        let mut x = state.to_vec();
        x.extend(self.aux.at(t)?.into_iter().map(S::cst));
        Ok(x)
    }
}

impl<S: Real, N: NetEval<S>> VectorField<S> for NeuralField<N> {
    fn dim(&self) -> usize {
        self.system.dim()
    }

    fn eval(&self, t: f64, u: &[S]) -> Result<Vec<S>> {
        let n = self.system.dim();
        if u.len() != n {
            return Err(Error::dims("state", n, u.len()));
        }
        let net = match (&self.net, self.kind) {
            (_, FieldKind::GroundTruth) | (None, _) => return self.system.truth().eval(t, u),
            (Some(net), _) => net,
        };
        match self.kind {
            FieldKind::GroundTruth => unreachable!(),
            FieldKind::Neural => {
                let p = self.system.physical_dim();
                let mut out = net.eval(&self.net_input(t, &u[..p])?)?;
                // the clock coordinate advances at unit rate
                out.extend((p..n).map(|_| S::cst(1.0)));
                Ok(out)
            }
            FieldKind::SecondOrder => {
                let k = n / 2;
                let acc = net.eval(&self.net_input(t, u)?)?;
                let mut out = u[k..].to_vec();
                out.extend(acc);
                Ok(out)
            }
            FieldKind::Hybrid => {
                let known = pendulum_first_acceleration(u);
                let learned = net.eval(&self.net_input(t, u)?)?;
                Ok(vec![u[2], u[3], known, learned[0]])
            }
        }
    }

    fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        self.system.breakpoints(t0, t1)
    }
}
