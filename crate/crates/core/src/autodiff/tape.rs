//! Reverse-mode gradient tape.
//!
//! Every non-constant [`Var`] is a node holding a linear combination of its
//! parents' adjoints (a Wengert list). Dense network layers are recorded as
//! a single block node so that a 64-wide hidden layer costs one entry rather
//! than thousands.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Real;
use crate::error::{Error, Result};

const NO_NODE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
enum Node {
    Param(u32),
    Op { start: u32, len: u32 },
    BlockOut { block: u32 },
}

#[derive(Debug)]
struct Block {
    param_offset: usize,
    shapes: Vec<(usize, usize)>,
    inputs: Vec<u32>,
    /// `acts[0]` is the input, `acts[l]` the post-ReLU output of layer `l-1`.
    acts: Vec<Vec<f64>>,
    out_start: u32,
    n_out: u32,
}

#[derive(Debug, Default)]
struct Inner {
    nodes: Vec<Node>,
    vals: Vec<f64>,
    terms: Vec<(u32, f64)>,
    blocks: Vec<Block>,
    params: Vec<f64>,
}

/// Recording of one scalar computation. Single owner, single thread.
#[derive(Debug, Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// Scalar recorded on a [`Tape`], or a constant when `tape` is `None`.
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl<'t> Var<'t> {
    pub fn constant(val: f64) -> Self {
        Var {
            tape: None,
            idx: NO_NODE,
            val,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }
}

impl Tape {
    /// A tape whose parameter slots hold `params`.
    pub fn new(params: Vec<f64>) -> Self {
        Tape {
            inner: RefCell::new(Inner {
                params,
                ..Default::default()
            }),
        }
    }

    pub fn n_params(&self) -> usize {
        self.inner.borrow().params.len()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Primal values of all recorded nodes, in recording order.
    pub fn recorded_values(&self) -> Vec<f64> {
        self.inner.borrow().vals.clone()
    }

    pub fn param_values(&self) -> Vec<f64> {
        self.inner.borrow().params.clone()
    }

    /// Leaf variable bound to parameter slot `slot`.
    pub fn param(&self, slot: usize) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let val = inner.params[slot];
        let idx = inner.nodes.len() as u32;
        inner.nodes.push(Node::Param(slot as u32));
        inner.vals.push(val);
        Var {
            tape: Some(self),
            idx,
            val,
        }
    }

    pub fn params(&self) -> Vec<Var<'_>> {
        (0..self.n_params()).map(|i| self.param(i)).collect()
    }

    fn op(&self, val: f64, parents: &[(u32, f64)]) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let start = inner.terms.len() as u32;
        inner.terms.extend_from_slice(parents);
        let idx = inner.nodes.len() as u32;
        inner.nodes.push(Node::Op {
            start,
            len: parents.len() as u32,
        });
        inner.vals.push(val);
        Var {
            tape: Some(self),
            idx,
            val,
        }
    }

    /// Record a dense ReLU network evaluation whose weights live in the
    /// parameter slots starting at `param_offset`.
    ///
    /// Layout per layer `(in, out)`: an `out × in` row-major weight matrix
    /// followed by `out` biases. Hidden layers use ReLU, the last layer is
    /// affine.
    pub fn dense_block<'t>(
        &'t self,
        param_offset: usize,
        shapes: &[(usize, usize)],
        input: &[Var<'t>],
    ) -> Vec<Var<'t>> {
        let mut inner = self.inner.borrow_mut();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(shapes.len());
        let mut x: Vec<f64> = input.iter().map(|v| v.val).collect();
        let mut off = param_offset;
        let last = shapes.len() - 1;
        for (l, &(nin, nout)) in shapes.iter().enumerate() {
            let w = &inner.params[off..off + nin * nout];
            let b = &inner.params[off + nin * nout..off + nin * nout + nout];
            let mut y = b.to_vec();
            for (i, yi) in y.iter_mut().enumerate() {
                let row = &w[i * nin..(i + 1) * nin];
                let mut s = 0.0;
                for (wij, xj) in row.iter().zip(&x) {
                    s += wij * xj;
                }
                *yi += s;
                if l < last && *yi <= 0.0 {
                    *yi = 0.0;
                }
            }
            off += nin * nout + nout;
            acts.push(std::mem::replace(&mut x, y));
        }
        let out_start = inner.nodes.len() as u32;
        let block = inner.blocks.len() as u32;
        for &val in &x {
            inner.nodes.push(Node::BlockOut { block });
            inner.vals.push(val);
        }
        inner.blocks.push(Block {
            param_offset,
            shapes: shapes.to_vec(),
            inputs: input
                .iter()
                .map(|v| if v.tape.is_some() { v.idx } else { NO_NODE })
                .collect(),
            acts,
            out_start,
            n_out: x.len() as u32,
        });
        x.iter()
            .enumerate()
            .map(|(i, &val)| Var {
                tape: Some(self),
                idx: out_start + i as u32,
                val,
            })
            .collect()
    }

    /// Gradient of `out` with respect to every parameter slot.
    pub fn gradient(&self, out: Var<'_>) -> Vec<f64> {
        let inner = self.inner.borrow();
        let mut grad = vec![0.0; inner.params.len()];
        if out.tape.is_none() {
            return grad;
        }
        let top = out.idx as usize;
        let mut adj = vec![0.0; top + 1];
        adj[top] = 1.0;
        for i in (0..=top).rev() {
            match inner.nodes[i] {
                Node::Op { start, len } => {
                    let a = adj[i];
                    if a == 0.0 {
                        continue;
                    }
                    for &(p, w) in &inner.terms[start as usize..(start + len) as usize] {
                        adj[p as usize] += w * a;
                    }
                }
                Node::Param(slot) => grad[slot as usize] += adj[i],
                Node::BlockOut { block } => {
                    let b = &inner.blocks[block as usize];
                    let end = (b.out_start + b.n_out) as usize;
                    if i + 1 == end || i == top {
                        let start = b.out_start as usize;
                        let delta: Vec<f64> = adj[start..end.min(top + 1)].to_vec();
                        block_backward(b, &inner.params, delta, &mut adj, &mut grad);
                    }
                }
            }
        }
        grad
    }
}

fn block_backward(b: &Block, params: &[f64], mut delta: Vec<f64>, adj: &mut [f64], grad: &mut [f64]) {
    delta.resize(b.n_out as usize, 0.0);
    if delta.iter().all(|&d| d == 0.0) {
        return;
    }
    let mut offsets = Vec::with_capacity(b.shapes.len());
    let mut off = b.param_offset;
    for &(nin, nout) in &b.shapes {
        offsets.push(off);
        off += nin * nout + nout;
    }
    for l in (0..b.shapes.len()).rev() {
        let (nin, nout) = b.shapes[l];
        let off = offsets[l];
        let a_prev = &b.acts[l];
        let mut prev = vec![0.0; nin];
        for i in 0..nout {
            let d = delta[i];
            if d == 0.0 {
                continue;
            }
            grad[off + nin * nout + i] += d;
            let w = &params[off + i * nin..off + (i + 1) * nin];
            let gw = &mut grad[off + i * nin..off + (i + 1) * nin];
            for j in 0..nin {
                gw[j] += d * a_prev[j];
                prev[j] += w[j] * d;
            }
        }
        if l > 0 {
            for (p, &a) in prev.iter_mut().zip(a_prev) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
        }
        delta = prev;
    }
    for (j, &node) in b.inputs.iter().enumerate() {
        if node != NO_NODE {
            adj[node as usize] += delta[j];
        }
    }
}

#[inline]
fn unary<'t>(a: Var<'t>, val: f64, da: f64) -> Var<'t> {
    match a.tape {
        Some(t) if da != 0.0 => t.op(val, &[(a.idx, da)]),
        _ => Var::constant(val),
    }
}

#[inline]
fn binary<'t>(a: Var<'t>, b: Var<'t>, val: f64, da: f64, db: f64) -> Var<'t> {
    match (a.tape, b.tape) {
        (None, None) => Var::constant(val),
        (Some(t), None) => t.op(val, &[(a.idx, da)]),
        (None, Some(t)) => t.op(val, &[(b.idx, db)]),
        (Some(t), Some(_)) => t.op(val, &[(a.idx, da), (b.idx, db)]),
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        binary(self, o, self.val + o.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        binary(self, o, self.val - o.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        if (self.tape.is_none() && self.val == 0.0) || (o.tape.is_none() && o.val == 0.0) {
            return Var::constant(self.val * o.val);
        }
        binary(self, o, self.val * o.val, o.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.val / o.val;
        binary(self, o, q, 1.0 / o.val, -q / o.val)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        unary(self, -self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn add(self, c: f64) -> Self {
        if c == 0.0 {
            return self;
        }
        unary(self, self.val + c, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn sub(self, c: f64) -> Self {
        if c == 0.0 {
            return self;
        }
        unary(self, self.val - c, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn mul(self, c: f64) -> Self {
        if c == 1.0 {
            return self;
        }
        unary(self, self.val * c, c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn div(self, c: f64) -> Self {
        unary(self, self.val / c, 1.0 / c)
    }
}

impl<'t> Real for Var<'t> {
    fn cst(x: f64) -> Self {
        Var::constant(x)
    }

    #[inline]
    fn value(self) -> f64 {
        self.val
    }

    fn sqrt(self) -> Self {
        let r = self.val.sqrt();
        unary(self, r, 0.5 / r)
    }

    fn sin(self) -> Self {
        unary(self, self.val.sin(), self.val.cos())
    }

    fn cos(self) -> Self {
        unary(self, self.val.cos(), -self.val.sin())
    }

    fn powf(self, p: f64) -> Self {
        unary(self, self.val.powf(p), p * self.val.powf(p - 1.0))
    }

    fn relu(self) -> Self {
        if self.val > 0.0 {
            self
        } else {
            Var::constant(0.0)
        }
    }

    fn lin_comb(base: Self, terms: &[(f64, Self)]) -> Self {
        let mut val = base.val;
        let mut parents: Vec<(u32, f64)> = Vec::with_capacity(terms.len() + 1);
        let mut tape = base.tape;
        if base.tape.is_some() {
            parents.push((base.idx, 1.0));
        }
        for &(w, x) in terms {
            val += w * x.val;
            if x.tape.is_some() && w != 0.0 {
                parents.push((x.idx, w));
                tape = tape.or(x.tape);
            }
        }
        match tape {
            Some(t) if !parents.is_empty() => t.op(val, &parents),
            _ => Var::constant(val),
        }
    }
}

/// Value and parameter gradient of a scalar loss recorded on a fresh tape.
///
/// Gradients are those of the exact discrete computation: any control flow
/// inside `loss` (e.g. adaptive step-size decisions) is frozen at the values
/// seen during recording.
pub fn loss_gradient<F>(loss: F, params: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: for<'t> FnOnce(&'t Tape) -> Result<Var<'t>>,
{
    let tape = Tape::new(params.to_vec());
    let out = loss(&tape)?;
    if !out.val.is_finite() {
        return Err(Error::non_finite("loss value"));
    }
    let grad = tape.gradient(out);
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::non_finite(format!("gradient component {i}")));
    }
    Ok((out.val, grad))
}

/// Largest componentwise relative deviation between the tape gradient and a
/// central finite-difference gradient with step `h`.
///
/// Components are compared against `max(|ad|, |fd|, 1e-6·‖fd‖∞, 1e-12)`, so
/// components many orders below the gradient scale are judged in absolute
/// terms.
pub fn fd_check<F>(loss: F, params: &[f64], h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape) -> Result<Var<'t>>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let (_, ad) = loss_gradient(&loss, params)?;
    let eval = |p: Vec<f64>| -> Result<f64> {
        let tape = Tape::new(p);
        Ok(loss(&tape)?.val)
    };
    let mut fd = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut plus = params.to_vec();
        let mut minus = params.to_vec();
        plus[i] += h;
        minus[i] -= h;
        fd.push((eval(plus)? - eval(minus)?) / (2.0 * h));
    }
    let scale = fd.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = (1e-6 * scale).max(1e-12);
    Ok(ad
        .iter()
        .zip(&fd)
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(floor))
        .fold(0.0, f64::max))
}
