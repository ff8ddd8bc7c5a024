//! Tape-based reverse-mode automatic differentiation over dense vectors.
//!
//! Every recorded value is a flat `f64` vector (scalars have length 1,
//! matrices are row-major and carry their shape only in the ops that need
//! it). Values live in one contiguous arena so recording does not allocate
//! per node. Elementwise binary ops broadcast a length-1 operand.
//!
//! ```
//! use hvgnn::autodiff::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.var(&[3.0]);
//! let y = x * x;
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x), &[6.0]);
//! ```

use std::cell::{Cell, RefCell};
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Elementwise unary functions with analytic derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Cosh,
    Sinh,
    Tanh,
    Exp,
    Log,
    Sqrt,
    Cos,
    Sin,
    Sigmoid,
    /// `log(sigmoid(x))`, evaluated without underflow.
    LogSigmoid,
    Asinh,
    Acosh,
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Cosh => x.cosh(),
            Unary::Sinh => x.sinh(),
            Unary::Tanh => x.tanh(),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Sqrt => x.sqrt(),
            Unary::Cos => x.cos(),
            Unary::Sin => x.sin(),
            Unary::Sigmoid => sigmoid(x),
            Unary::LogSigmoid => log_sigmoid(x),
            Unary::Asinh => x.asinh(),
            Unary::Acosh => x.acosh(),
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Cosh => x.sinh(),
            Unary::Sinh => x.cosh(),
            Unary::Tanh => 1.0 - y * y,
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Sqrt => 0.5 / y,
            Unary::Cos => -x.sin(),
            Unary::Sin => x.cos(),
            Unary::Sigmoid => y * (1.0 - y),
            Unary::LogSigmoid => sigmoid(-x),
            Unary::Asinh => 1.0 / (x * x + 1.0).sqrt(),
            Unary::Acosh => 1.0 / (x * x - 1.0).sqrt(),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Operation kinds accepted by [`Tape::record`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    /// Row-major `rows × cols` matrix times a length-`cols` vector.
    MatVec { rows: usize, cols: usize },
    Unary(Unary),
    Sum,
    Dot,
    /// `-a_0 b_0 + Σ a_i b_i`.
    LorentzInner,
    Concat,
    Slice { start: usize, len: usize },
    /// `max(x, lo)`; the adjoint is zero on the clamped side and on the boundary.
    ClampMin(f64),
    /// `(a_0, b_0, a_1, b_1, ...)`.
    Interleave,
    LogSumExp,
    /// `(u, sqrt K) ↦ exp_O((0, u))` on the hyperboloid.
    ExpOrigin,
    /// `(x, sqrt K) ↦` spatial block of `log_O(x)`.
    LogOrigin,
    /// `(S, sqrt K) ↦ sqrt K · S / sqrt(-<S,S>_L)` for time-like `S`.
    Project,
    /// `ω ↦ sqrt(1/d) (cos ω_1 t, sin ω_1 t, ...)` with `d = 2 len(ω)`.
    TimeFeatures(f64),
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Binary(OpKind, u32, u32),
    Single(OpKind, u32),
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    offset: usize,
    len: usize,
    needs_grad: bool,
}

#[derive(Default)]
struct Arena {
    nodes: Vec<Node>,
    data: Vec<f64>,
}

/// Append-only record of a computation.
#[derive(Default)]
pub struct Tape {
    arena: RefCell<Arena>,
    scratch: RefCell<Vec<f64>>,
    generation: Cell<u64>,
}

/// Handle to a recorded value. Valid only for the tape generation it was
/// recorded in.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: u32,
    generation: u64,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("value", &self.value()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Discards all nodes. Handles from earlier generations become stale.
    pub fn reset(&self) {
        let mut a = self.arena.borrow_mut();
        a.nodes.clear();
        a.data.clear();
        self.generation.set(self.generation.get() + 1);
    }

    pub fn generation(&self) -> u64 {
        self.generation.get()
    }

    pub fn len(&self) -> usize {
        self.arena.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, values: &[f64], needs_grad: bool) -> Var<'_> {
        let mut a = self.arena.borrow_mut();
        let offset = a.data.len();
        a.data.extend_from_slice(values);
        let id = a.nodes.len() as u32;
        a.nodes.push(Node { op, offset, len: values.len(), needs_grad });
        Var { tape: self, id, generation: self.generation.get() }
    }

    /// A differentiable leaf.
    pub fn var(&self, values: &[f64]) -> Var<'_> {
        self.push(Op::Leaf, values, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&self, values: &[f64]) -> Var<'_> {
        self.push(Op::Leaf, values, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(&[value])
    }

    pub fn zeros(&self, len: usize) -> Var<'_> {
        self.constant(&vec![0.0; len])
    }

    fn check(&self, v: &Var<'_>) -> Result<()> {
        if !std::ptr::eq(v.tape, self) {
            return Err(Error::Tape("value belongs to a different tape".into()));
        }
        if v.generation != self.generation.get() {
            return Err(Error::Tape(format!(
                "stale value from generation {} (tape is at {})",
                v.generation,
                self.generation.get()
            )));
        }
        Ok(())
    }

    /// Records one operation over `inputs`.
    pub fn record<'t>(&'t self, kind: OpKind, inputs: &[Var<'t>]) -> Result<Var<'t>> {
        for v in inputs {
            self.check(v)?;
        }
        let arity = match kind {
            OpKind::Add
            | OpKind::Sub
            | OpKind::Mul
            | OpKind::Div
            | OpKind::MatVec { .. }
            | OpKind::Dot
            | OpKind::LorentzInner
            | OpKind::Concat
            | OpKind::Interleave
            | OpKind::ExpOrigin
            | OpKind::LogOrigin
            | OpKind::Project => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::Tape(format!("{kind:?} takes {arity} inputs, got {}", inputs.len())));
        }
        let mut out = self.scratch.borrow_mut();
        out.clear();
        let needs_grad = {
            let a = self.arena.borrow();
            let node = |v: &Var<'_>| a.nodes[v.id as usize];
            let val = |n: Node| &a.data[n.offset..n.offset + n.len];
            let na = node(&inputs[0]);
            let x = val(na);
            if arity == 2 {
                let nb = node(&inputs[1]);
                let y = val(nb);
                forward_binary(kind, x, y, &mut out)?;
                na.needs_grad || nb.needs_grad
            } else {
                forward_single(kind, x, &mut out)?;
                na.needs_grad
            }
        };
        let op = if arity == 2 {
            Op::Binary(kind, inputs[0].id, inputs[1].id)
        } else {
            Op::Single(kind, inputs[0].id)
        };
        Ok(self.push(op, &out, needs_grad))
    }

    fn rec<'t>(&'t self, kind: OpKind, inputs: &[Var<'t>]) -> Var<'t> {
        match self.record(kind, inputs) {
            Ok(v) => v,
            Err(e) => panic!("{e}"),
        }
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        self.check(&output)?;
        let a = self.arena.borrow();
        let out = a.nodes[output.id as usize];
        if out.len != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got length {}",
                out.len
            )));
        }
        let mut adj = vec![0.0; a.data.len()];
        adj[out.offset] = 1.0;
        for i in (0..=output.id as usize).rev() {
            let n = a.nodes[i];
            if !n.needs_grad {
                continue;
            }
            let (lo, hi) = adj.split_at_mut(n.offset);
            let g = &hi[..n.len];
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let y = &a.data[n.offset..n.offset + n.len];
            match n.op {
                Op::Leaf => {}
                Op::Single(kind, pa) => {
                    let pa = a.nodes[pa as usize];
                    if pa.needs_grad {
                        let x = &a.data[pa.offset..pa.offset + pa.len];
                        backward_single(kind, x, y, g, &mut lo[pa.offset..pa.offset + pa.len]);
                    }
                }
                Op::Binary(kind, pa, pb) => {
                    let na = a.nodes[pa as usize];
                    let nb = a.nodes[pb as usize];
                    let x = &a.data[na.offset..na.offset + na.len];
                    let z = &a.data[nb.offset..nb.offset + nb.len];
                    if na.needs_grad {
                        backward_binary(kind, Side::Left, x, z, y, g, &mut lo[na.offset..na.offset + na.len]);
                    }
                    if nb.needs_grad {
                        backward_binary(kind, Side::Right, x, z, y, g, &mut lo[nb.offset..nb.offset + nb.len]);
                    }
                }
            }
        }
        let spans = a.nodes.iter().map(|n| (n.offset, n.len)).collect();
        Ok(Gradients { adj, spans, generation: self.generation.get() })
    }
}

/// Adjoints from one reverse sweep, keyed by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    adj: Vec<f64>,
    spans: Vec<(usize, usize)>,
    generation: u64,
}

impl Gradients {
    /// Gradient with respect to `v`. Zero for values the output does not
    /// depend on.
    pub fn wrt(&self, v: Var<'_>) -> &[f64] {
        assert_eq!(v.generation, self.generation, "gradient lookup with a stale value");
        let (o, l) = self.spans[v.id as usize];
        &self.adj[o..o + l]
    }

    /// Gradient keyed by raw node id.
    pub fn by_id(&self, id: usize) -> Option<&[f64]> {
        self.spans.get(id).map(|&(o, l)| &self.adj[o..o + l])
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `sinh(a) / a`.
fn sinhc(a: f64) -> f64 {
    if a < 1e-4 {
        1.0 + a * a / 6.0
    } else {
        a.sinh() / a
    }
}

/// `asinh(b) / b`.
fn asinhc(b: f64) -> f64 {
    if b < 1e-4 {
        1.0 - b * b / 6.0
    } else {
        b.asinh() / b
    }
}

/// `(a cosh a - sinh a) / a^3`.
fn exp_q(a: f64) -> f64 {
    if a < 1e-3 {
        1.0 / 3.0 + a * a / 30.0
    } else {
        (a * a.cosh() - a.sinh()) / (a * a * a)
    }
}

/// `(b / sqrt(1 + b^2) - asinh b) / b^3`.
fn log_p(b: f64) -> f64 {
    if b < 1e-3 {
        -1.0 / 3.0 + 0.3 * b * b
    } else {
        (b / (1.0 + b * b).sqrt() - b.asinh()) / (b * b * b)
    }
}

fn broadcast_len(x: &[f64], y: &[f64]) -> Result<usize> {
    match (x.len(), y.len()) {
        (a, b) if a == b => Ok(a),
        (1, b) => Ok(b),
        (a, 1) => Ok(a),
        (a, b) => Err(Error::Dimension { expected: a, got: b }),
    }
}

#[inline]
fn at(v: &[f64], i: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[i]
    }
}

fn forward_binary(kind: OpKind, x: &[f64], y: &[f64], out: &mut Vec<f64>) -> Result<()> {
    let mut elementwise = |f: fn(f64, f64) -> f64| -> Result<()> {
        let n = broadcast_len(x, y)?;
        match (x.len(), y.len()) {
            (1, _) if n > 1 => out.extend(y.iter().map(|b| f(x[0], *b))),
            (_, 1) => out.extend(x.iter().map(|a| f(*a, y[0]))),
            _ => out.extend(x.iter().zip(y).map(|(a, b)| f(*a, *b))),
        }
        Ok(())
    };
    match kind {
        OpKind::Add => elementwise(|a, b| a + b),
        OpKind::Sub => elementwise(|a, b| a - b),
        OpKind::Mul => elementwise(|a, b| a * b),
        OpKind::Div => elementwise(|a, b| a / b),
        OpKind::MatVec { rows, cols } => {
            if x.len() != rows * cols {
                return Err(Error::Dimension { expected: rows * cols, got: x.len() });
            }
            if y.len() != cols {
                return Err(Error::Dimension { expected: cols, got: y.len() });
            }
            {
            out.extend((0..rows)
                .map(|r| x[r * cols..(r + 1) * cols].iter().zip(y).map(|(m, v)| m * v).sum::<f64>())
                );
            Ok(())
        }
        }
        OpKind::Dot => {
            if x.len() != y.len() {
                return Err(Error::Dimension { expected: x.len(), got: y.len() });
            }
            {
            out.push(x.iter().zip(y).map(|(a, b)| a * b).sum());
            Ok(())
        }
        }
        OpKind::LorentzInner => {
            if x.len() != y.len() || x.len() < 2 {
                return Err(Error::Dimension { expected: x.len(), got: y.len() });
            }
            {
            out.push(crate::manifold::lorentz_inner_unchecked(x, y));
            Ok(())
        }
        }
        OpKind::Concat => {
            out.extend(x.iter().chain(y).copied());
            Ok(())
        },
        OpKind::Interleave => {
            if x.len() != y.len() {
                return Err(Error::Dimension { expected: x.len(), got: y.len() });
            }
            {
            out.extend(x.iter().zip(y).flat_map(|(a, b)| [*a, *b]));
            Ok(())
        }
        }
        OpKind::ExpOrigin | OpKind::LogOrigin | OpKind::Project => {
            if y.len() != 1 {
                return Err(Error::Dimension { expected: 1, got: y.len() });
            }
            let s = y[0];
            match kind {
                OpKind::ExpOrigin => {
                    let a = norm(x) / s;
                    let f = sinhc(a);
                    out.push(0.0);
                    out.extend(x.iter().map(|v| f * v));
                    out[0] = (s * s + out[1..].iter().map(|v| v * v).sum::<f64>()).sqrt();
                    Ok(())
                }
                OpKind::LogOrigin => {
                    if x.len() < 2 {
                        return Err(Error::Dimension { expected: 2, got: x.len() });
                    }
                    let f = asinhc(norm(&x[1..]) / s);
                    {
            out.extend(x[1..].iter().map(|v| f * v));
            Ok(())
        }
                }
                _ => {
                    if x.len() < 2 {
                        return Err(Error::Dimension { expected: 2, got: x.len() });
                    }
                    let m = (-crate::manifold::lorentz_inner_unchecked(x, x)).sqrt();
                    out.push(0.0);
                    out.extend(x[1..].iter().map(|v| s * v / m));
                    out[0] = (s * s + out[1..].iter().map(|v| v * v).sum::<f64>()).sqrt();
                    Ok(())
                }
            }
        }
        other => Err(Error::Tape(format!("{other:?} is not a binary op"))),
    }
}

fn forward_single(kind: OpKind, x: &[f64], out: &mut Vec<f64>) -> Result<()> {
    match kind {
        OpKind::Neg => {
            out.extend(x.iter().map(|v| -v));
            Ok(())
        },
        OpKind::Unary(u) => {
            out.extend(x.iter().map(|v| u.apply(*v)));
            Ok(())
        },
        OpKind::Sum => {
            out.push(x.iter().sum());
            Ok(())
        },
        OpKind::Slice { start, len } => {
            if start + len > x.len() {
                return Err(Error::Dimension { expected: start + len, got: x.len() });
            }
            out.extend_from_slice(&x[start..start + len]);
            Ok(())
        }
        OpKind::ClampMin(lo) => {
            out.extend(x.iter().map(|v| v.max(lo)));
            Ok(())
        },
        OpKind::LogSumExp => {
            let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = x.iter().map(|v| (v - m).exp()).sum();
            {
            out.push(m + s.ln());
            Ok(())
        }
        }
        OpKind::TimeFeatures(t) => {
            let c = (0.5 / x.len() as f64).sqrt();
            {
            out.extend(x.iter()
                .flat_map(|w| {
                    let (sin, cos) = (w * t).sin_cos();
                    [c * cos, c * sin]
                })
                );
            Ok(())
        }
        }
        other => Err(Error::Tape(format!("{other:?} is not a unary op"))),
    }
}

fn backward_single(kind: OpKind, x: &[f64], y: &[f64], g: &[f64], gx: &mut [f64]) {
    match kind {
        OpKind::Neg => gx.iter_mut().zip(g).for_each(|(a, b)| *a -= b),
        OpKind::Unary(u) => {
            for i in 0..x.len() {
                gx[i] += g[i] * u.derivative(x[i], y[i]);
            }
        }
        OpKind::Sum => gx.iter_mut().for_each(|a| *a += g[0]),
        OpKind::Slice { start, len } => {
            gx[start..start + len].iter_mut().zip(g).for_each(|(a, b)| *a += b)
        }
        OpKind::ClampMin(lo) => {
            for i in 0..x.len() {
                if x[i] > lo {
                    gx[i] += g[i];
                }
            }
        }
        OpKind::LogSumExp => {
            for i in 0..x.len() {
                gx[i] += g[0] * (x[i] - y[0]).exp();
            }
        }
        OpKind::TimeFeatures(t) => {
            for (k, a) in gx.iter_mut().enumerate() {
                *a += t * (g[2 * k + 1] * y[2 * k] - g[2 * k] * y[2 * k + 1]);
            }
        }
        _ => unreachable!("validated at record time"),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Left,
    Right,
}

fn backward_binary(kind: OpKind, side: Side, x: &[f64], z: &[f64], y: &[f64], g: &[f64], gt: &mut [f64]) {
    // Accumulates into `gt`, reducing over broadcast positions when the
    // target operand has length 1.
    let reduce = |gt: &mut [f64], i: usize, v: f64| {
        if gt.len() == 1 {
            gt[0] += v;
        } else {
            gt[i] += v;
        }
    };
    match kind {
        OpKind::Add => (0..g.len()).for_each(|i| reduce(gt, i, g[i])),
        OpKind::Sub => {
            let s = if side == Side::Left { 1.0 } else { -1.0 };
            (0..g.len()).for_each(|i| reduce(gt, i, s * g[i]))
        }
        OpKind::Mul => {
            let other = if side == Side::Left { z } else { x };
            (0..g.len()).for_each(|i| reduce(gt, i, g[i] * at(other, i)))
        }
        OpKind::Div => {
            for i in 0..g.len() {
                let b = at(z, i);
                let v = if side == Side::Left { g[i] / b } else { -g[i] * y[i] / b };
                reduce(gt, i, v);
            }
        }
        OpKind::MatVec { rows, cols } => match side {
            Side::Left => {
                for r in 0..rows {
                    for c in 0..cols {
                        gt[r * cols + c] += g[r] * z[c];
                    }
                }
            }
            Side::Right => {
                for r in 0..rows {
                    for c in 0..cols {
                        gt[c] += g[r] * x[r * cols + c];
                    }
                }
            }
        },
        OpKind::Dot => {
            let other = if side == Side::Left { z } else { x };
            gt.iter_mut().zip(other).for_each(|(a, b)| *a += g[0] * b);
        }
        OpKind::LorentzInner => {
            let other = if side == Side::Left { z } else { x };
            gt[0] -= g[0] * other[0];
            for i in 1..gt.len() {
                gt[i] += g[0] * other[i];
            }
        }
        OpKind::Concat => {
            let (lo, len) = if side == Side::Left { (0, x.len()) } else { (x.len(), z.len()) };
            gt.iter_mut().zip(&g[lo..lo + len]).for_each(|(a, b)| *a += b);
        }
        OpKind::Interleave => {
            let off = if side == Side::Left { 0 } else { 1 };
            for (i, a) in gt.iter_mut().enumerate() {
                *a += g[2 * i + off];
            }
        }
        OpKind::ExpOrigin => {
            // y = (s cosh a, sinhc(a) u) with a = |u| / s.
            let s = z[0];
            let r = norm(x);
            let a = r / s;
            let gu: f64 = g[1..].iter().zip(x).map(|(p, q)| p * q).sum();
            let q = exp_q(a);
            match side {
                Side::Left => {
                    let f = sinhc(a);
                    let c = gu * q / (s * s) + g[0] * f / s;
                    for i in 0..gt.len() {
                        gt[i] += f * g[i + 1] + c * x[i];
                    }
                }
                Side::Right => {
                    gt[0] += -gu * q * r * r / (s * s * s) + g[0] * (a.cosh() - a * a.sinh());
                }
            }
        }
        OpKind::LogOrigin => {
            // u = asinhc(b) x_s with b = |x_s| / s.
            let s = z[0];
            let xs = &x[1..];
            let n = norm(xs);
            let b = n / s;
            let gx: f64 = g.iter().zip(xs).map(|(p, q)| p * q).sum();
            let p = log_p(b);
            match side {
                Side::Left => {
                    let h = asinhc(b);
                    let c = gx * p / (s * s);
                    for i in 0..xs.len() {
                        gt[i + 1] += h * g[i] + c * xs[i];
                    }
                }
                Side::Right => gt[0] += -gx * p * n * n / (s * s * s),
            }
        }
        OpKind::Project => {
            // y = (s / m) S with m = sqrt(-<S,S>_L).
            let s = z[0];
            let m = (-crate::manifold::lorentz_inner_unchecked(x, x)).sqrt();
            let gs: f64 = g.iter().zip(x).map(|(p, q)| p * q).sum();
            match side {
                Side::Left => {
                    let c = gs * s / (m * m * m);
                    gt[0] += s / m * g[0] - c * x[0];
                    for i in 1..gt.len() {
                        gt[i] += s / m * g[i] + c * x[i];
                    }
                }
                Side::Right => gt[0] += gs / m,
            }
        }
        _ => unreachable!("validated at record time"),
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id as usize
    }

    pub fn len(&self) -> usize {
        let a = self.tape.arena.borrow();
        a.nodes[self.id as usize].len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self) -> Vec<f64> {
        let a = self.tape.arena.borrow();
        let n = a.nodes[self.id as usize];
        a.data[n.offset..n.offset + n.len].to_vec()
    }

    /// The single entry of a length-1 value.
    pub fn item(&self) -> f64 {
        let a = self.tape.arena.borrow();
        let n = a.nodes[self.id as usize];
        debug_assert_eq!(n.len, 1);
        a.data[n.offset]
    }

    pub fn get(&self, i: usize) -> f64 {
        let a = self.tape.arena.borrow();
        let n = a.nodes[self.id as usize];
        a.data[n.offset + i]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.arena.borrow().nodes[self.id as usize].needs_grad
    }

    fn un(self, u: Unary) -> Self {
        self.tape.rec(OpKind::Unary(u), &[self])
    }

    pub fn cosh(self) -> Self {
        self.un(Unary::Cosh)
    }
    pub fn sinh(self) -> Self {
        self.un(Unary::Sinh)
    }
    pub fn tanh(self) -> Self {
        self.un(Unary::Tanh)
    }
    pub fn exp(self) -> Self {
        self.un(Unary::Exp)
    }
    pub fn ln(self) -> Self {
        self.un(Unary::Log)
    }
    pub fn sqrt(self) -> Self {
        self.un(Unary::Sqrt)
    }
    pub fn cos(self) -> Self {
        self.un(Unary::Cos)
    }
    pub fn sin(self) -> Self {
        self.un(Unary::Sin)
    }
    pub fn sigmoid(self) -> Self {
        self.un(Unary::Sigmoid)
    }
    pub fn log_sigmoid(self) -> Self {
        self.un(Unary::LogSigmoid)
    }
    pub fn asinh(self) -> Self {
        self.un(Unary::Asinh)
    }
    pub fn acosh(self) -> Self {
        self.un(Unary::Acosh)
    }

    pub fn sum(self) -> Self {
        self.tape.rec(OpKind::Sum, &[self])
    }

    pub fn dot(self, other: Self) -> Self {
        self.tape.rec(OpKind::Dot, &[self, other])
    }

    pub fn lorentz_inner(self, other: Self) -> Self {
        self.tape.rec(OpKind::LorentzInner, &[self, other])
    }

    /// Sum of squares.
    pub fn norm_sq(self) -> Self {
        self.dot(self)
    }

    pub fn concat(self, other: Self) -> Self {
        self.tape.rec(OpKind::Concat, &[self, other])
    }

    pub fn interleave(self, other: Self) -> Self {
        self.tape.rec(OpKind::Interleave, &[self, other])
    }

    pub fn slice(self, start: usize, len: usize) -> Self {
        self.tape.rec(OpKind::Slice { start, len }, &[self])
    }

    pub fn clamp_min(self, lo: f64) -> Self {
        self.tape.rec(OpKind::ClampMin(lo), &[self])
    }

    /// `exp_O((0, self))` for curvature with square root `sqrt_k`.
    pub fn exp_origin(self, sqrt_k: Self) -> Self {
        self.tape.rec(OpKind::ExpOrigin, &[self, sqrt_k])
    }

    /// Spatial block of `log_O(self)`.
    pub fn log_origin(self, sqrt_k: Self) -> Self {
        self.tape.rec(OpKind::LogOrigin, &[self, sqrt_k])
    }

    /// Rescales a time-like vector onto the hyperboloid.
    pub fn project(self, sqrt_k: Self) -> Self {
        self.tape.rec(OpKind::Project, &[self, sqrt_k])
    }

    pub fn time_features(self, t: f64) -> Self {
        self.tape.rec(OpKind::TimeFeatures(t), &[self])
    }

    pub fn logsumexp(self) -> Self {
        self.tape.rec(OpKind::LogSumExp, &[self])
    }

    /// `self` is a row-major `rows × cols` matrix.
    pub fn matvec(self, rows: usize, cols: usize, v: Self) -> Self {
        self.tape.rec(OpKind::MatVec { rows, cols }, &[self, v])
    }
}

macro_rules! binop {
    ($tr:ident, $m:ident, $kind:expr) => {
        impl<'t> $tr for Var<'t> {
            type Output = Var<'t>;
            fn $m(self, rhs: Var<'t>) -> Var<'t> {
                self.tape.rec($kind, &[self, rhs])
            }
        }
        impl<'t> $tr<f64> for Var<'t> {
            type Output = Var<'t>;
            fn $m(self, rhs: f64) -> Var<'t> {
                let c = self.tape.scalar(rhs);
                self.tape.rec($kind, &[self, c])
            }
        }
        impl<'t> $tr<Var<'t>> for f64 {
            type Output = Var<'t>;
            fn $m(self, rhs: Var<'t>) -> Var<'t> {
                let c = rhs.tape.scalar(self);
                rhs.tape.rec($kind, &[c, rhs])
            }
        }
    };
}

binop!(Add, add, OpKind::Add);
binop!(Sub, sub, OpKind::Sub);
binop!(Mul, mul, OpKind::Mul);
binop!(Div, div, OpKind::Div);

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.rec(OpKind::Neg, &[self])
    }
}
