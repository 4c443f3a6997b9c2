//! Reverse-mode algorithmic differentiation over a recorded tape.
//!
//! A [`Tape`] is a flat, append-only list of nodes in topological order. It
//! is generic over the [`Scalar`] it carries, so the same recording code
//! yields ordinary gradients for `f64` and interval adjoints (enclosures of
//! every pointwise partial over an input box) for [`Interval`].
//!
//! For `f64` tapes the reverse sweep can itself be recorded onto a fresh tape
//! ([`Tape::reverse_recorded`]); differentiating that tape gives mixed second
//! derivatives, which is what a loss on input gradients needs.
//!
//! ```
//! use sobolev_prune::tape::Tape;
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.input(3.0);
//! let y = tape.mul(x, x);
//! tape.set_output(y);
//! let adj = tape.reverse(1.0).unwrap();
//! assert_eq!(adj[x], 6.0);
//! ```

use std::fmt::Debug;
use std::ops::{Add, Index, Mul, Neg, Sub};

use thiserror::Error;

use crate::interval::{Interval, IntervalError};
use crate::special;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TapeError {
    #[error("tape has no output node")]
    NoOutput,
    #[error("expected {expected} input values, got {got}")]
    InputCount { expected: usize, got: usize },
    #[error("unsupported operation: {0}")]
    Unsupported(&'static str),
    #[error(transparent)]
    Interval(#[from] IntervalError),
}

/// Number type a tape can carry.
pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + 'static
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(v: f64) -> Self;
    fn try_div(self, rhs: Self) -> Result<Self, TapeError>;
    fn try_ln(self) -> Result<Self, TapeError>;
    fn square(self) -> Self;
    fn exp(self) -> Self;
    fn cos(self) -> Self;
    fn sin(self) -> Self;
    fn relu(self) -> Self;
    /// Heaviside step with `step(0) = 1`.
    fn step(self) -> Self;
    fn sigmoid(self) -> Self;
    fn sigmoid_deriv(self) -> Self;
    fn silu(self) -> Self;
    fn silu_deriv(self) -> Self;
    fn silu_second_deriv(self) -> Self;
    fn norm_cdf(self) -> Self;
    fn norm_pdf(self) -> Self;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn try_div(self, rhs: Self) -> Result<Self, TapeError> {
        Ok(self / rhs)
    }
    fn try_ln(self) -> Result<Self, TapeError> {
        Ok(self.ln())
    }
    fn square(self) -> Self {
        self * self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn relu(self) -> Self {
        special::relu(self)
    }
    fn step(self) -> Self {
        special::step(self)
    }
    fn sigmoid(self) -> Self {
        special::sigmoid(self)
    }
    fn sigmoid_deriv(self) -> Self {
        special::sigmoid_deriv(self)
    }
    fn silu(self) -> Self {
        special::silu(self)
    }
    fn silu_deriv(self) -> Self {
        special::silu_deriv(self)
    }
    fn silu_second_deriv(self) -> Self {
        special::silu_second_deriv(self)
    }
    fn norm_cdf(self) -> Self {
        special::norm_cdf(self)
    }
    fn norm_pdf(self) -> Self {
        special::norm_pdf(self)
    }
}

impl Scalar for Interval {
    fn zero() -> Self {
        Interval::ZERO
    }
    fn one() -> Self {
        Interval::ONE
    }
    fn from_f64(v: f64) -> Self {
        Interval::point(v)
    }
    fn try_div(self, rhs: Self) -> Result<Self, TapeError> {
        Ok(self.checked_div(rhs)?)
    }
    fn try_ln(self) -> Result<Self, TapeError> {
        Ok(Interval::ln(self)?)
    }
    fn square(self) -> Self {
        Interval::square(self)
    }
    fn exp(self) -> Self {
        Interval::exp(self)
    }
    fn cos(self) -> Self {
        Interval::cos(self)
    }
    fn sin(self) -> Self {
        Interval::sin(self)
    }
    fn relu(self) -> Self {
        Interval::relu(self)
    }
    fn step(self) -> Self {
        Interval::step(self)
    }
    fn sigmoid(self) -> Self {
        Interval::sigmoid(self)
    }
    fn sigmoid_deriv(self) -> Self {
        Interval::sigmoid_deriv(self)
    }
    fn silu(self) -> Self {
        Interval::silu(self)
    }
    fn silu_deriv(self) -> Self {
        Interval::silu_deriv(self)
    }
    fn silu_second_deriv(self) -> Self {
        let s = self.sigmoid();
        let one = Interval::ONE;
        self.sigmoid_deriv() * (Interval::point(2.0) + self * (one - s * 2.0))
    }
    fn norm_cdf(self) -> Self {
        Interval::norm_cdf(self)
    }
    fn norm_pdf(self) -> Self {
        Interval::norm_pdf(self)
    }
}

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Input,
    Const,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Square(Var),
    Exp(Var),
    Ln(Var),
    Cos(Var),
    Sin(Var),
    Relu(Var),
    Step(Var),
    Sigmoid(Var),
    Silu(Var),
    SiluDeriv(Var),
    NormCdf(Var),
    NormPdf(Var),
}

#[derive(Debug, Clone)]
struct Node<S> {
    op: Op,
    value: S,
}

/// Recorded computation graph.
#[derive(Debug, Clone)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    inputs: Vec<Var>,
    output: Option<Var>,
}

/// Adjoints of every node after a reverse sweep, indexed by [`Var`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adjoints<S>(Vec<S>);

impl<S> Index<Var> for Adjoints<S> {
    type Output = S;
    fn index(&self, v: Var) -> &S {
        &self.0[v.0]
    }
}

impl<S: Copy> Adjoints<S> {
    pub fn of(&self, vars: &[Var]) -> Vec<S> {
        vars.iter().map(|&v| self.0[v.0]).collect()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.0
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            inputs: Vec::new(),
            output: None,
        }
    }

    /// Records `f` over fresh input nodes holding `inputs`; the returned
    /// variable becomes the tape output.
    pub fn record<F>(inputs: &[S], f: F) -> Result<Self, TapeError>
    where
        F: FnOnce(&mut Tape<S>, &[Var]) -> Result<Var, TapeError>,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|&v| tape.input(v)).collect();
        let out = f(&mut tape, &vars)?;
        tape.set_output(out);
        Ok(tape)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn inputs(&self) -> &[Var] {
        &self.inputs
    }

    pub fn output(&self) -> Option<Var> {
        self.output
    }

    pub fn set_output(&mut self, v: Var) {
        self.output = Some(v);
    }

    pub fn value(&self, v: Var) -> S {
        self.nodes[v.0].value
    }

    /// Primal value of the output node.
    pub fn output_value(&self) -> Result<S, TapeError> {
        Ok(self.value(self.output.ok_or(TapeError::NoOutput)?))
    }

    fn push(&mut self, op: Op, value: S) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: S) -> Var {
        let v = self.push(Op::Input, value);
        self.inputs.push(v);
        v
    }

    pub fn constant(&mut self, value: S) -> Var {
        self.push(Op::Const, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let v = self.value(a).try_div(self.value(b))?;
        Ok(self.push(Op::Div(a, b), v))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = -self.value(a);
        self.push(Op::Neg(a), v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).square();
        self.push(Op::Square(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).exp();
        self.push(Op::Exp(a), v)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, TapeError> {
        let v = self.value(a).try_ln()?;
        Ok(self.push(Op::Ln(a), v))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let v = self.value(a).cos();
        self.push(Op::Cos(a), v)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let v = self.value(a).sin();
        self.push(Op::Sin(a), v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).relu();
        self.push(Op::Relu(a), v)
    }

    pub fn step(&mut self, a: Var) -> Var {
        let v = self.value(a).step();
        self.push(Op::Step(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).sigmoid();
        self.push(Op::Sigmoid(a), v)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).silu();
        self.push(Op::Silu(a), v)
    }

    pub fn silu_deriv(&mut self, a: Var) -> Var {
        let v = self.value(a).silu_deriv();
        self.push(Op::SiluDeriv(a), v)
    }

    pub fn norm_cdf(&mut self, a: Var) -> Var {
        let v = self.value(a).norm_cdf();
        self.push(Op::NormCdf(a), v)
    }

    pub fn norm_pdf(&mut self, a: Var) -> Var {
        let v = self.value(a).norm_pdf();
        self.push(Op::NormPdf(a), v)
    }

    /// Left-to-right sum `((v0 + v1) + v2) + ...`; `None` for an empty slice.
    pub fn sum(&mut self, vars: &[Var]) -> Option<Var> {
        let (first, rest) = vars.split_first()?;
        Some(rest.iter().fold(*first, |acc, &v| self.add(acc, v)))
    }

    /// Re-evaluates every node with new input values, keeping the graph.
    pub fn replay(&mut self, inputs: &[S]) -> Result<S, TapeError> {
        if inputs.len() != self.inputs.len() {
            return Err(TapeError::InputCount {
                expected: self.inputs.len(),
                got: inputs.len(),
            });
        }
        let mut next_input = inputs.iter();
        for i in 0..self.nodes.len() {
            let val = |v: Var| self.nodes[v.0].value;
            let value = match self.nodes[i].op {
                Op::Input => *next_input.next().expect("input count checked"),
                Op::Const => self.nodes[i].value,
                Op::Add(a, b) => val(a) + val(b),
                Op::Sub(a, b) => val(a) - val(b),
                Op::Mul(a, b) => val(a) * val(b),
                Op::Div(a, b) => val(a).try_div(val(b))?,
                Op::Neg(a) => -val(a),
                Op::Square(a) => val(a).square(),
                Op::Exp(a) => val(a).exp(),
                Op::Ln(a) => val(a).try_ln()?,
                Op::Cos(a) => val(a).cos(),
                Op::Sin(a) => val(a).sin(),
                Op::Relu(a) => val(a).relu(),
                Op::Step(a) => val(a).step(),
                Op::Sigmoid(a) => val(a).sigmoid(),
                Op::Silu(a) => val(a).silu(),
                Op::SiluDeriv(a) => val(a).silu_deriv(),
                Op::NormCdf(a) => val(a).norm_cdf(),
                Op::NormPdf(a) => val(a).norm_pdf(),
            };
            self.nodes[i].value = value;
        }
        self.output_value()
    }

    /// Reverse sweep seeded at the tape output.
    pub fn reverse(&self, seed: S) -> Result<Adjoints<S>, TapeError> {
        let out = self.output.ok_or(TapeError::NoOutput)?;
        self.reverse_from(out, seed)
    }

    /// Reverse sweep seeded at an arbitrary node.
    pub fn reverse_from(&self, out: Var, seed: S) -> Result<Adjoints<S>, TapeError> {
        let mut adj = vec![S::zero(); self.nodes.len()];
        adj[out.0] = seed;
        for i in (0..=out.0).rev() {
            let bar = adj[i];
            if bar == S::zero() {
                continue;
            }
            let val = |v: Var| self.nodes[v.0].value;
            match self.nodes[i].op {
                Op::Input | Op::Const | Op::Step(_) => {}
                Op::Add(a, b) => {
                    adj[a.0] = adj[a.0] + bar;
                    adj[b.0] = adj[b.0] + bar;
                }
                Op::Sub(a, b) => {
                    adj[a.0] = adj[a.0] + bar;
                    adj[b.0] = adj[b.0] - bar;
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(a), val(b));
                    adj[a.0] = adj[a.0] + bar * vb;
                    adj[b.0] = adj[b.0] + bar * va;
                }
                Op::Div(a, b) => {
                    let vb = val(b);
                    let quotient = self.nodes[i].value;
                    adj[a.0] = adj[a.0] + bar.try_div(vb)?;
                    adj[b.0] = adj[b.0] - (bar * quotient).try_div(vb)?;
                }
                Op::Neg(a) => adj[a.0] = adj[a.0] - bar,
                Op::Square(a) => adj[a.0] = adj[a.0] + bar * val(a) * S::from_f64(2.0),
                Op::Exp(a) => adj[a.0] = adj[a.0] + bar * self.nodes[i].value,
                Op::Ln(a) => adj[a.0] = adj[a.0] + bar.try_div(val(a))?,
                Op::Cos(a) => adj[a.0] = adj[a.0] - bar * val(a).sin(),
                Op::Sin(a) => adj[a.0] = adj[a.0] + bar * val(a).cos(),
                Op::Relu(a) => adj[a.0] = adj[a.0] + bar * val(a).step(),
                Op::Sigmoid(a) => adj[a.0] = adj[a.0] + bar * val(a).sigmoid_deriv(),
                Op::Silu(a) => adj[a.0] = adj[a.0] + bar * val(a).silu_deriv(),
                Op::SiluDeriv(a) => adj[a.0] = adj[a.0] + bar * val(a).silu_second_deriv(),
                Op::NormCdf(a) => adj[a.0] = adj[a.0] + bar * val(a).norm_pdf(),
                Op::NormPdf(a) => adj[a.0] = adj[a.0] - bar * val(a) * self.nodes[i].value,
            }
        }
        Ok(Adjoints(adj))
    }
}

/// A reverse sweep recorded onto a fresh tape.
#[derive(Debug, Clone)]
pub struct RecordedAdjoint {
    /// Holds a copy of the forward graph followed by the adjoint computation.
    /// Its inputs correspond one-to-one, in order, to the original inputs.
    pub tape: Tape<f64>,
    /// The original output, as a node of `tape`.
    pub output: Var,
    /// Adjoint of each original input, as a node of `tape`.
    pub input_adjoints: Vec<Var>,
}

impl RecordedAdjoint {
    pub fn input_adjoint_values(&self) -> Vec<f64> {
        self.input_adjoints.iter().map(|&v| self.tape.value(v)).collect()
    }
}

impl Tape<f64> {
    /// Records the reverse sweep (seeded with the constant `seed` at the
    /// output) as new tape operations.
    ///
    /// The forward values of [`RecordedAdjoint::input_adjoints`] equal
    /// `reverse(seed)` at the inputs; reversing any scalar built from them
    /// yields second derivatives.
    pub fn reverse_recorded(&self, seed: f64) -> Result<RecordedAdjoint, TapeError> {
        let out = self.output.ok_or(TapeError::NoOutput)?;
        let mut t = Tape::<f64>::new();
        let mut map = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let m = |v: Var| map[v.0];
            let nv = match node.op {
                Op::Input => t.input(node.value),
                Op::Const => t.constant(node.value),
                Op::Add(a, b) => t.add(m(a), m(b)),
                Op::Sub(a, b) => t.sub(m(a), m(b)),
                Op::Mul(a, b) => t.mul(m(a), m(b)),
                Op::Div(a, b) => t.div(m(a), m(b))?,
                Op::Neg(a) => t.neg(m(a)),
                Op::Square(a) => t.square(m(a)),
                Op::Exp(a) => t.exp(m(a)),
                Op::Ln(a) => t.ln(m(a))?,
                Op::Cos(a) => t.cos(m(a)),
                Op::Sin(a) => t.sin(m(a)),
                Op::Relu(a) => t.relu(m(a)),
                Op::Step(a) => t.step(m(a)),
                Op::Sigmoid(a) => t.sigmoid(m(a)),
                Op::Silu(a) => t.silu(m(a)),
                Op::SiluDeriv(a) => t.silu_deriv(m(a)),
                Op::NormCdf(a) => t.norm_cdf(m(a)),
                Op::NormPdf(a) => t.norm_pdf(m(a)),
            };
            map.push(nv);
        }

        let mut adj: Vec<Option<Var>> = vec![None; self.nodes.len()];
        adj[out.0] = Some(t.constant(seed));
        let accumulate = |t: &mut Tape<f64>, slot: &mut Option<Var>, contrib: Var| {
            *slot = Some(match *slot {
                Some(prev) => t.add(prev, contrib),
                None => contrib,
            });
        };
        for i in (0..=out.0).rev() {
            let Some(bar) = adj[i] else { continue };
            let own = map[i];
            match self.nodes[i].op {
                Op::Input | Op::Const | Op::Step(_) => {}
                Op::Add(a, b) => {
                    accumulate(&mut t, &mut adj[a.0], bar);
                    accumulate(&mut t, &mut adj[b.0], bar);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut t, &mut adj[a.0], bar);
                    let c = t.neg(bar);
                    accumulate(&mut t, &mut adj[b.0], c);
                }
                Op::Mul(a, b) => {
                    let ca = t.mul(bar, map[b.0]);
                    accumulate(&mut t, &mut adj[a.0], ca);
                    let cb = t.mul(bar, map[a.0]);
                    accumulate(&mut t, &mut adj[b.0], cb);
                }
                Op::Div(a, b) => {
                    let ca = t.div(bar, map[b.0])?;
                    accumulate(&mut t, &mut adj[a.0], ca);
                    let q = t.mul(bar, own);
                    let q = t.div(q, map[b.0])?;
                    let cb = t.neg(q);
                    accumulate(&mut t, &mut adj[b.0], cb);
                }
                Op::Neg(a) => {
                    let c = t.neg(bar);
                    accumulate(&mut t, &mut adj[a.0], c);
                }
                Op::Square(a) => {
                    let two = t.constant(2.0);
                    let d = t.mul(two, map[a.0]);
                    let c = t.mul(bar, d);
                    accumulate(&mut t, &mut adj[a.0], c);
                }
                Op::Exp(a) => {
                    let c = t.mul(bar, own);
                    accumulate(&mut t, &mut adj[a.0], c);
                }
                Op::Ln(a) => {
                    let c = t.div(bar, map[a.0])?;
                    accumulate(&mut t, &mut adj[a.0], c);
                }
                Op::Cos(a) => {
                    let s = t.sin(map[a.0]);
                    let p = t.mul(bar, s);
                    let c = t.neg(p);
                    accumulate(&mut t, &mut adj[a.0], c);
                }
                Op::Sin(a) => {
                    let co = t.cos(map[a.0]);
                    let c = t.mul(bar, co);
                    accumulate(&mut t, &mut adj[a.0], c);
                }
                Op::Relu(a) => {
                    let d = t.step(map[a.0]);
                    let c = t.mul(bar, d);
                    accumulate(&mut t, &mut adj[a.0], c);
                }
                Op::Sigmoid(a) => {
                    let one = t.constant(1.0);
                    let rest = t.sub(one, own);
                    let d = t.mul(own, rest);
                    let c = t.mul(bar, d);
                    accumulate(&mut t, &mut adj[a.0], c);
                }
                Op::Silu(a) => {
                    let d = t.silu_deriv(map[a.0]);
                    let c = t.mul(bar, d);
                    accumulate(&mut t, &mut adj[a.0], c);
                }
                Op::SiluDeriv(_) => {
                    // third-order: the derivative of SiLU'' is not representable
                    return Err(TapeError::Unsupported("derivative of silu_deriv"));
                }
                Op::NormCdf(a) => {
                    let d = t.norm_pdf(map[a.0]);
                    let c = t.mul(bar, d);
                    accumulate(&mut t, &mut adj[a.0], c);
                }
                Op::NormPdf(a) => {
                    let d = t.mul(map[a.0], own);
                    let p = t.mul(bar, d);
                    let c = t.neg(p);
                    accumulate(&mut t, &mut adj[a.0], c);
                }
            }
        }

        let input_adjoints = self
            .inputs
            .iter()
            .map(|v| adj[v.0].unwrap_or_else(|| t.constant(0.0)))
            .collect();
        Ok(RecordedAdjoint {
            tape: t,
            output: map[out.0],
            input_adjoints,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_fn(t: &mut Tape<f64>, x: &[Var]) -> Result<Var, TapeError> {
        let p = t.mul(x[0], x[1]);
        let l = t.ln(p)?;
        let q = t.div(x[0], x[1])?;
        let c = t.cos(q);
        Ok(t.add(l, c))
    }

    fn direct(x0: f64, x1: f64) -> f64 {
        (x0 * x1).ln() + (x0 / x1).cos()
    }

    #[test]
    fn identity_tape() {
        let tape = Tape::record(&[5.0], |_, x| Ok(x[0])).unwrap();
        assert_eq!(tape.output_value().unwrap(), 5.0);
        assert_eq!(tape.inputs().len(), 1);
        assert_eq!(tape.output(), Some(tape.inputs()[0]));
        let adj = tape.reverse(1.0).unwrap();
        assert_eq!(adj[tape.inputs()[0]], 1.0);
    }

    #[test]
    fn forward_matches_direct_evaluation_bitwise() {
        let tape = Tape::record(&[2.0, 3.0], example_fn).unwrap();
        assert_eq!(tape.output_value().unwrap(), direct(2.0, 3.0));
        assert!((direct(2.0, 3.0) - 2.577_646_730_005_003).abs() < 1e-14);
    }

    #[test]
    fn gradient_against_central_differences() {
        let tape = Tape::record(&[2.0, 3.0], example_fn).unwrap();
        let adj = tape.reverse(1.0).unwrap();
        let g = adj.of(tape.inputs());
        let h = 1e-6;
        let fd0 = (direct(2.0 + h, 3.0) - direct(2.0 - h, 3.0)) / (2.0 * h);
        let fd1 = (direct(2.0, 3.0 + h) - direct(2.0, 3.0 - h)) / (2.0 * h);
        assert!((g[0] - fd0).abs() < 1e-8, "{} vs {fd0}", g[0]);
        assert!((g[1] - fd1).abs() < 1e-8, "{} vs {fd1}", g[1]);
        // frozen from the difference quotients above
        assert!((g[0] - 0.293_876_732_310_088).abs() < 1e-12);
        assert!((g[1] - 0.470_748_845_126_608).abs() < 1e-12);
    }

    #[test]
    fn linear_adjoint_is_the_coefficient() {
        for c in [-3.5, 0.0, 2.0, 1e6] {
            let tape = Tape::record(&[0.7], |t, x| {
                let k = t.constant(c);
                Ok(t.mul(k, x[0]))
            })
            .unwrap();
            assert_eq!(tape.reverse(1.0).unwrap()[tape.inputs()[0]], c);
        }
    }

    #[test]
    fn unused_nodes_have_zero_adjoint() {
        let tape = Tape::record(&[1.0, 2.0], |t, x| {
            let _dead = t.exp(x[1]);
            Ok(t.square(x[0]))
        })
        .unwrap();
        let adj = tape.reverse(1.0).unwrap();
        assert_eq!(adj[tape.inputs()[1]], 0.0);
        assert_eq!(adj[tape.output().unwrap()], 1.0);
    }

    #[test]
    fn missing_output_is_an_error() {
        let mut tape = Tape::<f64>::new();
        tape.input(1.0);
        assert_eq!(tape.reverse(1.0), Err(TapeError::NoOutput));
    }

    #[test]
    fn replay_reevaluates_graph() {
        let mut tape = Tape::record(&[2.0, 3.0], example_fn).unwrap();
        let v = tape.replay(&[4.0, 1.5]).unwrap();
        assert_eq!(v, direct(4.0, 1.5));
        assert!(matches!(tape.replay(&[1.0]), Err(TapeError::InputCount { .. })));
    }

    #[test]
    fn interval_division_by_zero_propagates() {
        let err = Tape::record(&[Interval::new(-1.0, 1.0).unwrap()], |t, x| {
            let one = t.constant(Interval::ONE);
            t.div(one, x[0])
        });
        assert!(matches!(err, Err(TapeError::Interval(_))));
    }

    #[test]
    fn recorded_reverse_of_weighted_square() {
        // N = w·x², dN/dx = 2wx, d/dw (dN/dx) = 2x
        let tape = Tape::record(&[3.0, 5.0], |t, v| {
            let sq = t.square(v[1]);
            Ok(t.mul(v[0], sq))
        })
        .unwrap();
        let rec = tape.reverse_recorded(1.0).unwrap();
        assert_eq!(rec.input_adjoint_values(), vec![25.0, 30.0]);
        let mut t2 = rec.tape.clone();
        t2.set_output(rec.input_adjoints[1]);
        let second = t2.reverse(1.0).unwrap();
        assert_eq!(second[t2.inputs()[0]], 10.0);
    }

    #[test]
    fn recorded_reverse_of_silu_unit() {
        // N = silu(w·x + b); mixed derivative d/dw of dN/dx
        let f = |w: f64, b: f64, x: f64| -> f64 {
            let tape = Tape::record(&[w, b, x], |t, v| {
                let wx = t.mul(v[0], v[2]);
                let k = t.add(wx, v[1]);
                Ok(t.silu(k))
            })
            .unwrap();
            tape.reverse(1.0).unwrap()[tape.inputs()[2]]
        };
        let tape = Tape::record(&[1.0, 0.0, 1.0], |t, v| {
            let wx = t.mul(v[0], v[2]);
            let k = t.add(wx, v[1]);
            Ok(t.silu(k))
        })
        .unwrap();
        let rec = tape.reverse_recorded(1.0).unwrap();
        let mut t2 = rec.tape.clone();
        t2.set_output(rec.input_adjoints[2]);
        let mixed = t2.reverse(1.0).unwrap()[t2.inputs()[0]];
        let h = 1e-6;
        let fd = (f(1.0 + h, 0.0, 1.0) - f(1.0 - h, 0.0, 1.0)) / (2.0 * h);
        assert!((mixed - fd).abs() / fd.abs() < 1e-6, "{mixed} vs {fd}");
        assert!((mixed - 1.230_036_630_681_502).abs() < 1e-12);
    }

    #[test]
    fn recorded_reverse_without_inputs() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(2.0);
        let y = tape.exp(c);
        tape.set_output(y);
        let rec = tape.reverse_recorded(1.0).unwrap();
        assert!(rec.input_adjoints.is_empty());
    }

    #[test]
    fn reverse_is_deterministic() {
        let tape = Tape::record(&[2.0, 3.0], example_fn).unwrap();
        let a = tape.reverse(1.0).unwrap();
        let b = tape.reverse(1.0).unwrap();
        let bits = |x: &Adjoints<f64>| x.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
