//! Reverse-mode differentiation over vector-valued nodes.
//!
//! A [`Tape`] evaluates a composition of primitives eagerly and, when
//! recording, keeps enough of each operation to sweep adjoints back to the
//! parameters. Matrix weights are read straight out of the borrowed
//! [`ParamVector`], so a large weight matrix is never copied onto the tape.
//!
//! A detached tape runs the same kernels without keeping operations, which
//! makes recorded and unrecorded evaluations bit-identical.

use super::params::{ParamVector, SegRef};
use crate::error::{Error, Result};

/// Denominator guard for norms and cosine similarity.
pub const GUARD_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    MatVec { w: SegRef, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Tanh(Var),
    Dot(Var, Var),
    Norm { a: Var, guarded: bool },
    Cosine { a: Var, b: Var, guarded: bool },
    Sum(Var),
    Concat(Vec<Var>),
    WeightedSum(Vec<(Var, f64)>),
    Slice { a: Var, start: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatVec { .. } => "matvec",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Shift(_) => "shift",
            Op::Tanh(_) => "tanh",
            Op::Dot(..) => "dot",
            Op::Norm { .. } => "norm",
            Op::Cosine { .. } => "cosine",
            Op::Sum(_) => "sum",
            Op::Concat(_) => "concat",
            Op::WeightedSum(_) => "weighted_sum",
            Op::Slice { .. } => "slice",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

pub mod kernels {
    //! Forward kernels shared by recorded and detached evaluation.

    pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), cols);
        (0..rows)
            .map(|r| dot(&w[r * cols..(r + 1) * cols], x))
            .collect()
    }

    #[inline]
    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Returns the norm and whether the zero-vector guard fired.
    pub fn norm(a: &[f64]) -> (f64, bool) {
        let n = dot(a, a).sqrt();
        (n, n < super::GUARD_EPS)
    }

    /// Cosine similarity `a.b / sqrt(|a|^2 |b|^2)`, clamped to `[-1, 1]`.
    /// Returns 0 and `true` when the denominator falls below the guard.
    pub fn cosine(a: &[f64], b: &[f64]) -> (f64, bool) {
        let denom = (dot(a, a) * dot(b, b)).sqrt();
        if denom < super::GUARD_EPS {
            return (0.0, true);
        }
        ((dot(a, b) / denom).clamp(-1.0, 1.0), false)
    }
}

/// Records (or just evaluates) vector-valued primitives over a borrowed
/// parameter vector.
#[derive(Debug)]
pub struct Tape<'p> {
    params: &'p ParamVector,
    nodes: Vec<Node>,
    recording: bool,
    first_non_finite: Option<(usize, &'static str)>,
    guard_hits: usize,
}

impl<'p> Tape<'p> {
    /// A recording tape.
    pub fn new(params: &'p ParamVector) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            recording: true,
            first_non_finite: None,
            guard_hits: 0,
        }
    }

    /// A tape that evaluates values only; [`backward`] rejects it.
    pub fn detached(params: &'p ParamVector) -> Self {
        Tape {
            recording: false,
            ..Tape::new(params)
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn params(&self) -> &'p ParamVector {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Number of norm or cosine evaluations that hit the zero guard.
    pub fn guard_hits(&self) -> usize {
        self.guard_hits
    }

    /// Fails with the first node that produced a non-finite value.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite {
            Some((node, op)) => Err(Error::NumericOverflow { node, op }),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        let id = self.nodes.len();
        if self.first_non_finite.is_none() && value.iter().any(|v| !v.is_finite()) {
            self.first_non_finite = Some((id, op.name()));
        }
        let op = if self.recording { op } else { Op::Leaf };
        self.nodes.push(Node { value, op });
        Var(id)
    }

    /// Constant or differentiable input; its adjoint is available after [`backward`].
    pub fn input(&mut self, values: Vec<f64>) -> Var {
        self.push(values, Op::Leaf)
    }

    pub fn scalar_input(&mut self, value: f64) -> Var {
        self.input(vec![value])
    }

    /// A parameter segment as a vector node.
    pub fn param(&mut self, seg: SegRef) -> Var {
        let value = self.params.slice(seg).to_vec();
        self.push(value, Op::Param(seg.offset))
    }

    /// `W x` with `W` a row-major parameter matrix.
    pub fn matvec(&mut self, w: SegRef, x: Var) -> Var {
        let value = kernels::matvec(self.params.slice(w), w.rows, w.cols, self.value(x));
        self.push(value, Op::MatVec { w, x })
    }

    /// `W x + b`.
    pub fn affine(&mut self, w: SegRef, b: SegRef, x: Var) -> Var {
        let wx = self.matvec(w, x);
        let bias = self.param(b);
        self.add(wx, bias)
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.len(), y.len(), "elementwise operands differ in length");
        x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).iter().map(|x| x * k).collect();
        self.push(v, Op::Scale(a, k))
    }

    /// Adds a constant to every element.
    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).iter().map(|x| x + c).collect();
        self.push(v, Op::Shift(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(v, Op::Tanh(a))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let v = kernels::dot(self.value(a), self.value(b));
        self.push(vec![v], Op::Dot(a, b))
    }

    pub fn norm(&mut self, a: Var) -> Var {
        let (v, guarded) = kernels::norm(self.value(a));
        self.guard_hits += guarded as usize;
        self.push(vec![v], Op::Norm { a, guarded })
    }

    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let (v, guarded) = kernels::cosine(self.value(a), self.value(b));
        self.guard_hits += guarded as usize;
        self.push(vec![v], Op::Cosine { a, b, guarded })
    }

    /// Sum of the elements of one node.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().sum();
        self.push(vec![v], Op::Sum(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let v = parts.iter().flat_map(|&p| self.value(p).iter().copied()).collect();
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a)[start..start + len].to_vec();
        self.push(v, Op::Slice { a, start })
    }

    /// `sum_k w_k x_k` over equally sized nodes. Summation runs in the given order.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        assert!(!terms.is_empty(), "weighted_sum needs at least one term");
        let n = self.value(terms[0].0).len();
        let mut v = vec![0.0; n];
        for &(t, w) in terms {
            let x = self.value(t);
            assert_eq!(x.len(), n, "weighted_sum operands differ in length");
            for (acc, xi) in v.iter_mut().zip(x) {
                *acc += w * xi;
            }
        }
        self.push(v, Op::WeightedSum(terms.to_vec()))
    }

    /// Arithmetic mean of equally sized nodes.
    pub fn mean(&mut self, terms: &[Var]) -> Var {
        let w = 1.0 / terms.len() as f64;
        let weighted: Vec<_> = terms.iter().map(|&t| (t, w)).collect();
        self.weighted_sum(&weighted)
    }
}

/// Adjoints produced by [`backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Gradient with respect to every parameter, aligned with the parameter vector.
    pub params: Vec<f64>,
    adjoints: Vec<Vec<f64>>,
}

impl Gradients {
    /// Adjoint of any node (zero for nodes the output does not depend on).
    pub fn wrt(&self, v: Var) -> &[f64] {
        &self.adjoints[v.0]
    }
}

/// Sweeps adjoints from a scalar output.
pub fn backward(tape: &Tape<'_>, output: Var) -> Result<Gradients> {
    let n = tape.value(output).len();
    if n != 1 {
        return Err(Error::Usage(format!(
            "backward needs a scalar output, node {} has {n} elements; use backward_weighted",
            output.0
        )));
    }
    backward_weighted(tape, output, &[1.0])
}

/// Sweeps adjoints from an output seeded with explicit weights.
pub fn backward_weighted(tape: &Tape<'_>, output: Var, seed: &[f64]) -> Result<Gradients> {
    if !tape.recording {
        return Err(Error::Usage("tape was evaluated without recording".into()));
    }
    if seed.len() != tape.value(output).len() {
        return Err(Error::Usage(format!(
            "seed has {} weights but the output has {} elements",
            seed.len(),
            tape.value(output).len()
        )));
    }
    let weights = tape.params.values();
    let mut grad = vec![0.0; weights.len()];
    let mut adj: Vec<Vec<f64>> = tape.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
    adj[output.0].copy_from_slice(seed);

    for i in (0..=output.0).rev() {
        let (lower, upper) = adj.split_at_mut(i);
        let g = &upper[0];
        if g.iter().all(|&x| x == 0.0) {
            continue;
        }
        let node = &tape.nodes[i];
        let val = |v: Var| tape.nodes[v.0].value.as_slice();
        match &node.op {
            Op::Leaf => {}
            Op::Param(offset) => {
                for (k, gk) in g.iter().enumerate() {
                    grad[offset + k] += gk;
                }
            }
            Op::MatVec { w, x } => {
                let xv = val(*x);
                let wv = &weights[w.offset..w.offset + w.len()];
                let dx = &mut lower[x.0];
                for r in 0..w.rows {
                    let gr = g[r];
                    if gr == 0.0 {
                        continue;
                    }
                    let row = r * w.cols;
                    for c in 0..w.cols {
                        grad[w.offset + row + c] += gr * xv[c];
                        dx[c] += wv[row + c] * gr;
                    }
                }
            }
            Op::Add(a, b) => {
                axpy(&mut lower[a.0], 1.0, g);
                axpy(&mut lower[b.0], 1.0, g);
            }
            Op::Sub(a, b) => {
                axpy(&mut lower[a.0], 1.0, g);
                axpy(&mut lower[b.0], -1.0, g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).to_vec(), val(*b).to_vec());
                for k in 0..g.len() {
                    lower[a.0][k] += g[k] * bv[k];
                    lower[b.0][k] += g[k] * av[k];
                }
            }
            Op::Scale(a, s) => axpy(&mut lower[a.0], *s, g),
            Op::Shift(a) => axpy(&mut lower[a.0], 1.0, g),
            Op::Tanh(a) => {
                let y = &node.value;
                for k in 0..g.len() {
                    lower[a.0][k] += g[k] * (1.0 - y[k] * y[k]);
                }
            }
            Op::Dot(a, b) => {
                let (av, bv) = (val(*a).to_vec(), val(*b).to_vec());
                axpy(&mut lower[a.0], g[0], &bv);
                axpy(&mut lower[b.0], g[0], &av);
            }
            Op::Norm { a, guarded } => {
                if !guarded {
                    let n = node.value[0];
                    axpy(&mut lower[a.0], g[0] / n, val(*a));
                }
            }
            Op::Cosine { a, b, guarded } => {
                if !guarded {
                    let (av, bv) = (val(*a), val(*b));
                    let (aa, bb, ab) = (kernels::dot(av, av), kernels::dot(bv, bv), kernels::dot(av, bv));
                    let denom = (aa * bb).sqrt();
                    let c = ab / denom;
                    let (av, bv) = (av.to_vec(), bv.to_vec());
                    for k in 0..av.len() {
                        lower[a.0][k] += g[0] * (bv[k] / denom - c * av[k] / aa);
                        lower[b.0][k] += g[0] * (av[k] / denom - c * bv[k] / bb);
                    }
                }
            }
            Op::Sum(a) => {
                for x in lower[a.0].iter_mut() {
                    *x += g[0];
                }
            }
            Op::Concat(parts) => {
                let mut at = 0;
                for p in parts {
                    let len = lower[p.0].len();
                    axpy(&mut lower[p.0], 1.0, &g[at..at + len]);
                    at += len;
                }
            }
            Op::WeightedSum(terms) => {
                for &(t, w) in terms {
                    axpy(&mut lower[t.0], w, g);
                }
            }
            Op::Slice { a, start } => {
                let len = g.len();
                axpy(&mut lower[a.0][*start..*start + len], 1.0, g);
            }
        }
    }
    Ok(Gradients {
        params: grad,
        adjoints: adj,
    })
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Evaluates `f` on a recording tape and returns its output values with the tape.
pub fn forward_record<'p, F>(params: &'p ParamVector, input: &[f64], f: F) -> Result<(Vec<f64>, Var, Tape<'p>)>
where
    F: FnOnce(&mut Tape<'p>, Var) -> Var,
{
    let mut tape = Tape::new(params);
    let x = tape.input(input.to_vec());
    let out = f(&mut tape, x);
    tape.check_finite()?;
    Ok((tape.value(out).to_vec(), out, tape))
}

/// Evaluates `f` without recording.
pub fn evaluate<'p, F>(params: &'p ParamVector, input: &[f64], f: F) -> Result<Vec<f64>>
where
    F: FnOnce(&mut Tape<'p>, Var) -> Var,
{
    let mut tape = Tape::detached(params);
    let x = tape.input(input.to_vec());
    let out = f(&mut tape, x);
    tape.check_finite()?;
    Ok(tape.value(out).to_vec())
}
