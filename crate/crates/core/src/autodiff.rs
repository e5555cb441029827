//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation eagerly: the forward value is computed
//! on the spot and kept on the node, so the backward rules read operand values
//! straight from their parents. Node ids are handed out in recording order,
//! which makes the id sequence a topological order of the graph.
//!
//! Iterative kernels are differentiated by unrolling them onto the tape; no
//! operation has a hand-derived adjoint beyond the elementary rules below.

use crate::densemat::DenseMatrix;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    AddIdentity(Var),
    Hadamard(Var, Var),
    SumAll(Var),
    FrobeniusSq(Var),
    Dot(Var, Var),
    ColumnDots(Var, Var),
    MulScalar(Var, Var),
    PowScalar(Var, f64),
    PseudoHuber(Var, f64),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: DenseMatrix,
    needs_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    adjoints: Vec<Option<DenseMatrix>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: DenseMatrix) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// An input that never receives an adjoint (probe vectors, masks, ...).
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)
            .as_scalar()
            .expect("scalar() called on a non-1x1 node")
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.record(Op::MatMul(a, b), value, &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.record(Op::Transpose(a), value, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.record(Op::Add(a, b), value, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.record(Op::Sub(a, b), value, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).scale(factor);
        self.record(Op::Scale(a, factor), value, &[a])
    }

    /// `a + shift·I` for square `a`.
    pub fn add_identity(&mut self, a: Var, shift: f64) -> Result<Var> {
        let value = self.value(a).add_identity(shift)?;
        Ok(self.record(Op::AddIdentity(a), value, &[a]))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.record(Op::Hadamard(a, b), value, &[a, b]))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = DenseMatrix::scalar(self.value(a).sum());
        self.record(Op::SumAll(a), value, &[a])
    }

    /// Arithmetic mean of all entries, as `sum_all(a) · (1/len)`.
    pub fn mean(&mut self, a: Var) -> Var {
        let count = self.value(a).as_slice().len();
        let total = self.sum_all(a);
        self.scale(total, 1.0 / count as f64)
    }

    pub fn frobenius_sq(&mut self, a: Var) -> Var {
        let value = DenseMatrix::scalar(self.value(a).frobenius_sq());
        self.record(Op::FrobeniusSq(a), value, &[a])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = DenseMatrix::scalar(self.value(a).dot(self.value(b))?);
        Ok(self.record(Op::Dot(a, b), value, &[a, b]))
    }

    /// Row vector of per-column inner products.
    pub fn column_dots(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).column_dots(self.value(b))?;
        Ok(self.record(Op::ColumnDots(a, b), value, &[a, b]))
    }

    /// Matrix `a` multiplied by the 1×1 node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let factor = self.scalar_operand("mul_scalar", s)?;
        let value = self.value(a).scale(factor);
        Ok(self.record(Op::MulScalar(a, s), value, &[a, s]))
    }

    /// `s^exponent` for a 1×1 node `s`.
    pub fn pow_scalar(&mut self, s: Var, exponent: f64) -> Result<Var> {
        let base = self.scalar_operand("pow_scalar", s)?;
        let value = DenseMatrix::scalar(base.powf(exponent));
        Ok(self.record(Op::PowScalar(s, exponent), value, &[s]))
    }

    /// Entrywise `sqrt(x² + δ²) − δ`.
    pub fn pseudo_huber(&mut self, a: Var, delta: f64) -> Result<Var> {
        if delta.is_nan() || delta <= 0.0 {
            return Err(Error::contract(format!(
                "pseudo-Huber scale must be positive, got {delta}"
            )));
        }
        let value = self.value(a).map(|x| pseudo_huber(x, delta));
        Ok(self.record(Op::PseudoHuber(a, delta), value, &[a]))
    }

    /// Propagates adjoints from the scalar `root` to every node it depends on.
    ///
    /// Previous adjoints are discarded. Nodes recorded after `root` are not
    /// visited.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).shape() != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a 1x1 root, got {:?}",
                self.value(root).shape()
            )));
        }
        let mut adj: Vec<Option<DenseMatrix>> = vec![None; self.nodes.len()];
        adj[root.0] = Some(DenseMatrix::scalar(1.0));

        for id in (0..=root.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            self.propagate(id, &g, &mut adj)?;
            adj[id] = Some(g);
        }
        self.adjoints = adj;
        Ok(())
    }

    /// Adjoint of `v` from the last backward pass, if it was reached.
    pub fn adjoint(&self, v: Var) -> Option<&DenseMatrix> {
        self.adjoints.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of `v`, or zeros of the right shape when `v` was not reached.
    pub fn grad(&self, v: Var) -> DenseMatrix {
        self.adjoint(v).cloned().unwrap_or_else(|| {
            let (r, c) = self.value(v).shape();
            DenseMatrix::zeros(r, c)
        })
    }

    fn scalar_operand(&self, op: &str, s: Var) -> Result<f64> {
        self.value(s).as_scalar().ok_or_else(|| {
            Error::contract(format!(
                "{op} expects a 1x1 operand, got {:?}",
                self.value(s).shape()
            ))
        })
    }

    fn push(&mut self, op: Op, value: DenseMatrix, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op, value: DenseMatrix, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push(op, value, needs_grad)
    }

    fn propagate(&self, id: usize, g: &DenseMatrix, adj: &mut [Option<DenseMatrix>]) -> Result<()> {
        let node = &self.nodes[id];
        if !node.needs_grad {
            return Ok(());
        }
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let g0 = || g.as_scalar().expect("scalar-valued node");

        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(a) {
                    accumulate(adj, a, g.matmul_nt(val(b))?)?;
                }
                if wants(b) {
                    accumulate(adj, b, val(a).matmul_tn(g)?)?;
                }
            }
            Op::Transpose(a) => accumulate(adj, a, g.transpose())?,
            Op::Add(a, b) => {
                if wants(a) {
                    accumulate(adj, a, g.clone())?;
                }
                if wants(b) {
                    accumulate(adj, b, g.clone())?;
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    accumulate(adj, a, g.clone())?;
                }
                if wants(b) {
                    accumulate(adj, b, g.scale(-1.0))?;
                }
            }
            Op::Scale(a, c) => accumulate(adj, a, g.scale(c))?,
            Op::AddIdentity(a) => accumulate(adj, a, g.clone())?,
            Op::Hadamard(a, b) => {
                if wants(a) {
                    accumulate(adj, a, g.hadamard(val(b))?)?;
                }
                if wants(b) {
                    accumulate(adj, b, g.hadamard(val(a))?)?;
                }
            }
            Op::SumAll(a) => {
                let (r, c) = val(a).shape();
                accumulate(adj, a, DenseMatrix::filled(r, c, g0()))?;
            }
            Op::FrobeniusSq(a) => accumulate(adj, a, val(a).scale(2.0 * g0()))?,
            Op::Dot(a, b) => {
                if wants(a) {
                    accumulate(adj, a, val(b).scale(g0()))?;
                }
                if wants(b) {
                    accumulate(adj, b, val(a).scale(g0()))?;
                }
            }
            Op::ColumnDots(a, b) => {
                let weights = g.as_slice();
                let scale_cols = |m: &DenseMatrix| {
                    DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)] * weights[j])
                };
                if wants(a) {
                    accumulate(adj, a, scale_cols(val(b)))?;
                }
                if wants(b) {
                    accumulate(adj, b, scale_cols(val(a)))?;
                }
            }
            Op::MulScalar(a, s) => {
                let factor = val(s).as_scalar().expect("scalar operand");
                if wants(a) {
                    accumulate(adj, a, g.scale(factor))?;
                }
                if wants(s) {
                    accumulate(adj, s, DenseMatrix::scalar(g.dot(val(a))?))?;
                }
            }
            Op::PowScalar(s, e) => {
                let base = val(s).as_scalar().expect("scalar operand");
                accumulate(adj, s, DenseMatrix::scalar(g0() * e * base.powf(e - 1.0)))?;
            }
            Op::PseudoHuber(a, delta) => {
                let slope = val(a).map(|x| pseudo_huber_slope(x, delta));
                accumulate(adj, a, g.hadamard(&slope)?)?;
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<DenseMatrix>], v: Var, contribution: DenseMatrix) -> Result<()> {
    match &mut adj[v.0] {
        Some(existing) => existing.add_scaled_in_place(1.0, &contribution),
        slot @ None => {
            *slot = Some(contribution);
            Ok(())
        }
    }
}

/// Smooth surrogate for `|x|`: `sqrt(x² + δ²) − δ`.
pub fn pseudo_huber(x: f64, delta: f64) -> f64 {
    // x²/(sqrt(x²+δ²)+δ) avoids cancellation for |x| ≪ δ
    let x2 = x * x;
    x2 / ((x2 + delta * delta).sqrt() + delta)
}

/// Derivative of [`pseudo_huber`]: `x / sqrt(x² + δ²)`.
pub fn pseudo_huber_slope(x: f64, delta: f64) -> f64 {
    x / (x * x + delta * delta).sqrt()
}
