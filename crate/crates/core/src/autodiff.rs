//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the [`Tape`] holding its forward value
//! and enough state to apply its adjoint rule. Node ids grow monotonically,
//! so inputs always precede their consumers and [`Tape::backward`] is a single
//! reverse sweep.
//!
//! ```
//! use regnet::autodiff::Tape;
//! use regnet::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::vector(&[3.0, 4.0]));
//! let n = tape.l2_norm(x).unwrap();
//! let grads = tape.backward(n).unwrap();
//! assert_eq!(grads.get(x).data(), &[0.6, 0.8]);
//! ```

use crate::error::{Error, Result};
use crate::tensor::{Cholesky, Tensor};

/// Handle to a node on a [`Tape`]. Cheap to copy; values live on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn shape(self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(self) -> usize {
        self.rows
    }

    pub fn cols(self) -> usize {
        self.cols
    }
}

#[derive(Debug)]
enum Op {
    Param,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, f64),
    Matmul(usize, usize),
    Transpose(usize),
    AddColumn(usize, usize),
    Tanh(usize),
    Relu(usize),
    L2Norm(usize),
    FrobeniusSq(usize),
    SolveSpd { a: usize, b: usize, chol: Cholesky },
    LogSumExp(usize),
    Softmax(usize),
    DivScalar(usize, usize),
    Columns { src: usize, start: usize },
    VStack(Vec<usize>),
    Opaque { name: String, inputs: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by node id.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// `∂loss/∂v`; zeros when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match self.grads.get(v.id).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.id];
                Tensor::zeros(r, c)
            }
        }
    }

    /// Whether any gradient reached `v`.
    pub fn reached(&self, v: Var) -> bool {
        matches!(self.grads.get(v.id), Some(Some(_)))
    }
}

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape(format!(
        "{what} of {}x{} and {}x{}",
        a.0, a.1, b.0, b.1
    ))
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.id].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let requires_grad = match op {
            Op::Param => true,
            Op::Constant => false,
            _ => inputs.iter().any(|&i| self.nodes[i].requires_grad),
        };
        let (rows, cols) = value.shape();
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { id, rows, cols }
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Param, &[])
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, &[])
    }

    /// Records a value computed outside the tape from `inputs`. It has no
    /// adjoint rule: a backward pass that needs to cross it fails with
    /// [`Error::UnsupportedOp`].
    pub fn record_opaque(&mut self, name: &str, inputs: &[Var], value: Tensor) -> Var {
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        self.push(
            value,
            Op::Opaque {
                name: name.to_string(),
                inputs: ids.clone(),
            },
            &ids,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if a.shape() != b.shape() {
            return Err(shape_err("add", a.shape(), b.shape()));
        }
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a.id, b.id), &[a.id, b.id]))
    }

    /// Sum of one or more equally shaped values, accumulated left to right.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Contract("add_all of zero terms".into()))?;
        rest.iter().try_fold(*first, |acc, &t| self.add(acc, t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        if a.shape() != b.shape() {
            return Err(shape_err("sub", a.shape(), b.shape()));
        }
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a.id, b.id), &[a.id, b.id]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).scale(factor);
        self.push(value, Op::Scale(a.id, factor), &[a.id])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::Matmul(a.id, b.id), &[a.id, b.id]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a.id), &[a.id])
    }

    /// Adds the column vector `b` to every column of `a`.
    pub fn add_column(&mut self, a: Var, b: Var) -> Result<Var> {
        if b.cols != 1 || b.rows != a.rows {
            return Err(shape_err("add_column", a.shape(), b.shape()));
        }
        let bias = self.value(b);
        let mut value = self.value(a).clone();
        let cols = value.cols();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += bias.data()[i / cols];
        }
        Ok(self.push(value, Op::AddColumn(a.id, b.id), &[a.id, b.id]))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a.id), &[a.id])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(value, Op::Relu(a.id), &[a.id])
    }

    /// Euclidean norm of a column vector, as a `1 × 1` value.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).l2_norm()?;
        Ok(self.push(Tensor::scalar(n), Op::L2Norm(a.id), &[a.id]))
    }

    pub fn frobenius_norm_sq(&mut self, a: Var) -> Var {
        let n = self.value(a).frobenius_norm_sq();
        self.push(Tensor::scalar(n), Op::FrobeniusSq(a.id), &[a.id])
    }

    /// `X = A⁻¹·B` for symmetric positive-definite `A`, via Cholesky.
    pub fn solve_spd(&mut self, a: Var, b: Var) -> Result<Var> {
        let chol = Cholesky::factor(self.value(a))?;
        let value = chol.solve(self.value(b))?;
        Ok(self.push(
            value,
            Op::SolveSpd {
                a: a.id,
                b: b.id,
                chol,
            },
            &[a.id, b.id],
        ))
    }

    /// `log Σ exp(vᵢ)` of a column vector, stabilized by the maximum entry.
    pub fn logsumexp(&mut self, v: Var) -> Result<Var> {
        if v.cols != 1 || v.rows == 0 {
            return Err(Error::Shape(format!(
                "logsumexp needs a non-empty column vector, got {}x{}",
                v.rows, v.cols
            )));
        }
        let out = logsumexp(self.value(v).data());
        Ok(self.push(Tensor::scalar(out), Op::LogSumExp(v.id), &[v.id]))
    }

    /// `exp(vᵢ − logsumexp(v))` of a column vector.
    pub fn softmax(&mut self, v: Var) -> Result<Var> {
        if v.cols != 1 || v.rows == 0 {
            return Err(Error::Shape(format!(
                "softmax needs a non-empty column vector, got {}x{}",
                v.rows, v.cols
            )));
        }
        let value = Tensor::vector(&softmax(self.value(v).data()));
        Ok(self.push(value, Op::Softmax(v.id), &[v.id]))
    }

    /// `a / s` for a `1 × 1` divisor `s`.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if s.shape() != (1, 1) {
            return Err(shape_err("div_scalar", a.shape(), s.shape()));
        }
        let d = self.value(s).item();
        let value = self.value(a).scale(1.0 / d);
        Ok(self.push(value, Op::DivScalar(a.id, s.id), &[a.id, s.id]))
    }

    /// Column `j` of `a` as a column vector.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        self.columns(a, j, j + 1)
    }

    /// Columns `start..end` of `a`.
    pub fn columns(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        if start >= end || end > a.cols {
            return Err(Error::Shape(format!(
                "columns {start}..{end} of a {}x{} value",
                a.rows, a.cols
            )));
        }
        let value = self.value(a).columns(start, end);
        Ok(self.push(value, Op::Columns { src: a.id, start }, &[a.id]))
    }

    /// Stacks values with equal column counts top to bottom.
    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let value = {
            let tensors: Vec<&Tensor> = parts.iter().map(|v| self.value(*v)).collect();
            Tensor::vstack(&tensors)?
        };
        let ids: Vec<usize> = parts.iter().map(|v| v.id).collect();
        Ok(self.push(value, Op::VStack(ids.clone()), &ids))
    }

    /// Reverse sweep from a scalar `loss`. Does not modify the tape, so
    /// repeated calls return identical gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {}x{}",
                loss.rows, loss.cols
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        if !self.nodes[loss.id].requires_grad {
            return Ok(Gradients { grads, shapes });
        }
        grads[loss.id] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            self.propagate(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let acc = |grads: &mut [Option<Tensor>], id: usize, contrib: Tensor| -> Result<()> {
            if !self.nodes[id].requires_grad {
                return Ok(());
            }
            match &mut grads[id] {
                Some(existing) => existing.add_assign(&contrib)?,
                slot @ None => *slot = Some(contrib),
            }
            Ok(())
        };
        let val = |id: usize| &self.nodes[id].value;
        let wants = |id: usize| self.nodes[id].requires_grad;

        match &node.op {
            Op::Param | Op::Constant => {}
            Op::Add(a, b) => {
                acc(grads, *a, g.clone())?;
                acc(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone())?;
                acc(grads, *b, g.scale(-1.0))?;
            }
            Op::Scale(a, f) => acc(grads, *a, g.scale(*f))?,
            Op::Matmul(a, b) => {
                if wants(*a) {
                    acc(grads, *a, g.matmul(&val(*b).transpose())?)?;
                }
                if wants(*b) {
                    acc(grads, *b, val(*a).transpose().matmul(g)?)?;
                }
            }
            Op::Transpose(a) => acc(grads, *a, g.transpose())?,
            Op::AddColumn(a, b) => {
                acc(grads, *a, g.clone())?;
                if wants(*b) {
                    let sums: Vec<f64> = (0..g.rows()).map(|r| g.row(r).iter().sum()).collect();
                    acc(grads, *b, Tensor::vector(&sums))?;
                }
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let d = g.hadamard(&y.map(|t| 1.0 - t * t))?;
                acc(grads, *a, d)?;
            }
            Op::Relu(a) => {
                // Subgradient 0 at exactly 0.
                let mask = val(*a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                acc(grads, *a, g.hadamard(&mask)?)?;
            }
            Op::L2Norm(a) => {
                let n = node.value.item();
                let x = val(*a);
                let d = if n > 0.0 {
                    {
                    let g = g.item();
                    x.map(|v| v * g / n)
                }
                } else {
                    Tensor::zeros(x.rows(), x.cols())
                };
                acc(grads, *a, d)?;
            }
            Op::FrobeniusSq(a) => acc(grads, *a, val(*a).scale(2.0 * g.item()))?,
            Op::SolveSpd { a, b, chol } => {
                // X = A⁻¹B: B̄ = A⁻ᵀḠ, Ā = −B̄·Xᵀ. A is symmetric so A⁻ᵀ = A⁻¹.
                let b_bar = chol.solve(g)?;
                if wants(*a) {
                    acc(grads, *a, b_bar.matmul(&node.value.transpose())?.scale(-1.0))?;
                }
                acc(grads, *b, b_bar)?;
            }
            Op::LogSumExp(v) => {
                let p = softmax(val(*v).data());
                acc(grads, *v, Tensor::vector(&p).scale(g.item()))?;
            }
            Op::Softmax(v) => {
                let p = &node.value;
                let dot: f64 = p.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
                let d = p.hadamard(&g.map(|x| x - dot))?;
                acc(grads, *v, d)?;
            }
            Op::DivScalar(a, s) => {
                let d = val(*s).item();
                acc(grads, *a, g.scale(1.0 / d))?;
                if wants(*s) {
                    let num: f64 = g.data().iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
                    acc(grads, *s, Tensor::scalar(-num / (d * d)))?;
                }
            }
            Op::Columns { src, start } => {
                if wants(*src) {
                    let (rows, cols) = val(*src).shape();
                    let mut d = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        for c in 0..g.cols() {
                            d.set(r, start + c, g.get(r, c));
                        }
                    }
                    acc(grads, *src, d)?;
                }
            }
            Op::VStack(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = val(p).rows();
                    if wants(p) {
                        let piece = Tensor::new(
                            rows,
                            g.cols(),
                            g.data()[offset * g.cols()..(offset + rows) * g.cols()].to_vec(),
                        )?;
                        acc(grads, p, piece)?;
                    }
                    offset += rows;
                }
            }
            Op::Opaque { name, inputs } => {
                if inputs.iter().any(|&i| wants(i)) {
                    return Err(Error::UnsupportedOp(name.clone()));
                }
            }
        }
        Ok(())
    }
}

/// `log Σ exp(xᵢ)` with max subtraction. Empty input gives `-inf`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = logsumexp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}
