//! Reverse-mode automatic differentiation over a define-by-run tape.
//!
//! A [`Graph`] records every operation as it executes. Nodes are appended in
//! execution order, so node ids are a topological order and backward is a
//! single reverse sweep. Each training step builds a fresh graph; parameters
//! enter it as leaves through [`Graph::param`].
//!
//! ```
//! use detdiv_core::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.variable(Tensor::scalar(2.0));
//! let y = g.variable(Tensor::scalar(3.0));
//! let z = g.mul(x, y).unwrap();
//! g.backward(z).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[3.0]);
//! assert_eq!(g.grad(y).unwrap(), &[2.0]);
//! ```

mod gradcheck;
mod kernels;

pub use gradcheck::{grad_check, relative_error};
pub(crate) use kernels::log_sum_exp;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Operation kinds the tape understands.
///
/// Binary elementwise ops require equal shapes, except that either operand may
/// be a one-element tensor which is then broadcast. Axis reductions keep the
/// reduced axis with extent 1.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Exp(Var),
    Relu(Var),
    Sigmoid(Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    /// Max along an axis; the gradient goes to the first maximal element.
    MaxAxis(Var, usize),
    Reshape(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice { input: Var, axis: usize, start: usize, end: usize },
    /// Repeat extent-1 axes up to the target shape.
    Expand(Var, Vec<usize>),
    /// `(M, K) @ (K, N)`.
    Matmul(Var, Var),
    /// Cross-correlation of `(N, C, H, W)` (or `(C, H, W)`) with `(O, C, k, k)` plus bias `(O)`.
    Conv2d { input: Var, weight: Var, bias: Var, stride: usize, padding: usize },
    /// Batch-mean softmax cross-entropy of `(N, K)` (or `(K)`) logits.
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize> },
    /// Determinant of a square matrix, differentiated through its cofactor matrix.
    Det(Var),
    /// Scales each row of an `(N, P)` matrix to unit Euclidean norm.
    NormalizeRows(Var),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Neg(_) => "neg",
            Op::Exp(_) => "exp",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumAxis(..) => "sum_axis",
            Op::MeanAxis(..) => "mean_axis",
            Op::MaxAxis(..) => "max_axis",
            Op::Reshape(..) => "reshape",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Expand(..) => "expand",
            Op::Matmul(..) => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Det(_) => "det",
            Op::NormalizeRows(_) => "normalize_rows",
        }
    }

    /// Input nodes in a fixed order.
    pub fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) => vec![*a, *b],
            Op::Neg(a)
            | Op::Exp(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Scale(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumAxis(a, _)
            | Op::MeanAxis(a, _)
            | Op::MaxAxis(a, _)
            | Op::Reshape(a, _)
            | Op::Expand(a, _)
            | Op::Det(a)
            | Op::NormalizeRows(a) => vec![*a],
            Op::Slice { input, .. } => vec![*input],
            Op::Concat(xs, _) => xs.clone(),
            Op::Conv2d { input, weight, bias, .. } => vec![*input, *weight, *bias],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// The recorded computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<Var>,
    no_grad: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose parameters do not require gradients (evaluation only).
    pub fn no_grad() -> Self {
        Graph { no_grad: true, ..Self::default() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf, keeping the tensor's `requires_grad` flag.
    pub fn leaf(&mut self, mut value: Tensor) -> Var {
        if self.no_grad {
            value.set_requires_grad(false);
        }
        self.push(Op::Leaf, value)
    }

    pub fn constant(&mut self, mut value: Tensor) -> Var {
        value.set_requires_grad(false);
        self.push(Op::Leaf, value)
    }

    /// A leaf that requires gradients.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value.with_requires_grad())
    }

    /// Registers a model parameter. Parameters are remembered in registration order.
    pub fn param(&mut self, value: &Tensor) -> Var {
        let v = self.variable(value.detached());
        self.params.push(v);
        v
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }

    /// Gradients of all registered parameters, in registration order. Parameters
    /// that did not influence the root get zeros.
    pub fn param_grads(&self) -> Vec<Vec<f64>> {
        self.params
            .iter()
            .map(|&p| match self.grad(p) {
                Some(g) => g.to_vec(),
                None => vec![0.0; self.value(p).len()],
            })
            .collect()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Evaluates `op` on the current values of its inputs and appends the result.
    pub fn record(&mut self, op: Op) -> Result<Var> {
        if op == Op::Leaf {
            return Err(Error::invalid("record", "leaves are added with Graph::leaf"));
        }
        let inputs = op.inputs();
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(Error::invalid(op.name(), format!("unknown node {}", bad.0)));
        }
        let (value, requires_grad) = {
            let refs: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let value = kernels::forward(&op, &refs)?;
            (value, refs.iter().any(|t| t.requires_grad()))
        };
        let value = if requires_grad { value.with_requires_grad() } else { value };
        Ok(self.push(op, value))
    }

    /// Populates `grad` on every tensor that requires it with `∂root/∂tensor`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_value = &self.nodes[root.0].value;
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        if !root_value.requires_grad() {
            return Err(Error::DetachedRoot);
        }
        for node in &mut self.nodes {
            if node.value.requires_grad() {
                node.value.clear_grad();
            }
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let op = &self.nodes[i].op;
            if *op != Op::Leaf {
                let inputs = op.inputs();
                let refs: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let needs: Vec<bool> = refs.iter().map(|t| t.requires_grad()).collect();
                let input_grads = kernels::backward(op, &refs, &self.nodes[i].value, &g, &needs);
                for (v, ig) in inputs.iter().zip(input_grads) {
                    let Some(ig) = ig else { continue };
                    match &mut grads[v.0] {
                        Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(ig),
                    }
                }
            }
            self.nodes[i].value.set_grad(g);
        }
        Ok(())
    }

    /// Recomputes every node from the leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match &node.op {
                Op::Leaf => node.value.detached(),
                op => {
                    let refs: Vec<&Tensor> = op.inputs().iter().map(|v| &values[v.0]).collect();
                    kernels::forward(op, &refs)?
                }
            };
            values.push(value);
        }
        Ok(values)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Neg(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Exp(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sigmoid(a))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.record(Op::Scale(a, factor))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Mean(a))
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.record(Op::SumAxis(a, axis))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.record(Op::MeanAxis(a, axis))
    }

    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.record(Op::MaxAxis(a, axis))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.record(Op::Reshape(a, shape.to_vec()))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        self.record(Op::Concat(xs.to_vec(), axis))
    }

    pub fn slice(&mut self, input: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.record(Op::Slice { input, axis, start, end })
    }

    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.record(Op::Expand(a, shape.to_vec()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Matmul(a, b))
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        self.record(Op::Conv2d { input, weight, bias, stride, padding })
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.record(Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec() })
    }

    pub fn det(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Det(a))
    }

    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        self.record(Op::NormalizeRows(a))
    }
}
