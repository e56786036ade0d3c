//! Append-only computation graph.
//!
//! Every primitive evaluates eagerly and records a node holding its inputs and
//! cached output. Node ids are assigned in creation order, so inputs always
//! precede the node that consumes them.

use std::cell::RefCell;
use std::fmt;
use std::ops::Range;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{AutodiffError, Result};
use crate::tensor::{Shape, Tensor};

pub type NodeId = usize;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Primitive operation kinds.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    MatMul,
    Transpose,
    Exp,
    Ln,
    Tanh,
    Sigmoid,
    Relu,
    PowInt(i32),
    Powf(f64),
    /// Sum of all entries, `1 x 1`.
    Sum,
    /// Mean of all entries, `1 x 1`.
    Mean,
    /// Column sums, `1 x cols`.
    SumRows,
    /// Row sums, `rows x 1`.
    SumCols,
    SoftmaxRows,
    /// Per-row standardization `(x - mean) / sqrt(var + eps)`.
    NormalizeRows { eps: f64 },
    ConcatRows,
    ConcatCols,
    Slice { rows: Range<usize>, cols: Range<usize> },
    Scale(f64),
    AddScalar(f64),
    /// `r x c` plus a `1 x c` row added to every row.
    BroadcastAddRow,
    /// Expand a `1 x 1`, `1 x c` or `r x 1` input to the given shape.
    Broadcast { rows: usize, cols: usize },
    Reshape { rows: usize, cols: usize },
    /// Stack `n` copies of the input vertically.
    TileRows(usize),
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Neg => "neg",
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Exp => "exp",
            OpKind::Ln => "ln",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Relu => "relu",
            OpKind::PowInt(_) => "pow_int",
            OpKind::Powf(_) => "powf",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::SumRows => "sum_rows",
            OpKind::SumCols => "sum_cols",
            OpKind::SoftmaxRows => "softmax_rows",
            OpKind::NormalizeRows { .. } => "normalize_rows",
            OpKind::ConcatRows => "concat_rows",
            OpKind::ConcatCols => "concat_cols",
            OpKind::Slice { .. } => "slice",
            OpKind::Scale(_) => "scale",
            OpKind::AddScalar(_) => "add_scalar",
            OpKind::BroadcastAddRow => "broadcast_add_row",
            OpKind::Broadcast { .. } => "broadcast",
            OpKind::Reshape { .. } => "reshape",
            OpKind::TileRows(_) => "tile_rows",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::Add
            | OpKind::Sub
            | OpKind::Mul
            | OpKind::Div
            | OpKind::MatMul
            | OpKind::BroadcastAddRow => Some(2),
            OpKind::ConcatRows | OpKind::ConcatCols => None,
            _ => Some(1),
        }
    }

    /// Output shape, or `None` when the input shapes violate the op's rule.
    fn output_shape(&self, s: &[Shape]) -> Option<Shape> {
        match self {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => (s[0] == s[1]).then_some(s[0]),
            OpKind::MatMul => (s[0].1 == s[1].0).then_some((s[0].0, s[1].1)),
            OpKind::Transpose => Some((s[0].1, s[0].0)),
            OpKind::Neg
            | OpKind::Exp
            | OpKind::Ln
            | OpKind::Tanh
            | OpKind::Sigmoid
            | OpKind::Relu
            | OpKind::PowInt(_)
            | OpKind::Powf(_)
            | OpKind::SoftmaxRows
            | OpKind::NormalizeRows { .. }
            | OpKind::Scale(_)
            | OpKind::AddScalar(_) => Some(s[0]),
            OpKind::Sum | OpKind::Mean => Some((1, 1)),
            OpKind::SumRows => Some((1, s[0].1)),
            OpKind::SumCols => Some((s[0].0, 1)),
            OpKind::ConcatRows => {
                let cols = s.first()?.1;
                s.iter().all(|x| x.1 == cols).then(|| (s.iter().map(|x| x.0).sum(), cols))
            }
            OpKind::ConcatCols => {
                let rows = s.first()?.0;
                s.iter().all(|x| x.0 == rows).then(|| (rows, s.iter().map(|x| x.1).sum()))
            }
            OpKind::Slice { rows, cols } => (rows.start < rows.end
                && cols.start < cols.end
                && rows.end <= s[0].0
                && cols.end <= s[0].1)
                .then(|| (rows.len(), cols.len())),
            OpKind::BroadcastAddRow => (s[1].0 == 1 && s[1].1 == s[0].1).then_some(s[0]),
            OpKind::Broadcast { rows, cols } => {
                let (r, c) = s[0];
                let ok = (r == 1 || r == *rows) && (c == 1 || c == *cols) && (r == 1 || c == 1 || (r, c) == (*rows, *cols));
                ok.then_some((*rows, *cols))
            }
            OpKind::Reshape { rows, cols } => (rows * cols == s[0].0 * s[0].1).then_some((*rows, *cols)),
            OpKind::TileRows(n) => (*n >= 1).then_some((s[0].0 * n, s[0].1)),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum NodeKind {
    Constant,
    Parameter,
    Op(OpKind),
}

impl NodeKind {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            NodeKind::Constant => "constant",
            NodeKind::Parameter => "parameter",
            NodeKind::Op(op) => op.name(),
        }
    }
}

pub(crate) struct Node {
    pub(crate) kind: NodeKind,
    pub(crate) inputs: Vec<NodeId>,
    pub(crate) value: Rc<Tensor>,
    /// Whether any registered parameter reaches this node.
    pub(crate) requires_grad: bool,
}

/// A recorded computation. Single-threaded; create one per worker.
pub struct Graph {
    id: u64,
    pub(crate) nodes: RefCell<Vec<Node>>,
    pub(crate) params: RefCell<Vec<NodeId>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("id", &self.id)
            .field("nodes", &self.nodes.borrow().len())
            .field("params", &self.params.borrow().len())
            .finish()
    }
}

/// Handle to one node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Value<'g> {
    graph: &'g Graph,
    id: NodeId,
    shape: Shape,
}

impl fmt::Debug for Value<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Value(#{} {}x{} on graph {})", self.id, self.shape.0, self.shape.1, self.graph.id)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(Vec::new()),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Node ids flagged trainable, in registration order.
    pub fn parameter_ids(&self) -> Vec<NodeId> {
        self.params.borrow().clone()
    }

    fn push(&self, kind: NodeKind, inputs: Vec<NodeId>, value: Tensor, requires_grad: bool) -> Value<'_> {
        let shape = value.shape();
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { kind, inputs, value: Rc::new(value), requires_grad });
        Value { graph: self, id, shape }
    }

    pub fn constant(&self, value: Tensor) -> Value<'_> {
        self.push(NodeKind::Constant, Vec::new(), value, false)
    }

    pub fn scalar(&self, v: f64) -> Value<'_> {
        self.constant(Tensor::scalar(v))
    }

    pub fn zeros(&self, rows: usize, cols: usize) -> Value<'_> {
        self.constant(Tensor::zeros(rows, cols))
    }

    /// Register a trainable leaf.
    pub fn parameter(&self, value: Tensor) -> Value<'_> {
        let v = self.push(NodeKind::Parameter, Vec::new(), value, true);
        self.params.borrow_mut().push(v.id);
        v
    }

    pub fn value_of(&self, id: NodeId) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    /// Record `kind` applied to `inputs`.
    pub fn apply<'g>(&'g self, kind: OpKind, inputs: &[Value<'g>]) -> Result<Value<'g>> {
        let op = kind.name();
        if let Some(n) = kind.arity() {
            if inputs.len() != n {
                return Err(AutodiffError::Arity { op, expected: n, got: inputs.len() });
            }
        } else if inputs.is_empty() {
            return Err(AutodiffError::Arity { op, expected: 1, got: 0 });
        }
        for v in inputs {
            if v.graph.id != self.id {
                return Err(AutodiffError::CrossGraph { expected: self.id, found: v.graph.id });
            }
        }
        let shapes: Vec<Shape> = inputs.iter().map(|v| v.shape).collect();
        if kind.output_shape(&shapes).is_none() {
            return Err(AutodiffError::ShapeMismatch { op, shapes });
        }

        let (args, requires_grad) = {
            let nodes = self.nodes.borrow();
            let args: Vec<Rc<Tensor>> = inputs.iter().map(|v| nodes[v.id].value.clone()).collect();
            let rg = inputs.iter().any(|v| nodes[v.id].requires_grad);
            (args, rg)
        };
        let node = self.len();
        let out = evaluate(&kind, &args, node)?;
        let ids = inputs.iter().map(|v| v.id).collect();
        Ok(self.push(NodeKind::Op(kind), ids, out, requires_grad))
    }

    pub fn concat_rows<'g>(&'g self, parts: &[Value<'g>]) -> Result<Value<'g>> {
        self.apply(OpKind::ConcatRows, parts)
    }

    pub fn concat_cols<'g>(&'g self, parts: &[Value<'g>]) -> Result<Value<'g>> {
        self.apply(OpKind::ConcatCols, parts)
    }
}

fn domain(op: &'static str, node: usize, detail: String) -> AutodiffError {
    AutodiffError::Domain { op, node, detail }
}

fn evaluate(kind: &OpKind, a: &[Rc<Tensor>], node: usize) -> Result<Tensor> {
    let x = &a[0];
    Ok(match kind {
        OpKind::Add => x.zip_map(&a[1], |p, q| p + q),
        OpKind::Sub => x.zip_map(&a[1], |p, q| p - q),
        OpKind::Mul => x.zip_map(&a[1], |p, q| p * q),
        OpKind::Div => {
            if let Some(i) = a[1].data().iter().position(|&q| q == 0.0) {
                return Err(domain("div", node, format!("division by zero at flat index {i}")));
            }
            x.zip_map(&a[1], |p, q| p / q)
        }
        OpKind::Neg => x.map(|p| -p),
        OpKind::MatMul => x.matmul(&a[1]),
        OpKind::Transpose => x.transpose(),
        OpKind::Exp => x.map(f64::exp),
        OpKind::Ln => {
            if let Some(i) = x.data().iter().position(|&p| p <= 0.0 || p.is_nan()) {
                return Err(domain("ln", node, format!("non-positive argument {} at flat index {i}", x.data()[i])));
            }
            x.map(f64::ln)
        }
        OpKind::Tanh => x.map(f64::tanh),
        OpKind::Sigmoid => x.map(sigmoid),
        OpKind::Relu => x.map(|p| p.max(0.0)),
        OpKind::PowInt(n) => {
            if *n < 0 {
                if let Some(i) = x.data().iter().position(|&p| p == 0.0) {
                    return Err(domain("pow_int", node, format!("zero base with exponent {n} at flat index {i}")));
                }
            }
            x.map(|p| p.powi(*n))
        }
        OpKind::Powf(e) => {
            let bad = x.data().iter().position(|&p| p < 0.0 || (p == 0.0 && *e < 0.0));
            if let Some(i) = bad {
                return Err(domain("powf", node, format!("base {} with exponent {e} at flat index {i}", x.data()[i])));
            }
            x.map(|p| p.powf(*e))
        }
        OpKind::Sum => Tensor::scalar(x.sum()),
        OpKind::Mean => Tensor::scalar(x.sum() / x.len() as f64),
        OpKind::SumRows => x.sum_rows(),
        OpKind::SumCols => x.sum_cols(),
        OpKind::SoftmaxRows => softmax_rows(x),
        OpKind::NormalizeRows { eps } => normalize_rows(x, *eps),
        OpKind::ConcatRows => Tensor::concat_rows(&a.iter().map(|t| t.as_ref()).collect::<Vec<_>>()),
        OpKind::ConcatCols => Tensor::concat_cols(&a.iter().map(|t| t.as_ref()).collect::<Vec<_>>()),
        OpKind::Slice { rows, cols } => x.slice(rows.start, rows.end, cols.start, cols.end),
        OpKind::Scale(s) => x.map(|p| p * s),
        OpKind::AddScalar(s) => x.map(|p| p + s),
        OpKind::BroadcastAddRow => {
            let mut out = (**x).clone();
            let cols = out.cols();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v += a[1].data()[i % cols];
            }
            out
        }
        OpKind::Broadcast { rows, cols } => x.broadcast_to(*rows, *cols),
        OpKind::Reshape { rows, cols } => x.reshape(*rows, *cols),
        OpKind::TileRows(n) => x.tile_rows(*n),
    })
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let cols = x.cols();
    for row in out.data_mut().chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn normalize_rows(x: &Tensor, eps: f64) -> Tensor {
    let mut out = x.clone();
    let cols = x.cols();
    let n = cols as f64;
    for row in out.data_mut().chunks_mut(cols) {
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    out
}

impl<'g> Value<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape.0
    }

    pub fn cols(&self) -> usize {
        self.shape.1
    }

    /// Cached forward value.
    pub fn tensor(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn item(&self) -> f64 {
        self.tensor().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    fn unary(self, kind: OpKind) -> Result<Value<'g>> {
        self.graph.apply(kind, &[self])
    }

    fn binary(self, kind: OpKind, other: Value<'g>) -> Result<Value<'g>> {
        self.graph.apply(kind, &[self, other])
    }

    pub fn add(self, other: Value<'g>) -> Result<Value<'g>> {
        self.binary(OpKind::Add, other)
    }

    pub fn sub(self, other: Value<'g>) -> Result<Value<'g>> {
        self.binary(OpKind::Sub, other)
    }

    pub fn mul(self, other: Value<'g>) -> Result<Value<'g>> {
        self.binary(OpKind::Mul, other)
    }

    pub fn div(self, other: Value<'g>) -> Result<Value<'g>> {
        self.binary(OpKind::Div, other)
    }

    pub fn matmul(self, other: Value<'g>) -> Result<Value<'g>> {
        self.binary(OpKind::MatMul, other)
    }

    /// Add a `1 x cols` row to every row.
    pub fn add_row(self, row: Value<'g>) -> Result<Value<'g>> {
        self.binary(OpKind::BroadcastAddRow, row)
    }

    pub fn neg(self) -> Result<Value<'g>> {
        self.unary(OpKind::Neg)
    }

    pub fn t(self) -> Result<Value<'g>> {
        self.unary(OpKind::Transpose)
    }

    pub fn exp(self) -> Result<Value<'g>> {
        self.unary(OpKind::Exp)
    }

    pub fn ln(self) -> Result<Value<'g>> {
        self.unary(OpKind::Ln)
    }

    pub fn tanh(self) -> Result<Value<'g>> {
        self.unary(OpKind::Tanh)
    }

    pub fn sigmoid(self) -> Result<Value<'g>> {
        self.unary(OpKind::Sigmoid)
    }

    pub fn relu(self) -> Result<Value<'g>> {
        self.unary(OpKind::Relu)
    }

    pub fn powi(self, n: i32) -> Result<Value<'g>> {
        self.unary(OpKind::PowInt(n))
    }

    pub fn powf(self, e: f64) -> Result<Value<'g>> {
        self.unary(OpKind::Powf(e))
    }

    pub fn sum(self) -> Result<Value<'g>> {
        self.unary(OpKind::Sum)
    }

    pub fn mean(self) -> Result<Value<'g>> {
        self.unary(OpKind::Mean)
    }

    pub fn sum_rows(self) -> Result<Value<'g>> {
        self.unary(OpKind::SumRows)
    }

    pub fn sum_cols(self) -> Result<Value<'g>> {
        self.unary(OpKind::SumCols)
    }

    pub fn softmax_rows(self) -> Result<Value<'g>> {
        self.unary(OpKind::SoftmaxRows)
    }

    pub fn normalize_rows(self, eps: f64) -> Result<Value<'g>> {
        self.unary(OpKind::NormalizeRows { eps })
    }

    pub fn scale(self, s: f64) -> Result<Value<'g>> {
        self.unary(OpKind::Scale(s))
    }

    pub fn add_scalar(self, s: f64) -> Result<Value<'g>> {
        self.unary(OpKind::AddScalar(s))
    }

    pub fn broadcast(self, rows: usize, cols: usize) -> Result<Value<'g>> {
        self.unary(OpKind::Broadcast { rows, cols })
    }

    pub fn reshape(self, rows: usize, cols: usize) -> Result<Value<'g>> {
        self.unary(OpKind::Reshape { rows, cols })
    }

    pub fn tile_rows(self, n: usize) -> Result<Value<'g>> {
        self.unary(OpKind::TileRows(n))
    }

    pub fn slice(self, rows: Range<usize>, cols: Range<usize>) -> Result<Value<'g>> {
        self.unary(OpKind::Slice { rows, cols })
    }

    pub fn slice_rows(self, rows: Range<usize>) -> Result<Value<'g>> {
        let cols = self.cols();
        self.slice(rows, 0..cols)
    }

    pub fn slice_cols(self, cols: Range<usize>) -> Result<Value<'g>> {
        let rows = self.rows();
        self.slice(0..rows, cols)
    }

    /// Elementwise product with a `1 x cols` row broadcast down the rows.
    pub fn mul_row(self, row: Value<'g>) -> Result<Value<'g>> {
        let (r, c) = self.shape;
        self.mul(row.broadcast(r, c)?)
    }

    /// Elementwise product with a `rows x 1` column broadcast across.
    pub fn mul_col(self, col: Value<'g>) -> Result<Value<'g>> {
        let (r, c) = self.shape;
        self.mul(col.broadcast(r, c)?)
    }
}
