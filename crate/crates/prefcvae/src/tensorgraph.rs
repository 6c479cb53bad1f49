//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Every loss in this crate is differentiated by this engine. A [`Graph`]
//! owns a vector of nodes; forward helpers append nodes and validate shapes
//! and finiteness, [`Graph::backward`] walks the tape once in reverse and
//! accumulates gradients into every node that requires them.
//!
//! Graphs are rebuilt per training step; node values are never mutated after
//! creation. A graph is confined to one thread.

pub mod special;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense row-major array of 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    #[serde(default)]
    pub requires_grad: bool,
}

impl Tensor {
    /// General constructor; data length must equal the product of extents.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(TensorError::ShapeMismatch {
                op: "tensor_new",
                detail: format!("shape {:?} wants {} elements, got {}", shape, numel, data.len()),
            });
        }
        Ok(Self { shape, data, requires_grad: false })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![0.0; numel], requires_grad: false }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![], data: vec![value], requires_grad: false }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data, requires_grad: false }
    }

    /// Marks the tensor as a differentiation leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Scalar extraction; the tensor must hold exactly one element.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1, "item() on shape {:?}", self.shape);
        self.data[0]
    }

    /// True when every element is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward root must be scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
}

/// Handle into a [`Graph`]'s tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    SumAxis(NodeId, usize),
    MeanAxis(NodeId, usize),
    Exp(NodeId),
    Ln(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Elu(NodeId),
    Softplus(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    NormLast { input: NodeId },
    Reshape(NodeId),
    ConcatLast(Vec<NodeId>),
    SliceLast { input: NodeId, start: usize, end: usize },
    BroadcastRows { input: NodeId },
    BroadcastScalar { input: NodeId },
    LogGamma(NodeId),
    Digamma(NodeId),
    /// Forward value with caller-supplied elementwise partials, one per
    /// parent. Used for implicit reparameterization of Beta samples.
    Custom { parents: Vec<NodeId>, partials: Vec<Tensor> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
}

/// Computation tape. Nodes are appended in evaluation order, so every
/// node's parents precede it and one reverse sweep is a valid topological
/// backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].value.shape
    }

    /// Scalar forward value of a one-element node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.item()
    }

    /// Gradient populated by the last `backward` call, if any.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool, name: &'static str) -> Result<NodeId, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value, grad: None, requires_grad });
        Ok(id)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Inserts a tensor as a leaf; `tensor.requires_grad` controls whether
    /// gradients accumulate into it.
    pub fn insert(&mut self, tensor: Tensor) -> Result<NodeId, TensorError> {
        let rg = tensor.requires_grad;
        self.push(Op::Leaf, tensor, rg, "leaf")
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Result<NodeId, TensorError> {
        let mut t = tensor;
        t.requires_grad = false;
        self.insert(t)
    }

    pub fn scalar_const(&mut self, value: f64) -> Result<NodeId, TensorError> {
        self.constant(Tensor::scalar(value))
    }

    fn binary_elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId, TensorError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape != tb.shape {
            return Err(TensorError::ShapeMismatch {
                op: name,
                detail: format!("{:?} vs {:?}", ta.shape, tb.shape),
            });
        }
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor { shape: ta.shape.clone(), data, requires_grad: false };
        let rg = self.needs(a) || self.needs(b);
        self.push(op, value, rg, name)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary_elementwise(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary_elementwise(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary_elementwise(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape[1] != tb.shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", ta.shape, tb.shape),
            });
        }
        let (n, k, m) = (ta.shape[0], ta.shape[1], tb.shape[1]);
        let mut out = vec![0.0; n * m];
        matmul_nn(&ta.data, &tb.data, n, k, m, &mut out);
        let value = Tensor { shape: vec![n, m], data: out, requires_grad: false };
        let rg = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), value, rg, "matmul")
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let s: f64 = self.nodes[a.0].value.data.iter().sum();
        let rg = self.needs(a);
        self.push(Op::SumAll(a), Tensor::scalar(s), rg, "sum_all")
    }

    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let t = &self.nodes[a.0].value;
        if t.numel() == 0 {
            return Err(TensorError::ShapeMismatch { op: "mean_all", detail: "empty tensor".into() });
        }
        let s: f64 = t.data.iter().sum::<f64>() / t.numel() as f64;
        let rg = self.needs(a);
        self.push(Op::MeanAll(a), Tensor::scalar(s), rg, "mean_all")
    }

    fn reduce_axis(&self, a: NodeId, axis: usize, name: &'static str) -> Result<(Tensor, usize), TensorError> {
        let t = &self.nodes[a.0].value;
        if axis >= t.rank() {
            return Err(TensorError::ShapeMismatch {
                op: name,
                detail: format!("axis {axis} out of range for shape {:?}", t.shape),
            });
        }
        let (outer, len, inner) = axis_strides(&t.shape, axis);
        let mut out_shape = t.shape.clone();
        out_shape.remove(axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += t.data[base + i];
                }
            }
        }
        Ok((Tensor { shape: out_shape, data: out, requires_grad: false }, len))
    }

    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId, TensorError> {
        let (value, _) = self.reduce_axis(a, axis, "sum_axis")?;
        let rg = self.needs(a);
        self.push(Op::SumAxis(a, axis), value, rg, "sum_axis")
    }

    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId, TensorError> {
        let (mut value, len) = self.reduce_axis(a, axis, "mean_axis")?;
        if len == 0 {
            return Err(TensorError::ShapeMismatch { op: "mean_axis", detail: "empty axis".into() });
        }
        for v in &mut value.data {
            *v /= len as f64;
        }
        let rg = self.needs(a);
        self.push(Op::MeanAxis(a, axis), value, rg, "mean_axis")
    }

    fn unary(
        &mut self,
        a: NodeId,
        name: &'static str,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<NodeId, TensorError> {
        let t = &self.nodes[a.0].value;
        let data = t.data.iter().map(|&x| f(x)).collect();
        let value = Tensor { shape: t.shape.clone(), data, requires_grad: false };
        let rg = self.needs(a);
        self.push(op, value, rg, name)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.unary(a, "exp", f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.unary(a, "ln", f64::ln, Op::Ln(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.unary(a, "sigmoid", sigmoid_scalar, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.unary(a, "tanh", f64::tanh, Op::Tanh(a))
    }

    pub fn elu(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.unary(a, "elu", |x| if x > 0.0 { x } else { x.exp() - 1.0 }, Op::Elu(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.unary(a, "softplus", softplus_scalar, Op::Softplus(a))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.unary(a, "square", |x| x * x, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.unary(a, "sqrt", f64::sqrt, Op::Sqrt(a))
    }

    pub fn log_gamma(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.unary(a, "log_gamma", special::ln_gamma, Op::LogGamma(a))
    }

    pub fn digamma(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.unary(a, "digamma", special::digamma, Op::Digamma(a))
    }

    /// Smoothed L2 norm along the last axis: `sqrt(sum_j x_j^2 + eps)`.
    /// Output drops the last extent; a rank-1 input yields a scalar.
    pub fn norm_last(&mut self, a: NodeId, eps: f64) -> Result<NodeId, TensorError> {
        let t = &self.nodes[a.0].value;
        if t.rank() == 0 {
            return Err(TensorError::ShapeMismatch { op: "norm_last", detail: "scalar input".into() });
        }
        let d = t.shape[t.rank() - 1];
        let rows = t.numel() / d.max(1);
        if d == 0 {
            return Err(TensorError::ShapeMismatch { op: "norm_last", detail: "empty last axis".into() });
        }
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let s: f64 = t.data[r * d..(r + 1) * d].iter().map(|v| v * v).sum();
            out.push((s + eps).sqrt());
        }
        let value = Tensor {
            shape: t.shape[..t.rank() - 1].to_vec(),
            data: out,
            requires_grad: false,
        };
        let rg = self.needs(a);
        self.push(Op::NormLast { input: a }, value, rg, "norm_last")
    }

    /// Reinterprets the extents without moving data; element count must be
    /// preserved.
    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, TensorError> {
        let t = &self.nodes[a.0].value;
        let numel: usize = shape.iter().product();
        if numel != t.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} ({} elems) -> {:?} ({numel})", t.shape, t.numel(), shape),
            });
        }
        let value = Tensor { shape: shape.to_vec(), data: t.data.clone(), requires_grad: false };
        let rg = self.needs(a);
        self.push(Op::Reshape(a), value, rg, "reshape")
    }

    /// Concatenates along the last axis; all leading extents must agree.
    pub fn concat_last(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::ShapeMismatch { op: "concat_last", detail: "no inputs".into() });
        }
        let first = &self.nodes[parts[0].0].value;
        let rank = first.rank();
        if rank == 0 {
            return Err(TensorError::ShapeMismatch { op: "concat_last", detail: "scalar input".into() });
        }
        let lead = &first.shape[..rank - 1];
        let mut total_last = 0;
        for &p in parts {
            let t = &self.nodes[p.0].value;
            if t.rank() != rank || &t.shape[..rank - 1] != lead {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_last",
                    detail: format!("{:?} vs {:?}", first.shape, t.shape),
                });
            }
            total_last += t.shape[rank - 1];
        }
        let rows: usize = lead.iter().product();
        let mut shape = lead.to_vec();
        shape.push(total_last);
        let mut data = vec![0.0; rows * total_last];
        let mut offset = 0;
        for &p in parts {
            let t = &self.nodes[p.0].value;
            let w = t.shape[rank - 1];
            for r in 0..rows {
                data[r * total_last + offset..r * total_last + offset + w]
                    .copy_from_slice(&t.data[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let rg = parts.iter().any(|&p| self.needs(p));
        self.push(
            Op::ConcatLast(parts.to_vec()),
            Tensor { shape, data, requires_grad: false },
            rg,
            "concat_last",
        )
    }

    /// Takes columns `[start, end)` of the last axis.
    pub fn slice_last(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId, TensorError> {
        let t = &self.nodes[a.0].value;
        let rank = t.rank();
        if rank == 0 {
            return Err(TensorError::ShapeMismatch { op: "slice_last", detail: "scalar input".into() });
        }
        let d = t.shape[rank - 1];
        if start >= end || end > d {
            return Err(TensorError::ShapeMismatch {
                op: "slice_last",
                detail: format!("[{start}, {end}) of last extent {d}"),
            });
        }
        let w = end - start;
        let rows = t.numel() / d;
        let mut data = vec![0.0; rows * w];
        for r in 0..rows {
            data[r * w..(r + 1) * w].copy_from_slice(&t.data[r * d + start..r * d + end]);
        }
        let mut shape = t.shape.clone();
        shape[rank - 1] = w;
        let rg = self.needs(a);
        self.push(
            Op::SliceLast { input: a, start, end },
            Tensor { shape, data, requires_grad: false },
            rg,
            "slice_last",
        )
    }

    /// Repeats a rank-1 `[m]` tensor into `[rows, m]` (bias broadcasting).
    pub fn broadcast_rows(&mut self, a: NodeId, rows: usize) -> Result<NodeId, TensorError> {
        let t = &self.nodes[a.0].value;
        if t.rank() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast_rows",
                detail: format!("want rank 1, got {:?}", t.shape),
            });
        }
        let m = t.shape[0];
        let mut data = Vec::with_capacity(rows * m);
        for _ in 0..rows {
            data.extend_from_slice(&t.data);
        }
        let rg = self.needs(a);
        self.push(
            Op::BroadcastRows { input: a },
            Tensor { shape: vec![rows, m], data, requires_grad: false },
            rg,
            "broadcast_rows",
        )
    }

    /// Fills an arbitrary shape with a one-element tensor's value.
    pub fn broadcast_scalar(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, TensorError> {
        let t = &self.nodes[a.0].value;
        if t.numel() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast_scalar",
                detail: format!("want one element, got {:?}", t.shape),
            });
        }
        let v = t.data[0];
        let numel: usize = shape.iter().product();
        let rg = self.needs(a);
        self.push(
            Op::BroadcastScalar { input: a },
            Tensor { shape: shape.to_vec(), data: vec![v; numel], requires_grad: false },
            rg,
            "broadcast_scalar",
        )
    }

    /// Node with a caller-computed forward value and elementwise partial
    /// derivatives w.r.t. each parent. During backward, parent `i` receives
    /// `upstream ⊙ partials[i]`. Value, parents and partials must share one
    /// shape.
    pub fn custom(
        &mut self,
        parents: &[NodeId],
        value: Tensor,
        partials: Vec<Tensor>,
    ) -> Result<NodeId, TensorError> {
        if parents.len() != partials.len() {
            return Err(TensorError::ShapeMismatch {
                op: "custom",
                detail: format!("{} parents vs {} partials", parents.len(), partials.len()),
            });
        }
        for (&p, partial) in parents.iter().zip(&partials) {
            let ps = &self.nodes[p.0].value.shape;
            if ps != &value.shape || partial.shape != value.shape {
                return Err(TensorError::ShapeMismatch {
                    op: "custom",
                    detail: format!(
                        "value {:?}, parent {:?}, partial {:?}",
                        value.shape, ps, partial.shape
                    ),
                });
            }
            if !partial.is_finite() {
                return Err(TensorError::NonFinite { op: "custom" });
            }
        }
        let rg = parents.iter().any(|&p| self.needs(p));
        self.push(Op::Custom { parents: parents.to_vec(), partials }, value, rg, "custom")
    }

    // Conveniences built from the primitive set.

    /// Multiplies by a scalar constant.
    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId, TensorError> {
        let s = self.scalar_const(c)?;
        let shape = self.shape(a).to_vec();
        let b = self.broadcast_scalar(s, &shape)?;
        self.mul(a, b)
    }

    /// Adds a scalar constant.
    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId, TensorError> {
        let s = self.scalar_const(c)?;
        let shape = self.shape(a).to_vec();
        let b = self.broadcast_scalar(s, &shape)?;
        self.add(a, b)
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.scale(a, -1.0)
    }

    /// `x @ w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let xw = self.matmul(x, w)?;
        let rows = self.shape(xw)[0];
        let bb = self.broadcast_rows(b, rows)?;
        self.add(xw, bb)
    }

    /// Reverse sweep from a scalar root. Gradients of earlier calls are
    /// cleared first; afterwards `grad(id)` is populated for every node on
    /// a `requires_grad` path that influences the root.
    pub fn backward(&mut self, root: NodeId) -> Result<(), TensorError> {
        if self.nodes[root.0].value.numel() != 1 {
            return Err(TensorError::NonScalarRoot {
                shape: self.nodes[root.0].value.shape.clone(),
            });
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        let root_shape = self.nodes[root.0].value.shape.clone();
        grads[root.0] = Some(Tensor {
            shape: root_shape,
            data: vec![1.0],
            requires_grad: false,
        });
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |id: NodeId| &self.nodes[id.0].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                let neg = map1(g, |v| -v);
                self.acc(grads, *b, neg);
            }
            Op::Mul(a, b) => {
                self.acc(grads, *a, map2(g, val(*b), |gv, bv| gv * bv));
                self.acc(grads, *b, map2(g, val(*a), |gv, av| gv * av));
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, k, m) = (ta.shape[0], ta.shape[1], tb.shape[1]);
                if self.needs(*a) {
                    let mut da = vec![0.0; n * k];
                    matmul_nt(&g.data, &tb.data, n, m, k, &mut da);
                    self.acc(grads, *a, Tensor { shape: vec![n, k], data: da, requires_grad: false });
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * m];
                    matmul_tn(&ta.data, &g.data, n, k, m, &mut db);
                    self.acc(grads, *b, Tensor { shape: vec![k, m], data: db, requires_grad: false });
                }
            }
            Op::SumAll(a) => {
                let t = val(*a);
                let gv = g.data[0];
                self.acc(grads, *a, Tensor {
                    shape: t.shape.clone(),
                    data: vec![gv; t.numel()],
                    requires_grad: false,
                });
            }
            Op::MeanAll(a) => {
                let t = val(*a);
                let gv = g.data[0] / t.numel() as f64;
                self.acc(grads, *a, Tensor {
                    shape: t.shape.clone(),
                    data: vec![gv; t.numel()],
                    requires_grad: false,
                });
            }
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let t = val(*a);
                let (outer, len, inner) = axis_strides(&t.shape, *axis);
                let scale = match &self.nodes[i].op {
                    Op::MeanAxis(..) => 1.0 / len as f64,
                    _ => 1.0,
                };
                let mut da = vec![0.0; t.numel()];
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        for x in 0..inner {
                            da[base + x] = g.data[o * inner + x] * scale;
                        }
                    }
                }
                self.acc(grads, *a, Tensor { shape: t.shape.clone(), data: da, requires_grad: false });
            }
            Op::Exp(a) => {
                let y = &self.nodes[i].value;
                self.acc(grads, *a, map2(g, y, |gv, yv| gv * yv));
            }
            Op::Ln(a) => {
                self.acc(grads, *a, map2(g, val(*a), |gv, xv| gv / xv));
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                self.acc(grads, *a, map2(g, y, |gv, yv| gv * yv * (1.0 - yv)));
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                self.acc(grads, *a, map2(g, y, |gv, yv| gv * (1.0 - yv * yv)));
            }
            Op::Elu(a) => {
                // For x <= 0 the local slope is e^x = y + 1.
                let y = &self.nodes[i].value;
                let x = val(*a);
                let data = g
                    .data
                    .iter()
                    .zip(&x.data)
                    .zip(&y.data)
                    .map(|((&gv, &xv), &yv)| if xv > 0.0 { gv } else { gv * (yv + 1.0) })
                    .collect();
                self.acc(grads, *a, Tensor { shape: x.shape.clone(), data, requires_grad: false });
            }
            Op::Softplus(a) => {
                self.acc(grads, *a, map2(g, val(*a), |gv, xv| gv * sigmoid_scalar(xv)));
            }
            Op::Square(a) => {
                self.acc(grads, *a, map2(g, val(*a), |gv, xv| gv * 2.0 * xv));
            }
            Op::Sqrt(a) => {
                let y = &self.nodes[i].value;
                self.acc(grads, *a, map2(g, y, |gv, yv| gv / (2.0 * yv)));
            }
            Op::LogGamma(a) => {
                self.acc(grads, *a, map2(g, val(*a), |gv, xv| gv * special::digamma(xv)));
            }
            Op::Digamma(a) => {
                self.acc(grads, *a, map2(g, val(*a), |gv, xv| gv * special::trigamma(xv)));
            }
            Op::NormLast { input } => {
                let x = val(*input);
                let y = &self.nodes[i].value;
                let d = x.shape[x.rank() - 1];
                let rows = x.numel() / d;
                let mut da = vec![0.0; x.numel()];
                for r in 0..rows {
                    let yv = y.data[r];
                    if yv == 0.0 {
                        continue;
                    }
                    let gv = g.data[r];
                    for j in 0..d {
                        da[r * d + j] = gv * x.data[r * d + j] / yv;
                    }
                }
                self.acc(grads, *input, Tensor { shape: x.shape.clone(), data: da, requires_grad: false });
            }
            Op::Reshape(a) => {
                let x = val(*a);
                self.acc(grads, *a, Tensor {
                    shape: x.shape.clone(),
                    data: g.data.clone(),
                    requires_grad: false,
                });
            }
            Op::ConcatLast(parts) => {
                let rank = self.nodes[i].value.rank();
                let total_last = self.nodes[i].value.shape[rank - 1];
                let rows = self.nodes[i].value.numel() / total_last;
                let mut offset = 0;
                for &p in parts {
                    let t = val(p);
                    let w = t.shape[rank - 1];
                    if self.needs(p) {
                        let mut dp = vec![0.0; t.numel()];
                        for r in 0..rows {
                            dp[r * w..(r + 1) * w].copy_from_slice(
                                &g.data[r * total_last + offset..r * total_last + offset + w],
                            );
                        }
                        self.acc(grads, p, Tensor { shape: t.shape.clone(), data: dp, requires_grad: false });
                    }
                    offset += w;
                }
            }
            Op::SliceLast { input, start, end } => {
                let x = val(*input);
                let d = x.shape[x.rank() - 1];
                let w = end - start;
                let rows = x.numel() / d;
                let mut da = vec![0.0; x.numel()];
                for r in 0..rows {
                    da[r * d + start..r * d + end].copy_from_slice(&g.data[r * w..(r + 1) * w]);
                }
                self.acc(grads, *input, Tensor { shape: x.shape.clone(), data: da, requires_grad: false });
            }
            Op::BroadcastRows { input } => {
                let x = val(*input);
                let m = x.shape[0];
                let rows = g.numel() / m;
                let mut da = vec![0.0; m];
                for r in 0..rows {
                    for j in 0..m {
                        da[j] += g.data[r * m + j];
                    }
                }
                self.acc(grads, *input, Tensor { shape: x.shape.clone(), data: da, requires_grad: false });
            }
            Op::BroadcastScalar { input } => {
                let x = val(*input);
                let s: f64 = g.data.iter().sum();
                self.acc(grads, *input, Tensor { shape: x.shape.clone(), data: vec![s], requires_grad: false });
            }
            Op::Custom { parents, partials } => {
                for (&p, partial) in parents.iter().zip(partials) {
                    if self.needs(p) {
                        self.acc(grads, p, map2(g, partial, |gv, jv| gv * jv));
                    }
                }
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], id: NodeId, contrib: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(t) => t.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Overflow-safe ln(1 + e^x).
fn softplus_scalar(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn axis_strides(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn map1(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|&x| f(x)).collect(),
        requires_grad: false,
    }
}

fn map2(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape, b.shape);
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        requires_grad: false,
    }
}

/// C[n,m] += A[n,k] B[k,m]; ikj loop order keeps the inner loop contiguous.
fn matmul_nn(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, c: &mut [f64]) {
    for i in 0..n {
        let crow = &mut c[i * m..(i + 1) * m];
        for (kk, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            let brow = &b[kk * m..(kk + 1) * m];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// C[n,k] += A[n,m] B[k,m]^T (rows dotted with rows).
fn matmul_nt(a: &[f64], b: &[f64], n: usize, m: usize, k: usize, c: &mut [f64]) {
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        for kk in 0..k {
            let brow = &b[kk * m..(kk + 1) * m];
            let dot: f64 = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            c[i * k + kk] += dot;
        }
    }
}

/// C[k,m] += A[n,k]^T B[n,m].
fn matmul_tn(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, c: &mut [f64]) {
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for (kk, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            let crow = &mut c[kk * m..(kk + 1) * m];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngstream::{Stream, StreamKind};

    fn scalar_leaf(g: &mut Graph, v: f64) -> NodeId {
        g.insert(Tensor::scalar(v).with_grad()).unwrap()
    }

    #[test]
    fn sigmoid_at_zero_is_half_with_quarter_slope() {
        let mut g = Graph::new();
        let x = scalar_leaf(&mut g, 0.0);
        let y = g.sigmoid(x).unwrap();
        assert_eq!(g.scalar_value(y), 0.5);
        g.backward(y).unwrap();
        assert!((g.grad(x).unwrap().data[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn log_gamma_factorials() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![1.0, 4.0])).unwrap();
        let y = g.log_gamma(x).unwrap();
        assert!(g.value(y).data[0].abs() < 1e-12);
        assert!((g.value(y).data[1] - 6.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let w = g.insert(Tensor::from_vec(vec![1.0, 2.0, 3.0]).with_grad()).unwrap();
        let sq = g.mul(w, w).unwrap();
        let root = g.sum_all(sq).unwrap();
        assert_eq!(g.scalar_value(root), 14.0);
        g.backward(root).unwrap();
        assert_eq!(g.grad(w).unwrap().data, vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn matmul_known_product_and_gradient() {
        let mut g = Graph::new();
        let a = g
            .insert(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap().with_grad())
            .unwrap();
        let b = g
            .insert(Tensor::new(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap().with_grad())
            .unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data, vec![19.0, 22.0, 43.0, 50.0]);
        let root = g.sum_all(c).unwrap();
        g.backward(root).unwrap();
        // d sum(AB)/dA = 1 B^T, rows are column sums of B.
        assert_eq!(g.grad(a).unwrap().data, vec![11.0, 15.0, 11.0, 15.0]);
        assert_eq!(g.grad(b).unwrap().data, vec![4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let w = g.insert(Tensor::from_vec(vec![1.0, 2.0]).with_grad()).unwrap();
        let err = g.backward(w).unwrap_err();
        assert!(matches!(err, TensorError::NonScalarRoot { .. }));
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(-1.0)).unwrap();
        let err = g.ln(x).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { op: "ln" }));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        let b = g.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        assert!(matches!(g.add(a, b), Err(TensorError::ShapeMismatch { .. })));
    }

    /// Builds a composite graph touching every differentiable op and checks
    /// each leaf gradient against central finite differences.
    fn composite_loss(inputs: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let mut g = Graph::new();
        let a = g.insert(Tensor::new(vec![2, 3], inputs[0].clone()).unwrap().with_grad()).unwrap();
        let w = g.insert(Tensor::new(vec![3, 2], inputs[1].clone()).unwrap().with_grad()).unwrap();
        let b = g.insert(Tensor::from_vec(inputs[2].clone()).with_grad()).unwrap();
        let p = g.insert(Tensor::from_vec(inputs[3].clone()).with_grad()).unwrap();

        let lin = g.linear(a, w, b).unwrap();
        let t = g.tanh(lin).unwrap();
        let e = g.elu(lin).unwrap();
        let cat = g.concat_last(&[t, e]).unwrap();
        let sl = g.slice_last(cat, 1, 4).unwrap();
        let nm = g.norm_last(sl, 1e-8).unwrap();
        let s1 = g.mean_all(nm).unwrap();

        // Positive-domain path for ln / sqrt / log_gamma / digamma.
        let sp = g.softplus(p).unwrap();
        let shifted = g.add_scalar(sp, 1.2).unwrap();
        let lg = g.log_gamma(shifted).unwrap();
        let dg = g.digamma(shifted).unwrap();
        let lnp = g.ln(shifted).unwrap();
        let sq = g.sqrt(shifted).unwrap();
        let sig = g.sigmoid(p).unwrap();
        let ex = g.exp(sig).unwrap();
        let mixed = g.mul(lg, ex).unwrap();
        let mixed = g.add(mixed, dg).unwrap();
        let mixed = g.sub(mixed, lnp).unwrap();
        let mixed = g.add(mixed, sq).unwrap();
        let sqd = g.square(mixed).unwrap();
        let s2 = g.sum_all(sqd).unwrap();

        let v1 = s1_to_vec(&mut g, s1);
        let v2 = s1_to_vec(&mut g, s2);
        let both = g.concat_last(&[v1, v2]).unwrap();
        let root0 = g.sum_axis(both, 0).unwrap();
        let root = g.scale(root0, 0.5).unwrap();

        g.backward(root).unwrap();
        let loss = g.scalar_value(root);
        let grads = [a, w, b, p]
            .iter()
            .map(|&id| g.grad(id).map(|t| t.data.clone()).unwrap_or_default())
            .collect();
        (loss, grads)
    }

    fn s1_to_vec(g: &mut Graph, s: NodeId) -> NodeId {
        g.broadcast_scalar(s, &[1]).unwrap()
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let mut rng = Stream::new(99, StreamKind::Eval);
        let sizes = [6usize, 6, 2, 3];
        let inputs: Vec<Vec<f64>> = sizes
            .iter()
            .map(|&n| (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect())
            .collect();
        let (_, grads) = composite_loss(&inputs);
        let h = 1e-5;
        for (ti, n) in sizes.iter().enumerate() {
            for j in 0..*n {
                let mut up = inputs.clone();
                up[ti][j] += h;
                let mut dn = inputs.clone();
                dn[ti][j] -= h;
                let fd = (composite_loss(&up).0 - composite_loss(&dn).0) / (2.0 * h);
                let an = grads[ti][j];
                let denom = fd.abs().max(an.abs());
                if denom < 1e-6 {
                    assert!((fd - an).abs() < 1e-6, "tensor {ti} elem {j}: {an} vs fd {fd}");
                } else {
                    assert!(
                        ((fd - an) / denom).abs() < 1e-4,
                        "tensor {ti} elem {j}: {an} vs fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn forward_and_backward_are_deterministic() {
        let mut rng = Stream::new(7, StreamKind::Eval);
        let sizes = [6usize, 6, 2, 3];
        let inputs: Vec<Vec<f64>> = sizes
            .iter()
            .map(|&n| (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect())
            .collect();
        let (l1, g1) = composite_loss(&inputs);
        let (l2, g2) = composite_loss(&inputs);
        assert_eq!(l1.to_bits(), l2.to_bits());
        for (a, b) in g1.iter().zip(&g2) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn backward_is_linear_in_the_root() {
        // grad(a f + b g) = a grad(f) + b grad(g).
        let build = |ca: f64, cb: f64| -> (f64, Vec<f64>) {
            let mut g = Graph::new();
            let w = g.insert(Tensor::from_vec(vec![0.3, -0.7, 1.1]).with_grad()).unwrap();
            let f = {
                let sq = g.square(w).unwrap();
                g.sum_all(sq).unwrap()
            };
            let hfun = {
                let t = g.tanh(w).unwrap();
                g.mean_all(t).unwrap()
            };
            let fa = g.scale(f, ca).unwrap();
            let hb = g.scale(hfun, cb).unwrap();
            let root = g.add(fa, hb).unwrap();
            g.backward(root).unwrap();
            (g.scalar_value(root), g.grad(w).unwrap().data.clone())
        };
        let (_, gf) = build(1.0, 0.0);
        let (_, gg) = build(0.0, 1.0);
        let (_, gboth) = build(2.0, -3.0);
        for i in 0..3 {
            let expect = 2.0 * gf[i] - 3.0 * gg[i];
            assert!((gboth[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_accumulates_over_shared_subexpressions() {
        let mut g = Graph::new();
        let x = scalar_leaf(&mut g, 1.5);
        // y = x*x + x -> dy/dx = 2x + 1 = 4.
        let xx = g.mul(x, x).unwrap();
        let y = g.add(xx, x).unwrap();
        g.backward(y).unwrap();
        assert!((g.grad(x).unwrap().data[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn custom_node_routes_supplied_partials() {
        let mut g = Graph::new();
        let a = g.insert(Tensor::from_vec(vec![1.0, 2.0]).with_grad()).unwrap();
        let b = g.insert(Tensor::from_vec(vec![3.0, 4.0]).with_grad()).unwrap();
        let value = Tensor::from_vec(vec![10.0, 20.0]);
        let pa = Tensor::from_vec(vec![0.5, 0.25]);
        let pb = Tensor::from_vec(vec![-1.0, 2.0]);
        let c = g.custom(&[a, b], value, vec![pa, pb]).unwrap();
        let root = g.sum_all(c).unwrap();
        g.backward(root).unwrap();
        assert_eq!(g.grad(a).unwrap().data, vec![0.5, 0.25]);
        assert_eq!(g.grad(b).unwrap().data, vec![-1.0, 2.0]);
    }

    #[test]
    fn reductions_match_manual_sums() {
        let mut g = Graph::new();
        let t = g
            .insert(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap().with_grad())
            .unwrap();
        let rows = g.sum_axis(t, 1).unwrap();
        assert_eq!(g.value(rows).data, vec![6.0, 15.0]);
        let cols = g.mean_axis(t, 0).unwrap();
        assert_eq!(g.value(cols).data, vec![2.5, 3.5, 4.5]);
        let m = g.mean_all(t).unwrap();
        assert_eq!(g.scalar_value(m), 3.5);
        g.backward(m).unwrap();
        assert!(g.grad(t).unwrap().data.iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn reshape_preserves_data_and_routes_gradients() {
        let mut g = Graph::new();
        let t = g
            .insert(Tensor::new(vec![2, 4], (1..=8).map(f64::from).collect()).unwrap().with_grad())
            .unwrap();
        let r = g.reshape(t, &[4, 2]).unwrap();
        assert_eq!(g.shape(r), &[4, 2]);
        let n = g.norm_last(r, 0.0).unwrap();
        let root = g.sum_all(n).unwrap();
        g.backward(root).unwrap();
        // d||v||/dv = v/||v|| per row of the reshaped view.
        let grad = &g.grad(t).unwrap().data;
        let n0 = (1.0f64 + 4.0).sqrt();
        assert!((grad[0] - 1.0 / n0).abs() < 1e-12);
        assert!((grad[1] - 2.0 / n0).abs() < 1e-12);
    }

    #[test]
    fn norm_last_of_three_four_is_five() {
        let mut g = Graph::new();
        let t = g.insert(Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap().with_grad()).unwrap();
        let n = g.norm_last(t, 0.0).unwrap();
        assert!((g.value(n).data[0] - 5.0).abs() < 1e-12);
        let root = g.sum_all(n).unwrap();
        g.backward(root).unwrap();
        let grad = &g.grad(t).unwrap().data;
        assert!((grad[0] - 0.6).abs() < 1e-12);
        assert!((grad[1] - 0.8).abs() < 1e-12);
    }
}
