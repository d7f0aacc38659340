//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Nodes are appended in construction order, which is already topological:
//! an op can only reference previously created nodes. `forward` evaluates
//! every node in that order, `backward` walks it in reverse accumulating
//! adjoints into nodes that (transitively) depend on a trainable leaf.
//!
//! Clamp ops use the saturated-branch convention at their kink: at
//! `min(1, s)` with `s == 1` exactly the gradient is 0, and likewise for
//! `max(c, s)` at `s == c`. Logarithms are guarded below [`EPS_LOG`] so a
//! truth value of 0 produces a large finite loss rather than infinity.

use thiserror::Error;

use super::tensor::Tensor;

/// Floor applied inside `log_guarded`: the op computes `ln(max(x, EPS_LOG))`.
pub const EPS_LOG: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {actual:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        actual: Vec<usize>,
    },
    #[error("non-finite value produced by {op} at node {node}")]
    NonFinite { op: &'static str, node: usize },
    #[error("backward requires a single-element output, got shape {actual:?}")]
    NonScalarOutput { actual: Vec<usize> },
    #[error("node {0} is not a leaf")]
    NotALeaf(usize),
    #[error("concat requires at least one input")]
    EmptyConcat,
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId, f64),
    AddScalarNode(NodeId, NodeId),
    MatVec(NodeId, NodeId),
    Bilinear(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    LogGuarded(NodeId),
    PowConst(NodeId, f64),
    ClampMin(NodeId, f64),
    ClampMax(NodeId, f64),
    Sum(NodeId),
    Mean(NodeId),
    Concat(Vec<NodeId>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::AddScalarNode(..) => "add_scalar_node",
            Op::MatVec(..) => "matvec",
            Op::Bilinear(..) => "bilinear",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::LogGuarded(..) => "log_guarded",
            Op::PowConst(..) => "pow_const",
            Op::ClampMin(..) => "clamp_min",
            Op::ClampMax(..) => "clamp_max",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Concat(..) => "concat",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddScalarNode(a, b)
            | Op::MatVec(a, b)
            | Op::Bilinear(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Offset(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::LogGuarded(a)
            | Op::PowConst(a, _)
            | Op::ClampMin(a, _)
            | Op::ClampMax(a, _)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::Concat(v) => v.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    name: Option<String>,
}

/// Computation tape: append-only node arena plus the list of trainable leaves.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
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

    /// Trainable leaves in insertion order.
    pub fn params(&self) -> &[NodeId] {
        &self.params
    }

    pub fn param_name(&self, id: NodeId) -> Option<&str> {
        self.nodes[id.0].name.as_deref()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Adjoint accumulated by the last `backward`, if the node needed one.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Constant leaf: participates in the forward pass, receives no gradient.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false, None)
    }

    /// Trainable named leaf.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> NodeId {
        let id = self.push(Op::Leaf, value, true, Some(name.into()));
        self.params.push(id);
        id
    }

    /// Replaces a leaf's value, keeping its shape.
    pub fn set_leaf(&mut self, id: NodeId, value: Tensor) -> Result<(), GraphError> {
        let node = &mut self.nodes[id.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(GraphError::NotALeaf(id.0));
        }
        if node.value.shape() != value.shape() {
            return Err(GraphError::ShapeMismatch {
                op: "set_leaf",
                left: node.value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        node.value = value;
        Ok(())
    }

    /// Mutable view of a leaf's buffer, used by `grad_check` perturbations.
    pub fn leaf_data_mut(&mut self, id: NodeId) -> Result<&mut [f64], GraphError> {
        let node = &mut self.nodes[id.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(GraphError::NotALeaf(id.0));
        }
        Ok(node.value.data_mut())
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool, name: Option<String>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            requires_grad,
            name,
        });
        id
    }

    fn push_op(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        let requires_grad = op
            .inputs()
            .iter()
            .any(|i| self.nodes[i.0].requires_grad);
        self.push(op, Tensor::zeros(shape), requires_grad, None)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Vec<usize>, GraphError> {
        let sa = self.nodes[a.0].value.shape();
        let sb = self.nodes[b.0].value.shape();
        if sa != sb {
            return Err(GraphError::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(sa.to_vec())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let shape = self.same_shape("add", a, b)?;
        Ok(self.push_op(Op::Add(a, b), shape))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let shape = self.same_shape("sub", a, b)?;
        Ok(self.push_op(Op::Sub(a, b), shape))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let shape = self.same_shape("mul", a, b)?;
        Ok(self.push_op(Op::Mul(a, b), shape))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let shape = self.nodes[a.0].value.shape().to_vec();
        self.push_op(Op::Scale(a, k), shape)
    }

    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        let shape = self.nodes[a.0].value.shape().to_vec();
        self.push_op(Op::Offset(a, c), shape)
    }

    /// Broadcast-adds a single-element node to every element of `a`.
    pub fn add_scalar_node(&mut self, a: NodeId, s: NodeId) -> Result<NodeId, GraphError> {
        let ss = self.nodes[s.0].value.shape();
        if self.nodes[s.0].value.len() != 1 {
            return Err(GraphError::BadShape {
                op: "add_scalar_node",
                expected: "single-element scalar",
                actual: ss.to_vec(),
            });
        }
        let shape = self.nodes[a.0].value.shape().to_vec();
        Ok(self.push_op(Op::AddScalarNode(a, s), shape))
    }

    /// `[r, c]` matrix times `[c]` vector.
    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId, GraphError> {
        let ms = self.nodes[m.0].value.shape().to_vec();
        let vs = self.nodes[v.0].value.shape().to_vec();
        if ms.len() != 2 {
            return Err(GraphError::BadShape {
                op: "matvec",
                expected: "rank-2 matrix",
                actual: ms,
            });
        }
        if vs.len() != 1 || vs[0] != ms[1] {
            return Err(GraphError::ShapeMismatch {
                op: "matvec",
                left: ms,
                right: vs,
            });
        }
        Ok(self.push_op(Op::MatVec(m, v), vec![ms[0]]))
    }

    /// Batched bilinear form: `w` of shape `[k, d, d]`, `v` of shape `[d]`,
    /// output `[k]` with `out_k = v^T W_k v`.
    pub fn bilinear(&mut self, w: NodeId, v: NodeId) -> Result<NodeId, GraphError> {
        let ws = self.nodes[w.0].value.shape().to_vec();
        let vs = self.nodes[v.0].value.shape().to_vec();
        if ws.len() != 3 || ws[1] != ws[2] {
            return Err(GraphError::BadShape {
                op: "bilinear",
                expected: "rank-3 [k, d, d] kernel stack",
                actual: ws,
            });
        }
        if vs.len() != 1 || vs[0] != ws[1] {
            return Err(GraphError::ShapeMismatch {
                op: "bilinear",
                left: ws,
                right: vs,
            });
        }
        Ok(self.push_op(Op::Bilinear(w, v), vec![ws[0]]))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let shape = self.nodes[a.0].value.shape().to_vec();
        self.push_op(Op::Tanh(a), shape)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let shape = self.nodes[a.0].value.shape().to_vec();
        self.push_op(Op::Sigmoid(a), shape)
    }

    /// `ln(max(x, EPS_LOG))`; gradient is 0 on the guarded branch.
    pub fn log_guarded(&mut self, a: NodeId) -> NodeId {
        let shape = self.nodes[a.0].value.shape().to_vec();
        self.push_op(Op::LogGuarded(a), shape)
    }

    /// Elementwise `x^p` for a constant exponent.
    pub fn powc(&mut self, a: NodeId, p: f64) -> NodeId {
        let shape = self.nodes[a.0].value.shape().to_vec();
        self.push_op(Op::PowConst(a, p), shape)
    }

    /// Elementwise `max(x, c)`.
    pub fn clamp_min(&mut self, a: NodeId, c: f64) -> NodeId {
        let shape = self.nodes[a.0].value.shape().to_vec();
        self.push_op(Op::ClampMin(a, c), shape)
    }

    /// Elementwise `min(x, c)`.
    pub fn clamp_max(&mut self, a: NodeId, c: f64) -> NodeId {
        let shape = self.nodes[a.0].value.shape().to_vec();
        self.push_op(Op::ClampMax(a, c), shape)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push_op(Op::Sum(a), vec![1])
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        assert!(
            !self.nodes[a.0].value.is_empty(),
            "mean over an empty tensor"
        );
        self.push_op(Op::Mean(a), vec![1])
    }

    /// Concatenates vectors (or flattens arbitrary tensors) in order.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, GraphError> {
        if parts.is_empty() {
            return Err(GraphError::EmptyConcat);
        }
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.len()).sum();
        Ok(self.push_op(Op::Concat(parts.to_vec()), vec![total]))
    }

    /// Op name plus input ids for every node, for structural comparisons.
    /// Scalar attributes (scale factors, clamp bounds) are not included.
    pub fn op_signature(&self) -> Vec<(&'static str, Vec<usize>)> {
        self.nodes
            .iter()
            .map(|n| (n.op.name(), n.op.inputs().iter().map(|i| i.0).collect()))
            .collect()
    }

    /// Evaluates every node in topological (construction) order.
    pub fn forward(&mut self) -> Result<(), GraphError> {
        for i in 0..self.nodes.len() {
            let op = self.nodes[i].op.clone();
            let value = match &op {
                Op::Leaf => continue,
                Op::Add(a, b) => {
                    let (a, b) = (self.val(*a), self.val(*b));
                    Tensor::from_raw(
                        a.shape().to_vec(),
                        a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect(),
                    )
                }
                Op::Sub(a, b) => {
                    let (a, b) = (self.val(*a), self.val(*b));
                    Tensor::from_raw(
                        a.shape().to_vec(),
                        a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect(),
                    )
                }
                Op::Mul(a, b) => {
                    let (a, b) = (self.val(*a), self.val(*b));
                    Tensor::from_raw(
                        a.shape().to_vec(),
                        a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
                    )
                }
                Op::Scale(a, k) => {
                    let a = self.val(*a);
                    Tensor::from_raw(a.shape().to_vec(), a.data().iter().map(|x| x * k).collect())
                }
                Op::Offset(a, c) => {
                    let a = self.val(*a);
                    Tensor::from_raw(a.shape().to_vec(), a.data().iter().map(|x| x + c).collect())
                }
                Op::AddScalarNode(a, s) => {
                    let sv = self.val(*s).data()[0];
                    let a = self.val(*a);
                    Tensor::from_raw(a.shape().to_vec(), a.data().iter().map(|x| x + sv).collect())
                }
                Op::MatVec(m, v) => {
                    let (mt, vt) = (self.val(*m), self.val(*v));
                    let (r, c) = (mt.shape()[0], mt.shape()[1]);
                    let mut out = vec![0.0; r];
                    for i in 0..r {
                        let row = &mt.data()[i * c..(i + 1) * c];
                        out[i] = row.iter().zip(vt.data()).map(|(a, b)| a * b).sum();
                    }
                    Tensor::from_raw(vec![r], out)
                }
                Op::Bilinear(w, v) => {
                    let (wt, vt) = (self.val(*w), self.val(*v));
                    let (k, d) = (wt.shape()[0], wt.shape()[1]);
                    let vd = vt.data();
                    let mut out = vec![0.0; k];
                    for q in 0..k {
                        let base = q * d * d;
                        let mut acc = 0.0;
                        for i in 0..d {
                            let row = &wt.data()[base + i * d..base + (i + 1) * d];
                            let mut rowdot = 0.0;
                            for j in 0..d {
                                rowdot += row[j] * vd[j];
                            }
                            acc += vd[i] * rowdot;
                        }
                        out[q] = acc;
                    }
                    Tensor::from_raw(vec![k], out)
                }
                Op::Tanh(a) => {
                    let a = self.val(*a);
                    Tensor::from_raw(
                        a.shape().to_vec(),
                        a.data().iter().map(|x| x.tanh()).collect(),
                    )
                }
                Op::Sigmoid(a) => {
                    let a = self.val(*a);
                    Tensor::from_raw(
                        a.shape().to_vec(),
                        a.data().iter().map(|&x| sigmoid(x)).collect(),
                    )
                }
                Op::LogGuarded(a) => {
                    let a = self.val(*a);
                    Tensor::from_raw(
                        a.shape().to_vec(),
                        a.data().iter().map(|x| x.max(EPS_LOG).ln()).collect(),
                    )
                }
                Op::PowConst(a, p) => {
                    let a = self.val(*a);
                    Tensor::from_raw(
                        a.shape().to_vec(),
                        a.data().iter().map(|x| x.powf(*p)).collect(),
                    )
                }
                Op::ClampMin(a, c) => {
                    let a = self.val(*a);
                    Tensor::from_raw(
                        a.shape().to_vec(),
                        a.data().iter().map(|x| x.max(*c)).collect(),
                    )
                }
                Op::ClampMax(a, c) => {
                    let a = self.val(*a);
                    Tensor::from_raw(
                        a.shape().to_vec(),
                        a.data().iter().map(|x| x.min(*c)).collect(),
                    )
                }
                Op::Sum(a) => Tensor::scalar_unchecked(self.val(*a).data().iter().sum()),
                Op::Mean(a) => {
                    let a = self.val(*a);
                    Tensor::scalar_unchecked(a.data().iter().sum::<f64>() / a.len() as f64)
                }
                Op::Concat(parts) => {
                    let mut out = Vec::new();
                    for p in parts {
                        out.extend_from_slice(self.val(*p).data());
                    }
                    let n = out.len();
                    Tensor::from_raw(vec![n], out)
                }
            };
            if !value.is_finite() {
                return Err(GraphError::NonFinite {
                    op: op.name(),
                    node: i,
                });
            }
            self.nodes[i].value = value;
        }
        Ok(())
    }

    fn val(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Reverse pass from a single-element `output` node. Adjoints accumulate
    /// only into nodes that transitively depend on a trainable leaf.
    pub fn backward(&mut self, output: NodeId) -> Result<(), GraphError> {
        if self.nodes[output.0].value.len() != 1 {
            return Err(GraphError::NonScalarOutput {
                actual: self.nodes[output.0].value.shape().to_vec(),
            });
        }
        self.zero_grads();
        if !self.nodes[output.0].requires_grad {
            return Ok(());
        }
        self.nodes[output.0].grad = Some(Tensor::scalar(1.0));

        for i in (0..=output.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let g = self.nodes[i].grad.clone().unwrap();
            match &op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accumulate(*a, |_self, ga| axpy(ga, g.data(), 1.0));
                    self.accumulate(*b, |_self, gb| axpy(gb, g.data(), 1.0));
                }
                Op::Sub(a, b) => {
                    self.accumulate(*a, |_self, ga| axpy(ga, g.data(), 1.0));
                    self.accumulate(*b, |_self, gb| axpy(gb, g.data(), -1.0));
                }
                Op::Mul(a, b) => {
                    let bv = self.val(*b).data().to_vec();
                    self.accumulate(*a, |_self, ga| {
                        for (gi, (gv, bv)) in ga.iter_mut().zip(g.data().iter().zip(&bv)) {
                            *gi += gv * bv;
                        }
                    });
                    let av = self.val(*a).data().to_vec();
                    self.accumulate(*b, |_self, gb| {
                        for (gi, (gv, av)) in gb.iter_mut().zip(g.data().iter().zip(&av)) {
                            *gi += gv * av;
                        }
                    });
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    self.accumulate(*a, |_self, ga| axpy(ga, g.data(), k));
                }
                Op::Offset(a, _) => {
                    self.accumulate(*a, |_self, ga| axpy(ga, g.data(), 1.0));
                }
                Op::AddScalarNode(a, s) => {
                    self.accumulate(*a, |_self, ga| axpy(ga, g.data(), 1.0));
                    let total: f64 = g.data().iter().sum();
                    self.accumulate(*s, |_self, gs| gs[0] += total);
                }
                Op::MatVec(m, v) => {
                    let (r, c) = {
                        let ms = self.val(*m).shape();
                        (ms[0], ms[1])
                    };
                    let vv = self.val(*v).data().to_vec();
                    self.accumulate(*m, |_self, gm| {
                        for i in 0..r {
                            let gi = g.data()[i];
                            for j in 0..c {
                                gm[i * c + j] += gi * vv[j];
                            }
                        }
                    });
                    let mv = self.val(*m).data().to_vec();
                    self.accumulate(*v, |_self, gv| {
                        for i in 0..r {
                            let gi = g.data()[i];
                            for j in 0..c {
                                gv[j] += gi * mv[i * c + j];
                            }
                        }
                    });
                }
                Op::Bilinear(w, v) => {
                    let (k, d) = {
                        let ws = self.val(*w).shape();
                        (ws[0], ws[1])
                    };
                    let vv = self.val(*v).data().to_vec();
                    self.accumulate(*w, |_self, gw| {
                        for q in 0..k {
                            let gq = g.data()[q];
                            let base = q * d * d;
                            for i in 0..d {
                                let gvi = gq * vv[i];
                                for j in 0..d {
                                    gw[base + i * d + j] += gvi * vv[j];
                                }
                            }
                        }
                    });
                    let wv = self.val(*w).data().to_vec();
                    self.accumulate(*v, |_self, gv| {
                        for q in 0..k {
                            let gq = g.data()[q];
                            let base = q * d * d;
                            for i in 0..d {
                                let mut acc = 0.0;
                                for j in 0..d {
                                    acc += (wv[base + i * d + j] + wv[base + j * d + i]) * vv[j];
                                }
                                gv[i] += gq * acc;
                            }
                        }
                    });
                }
                Op::Tanh(a) => {
                    let out = self.nodes[i].value.data().to_vec();
                    self.accumulate(*a, |_self, ga| {
                        for (gi, (gv, t)) in ga.iter_mut().zip(g.data().iter().zip(&out)) {
                            *gi += gv * (1.0 - t * t);
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let out = self.nodes[i].value.data().to_vec();
                    self.accumulate(*a, |_self, ga| {
                        for (gi, (gv, s)) in ga.iter_mut().zip(g.data().iter().zip(&out)) {
                            *gi += gv * s * (1.0 - s);
                        }
                    });
                }
                Op::LogGuarded(a) => {
                    let xs = self.val(*a).data().to_vec();
                    self.accumulate(*a, |_self, ga| {
                        for (gi, (gv, x)) in ga.iter_mut().zip(g.data().iter().zip(&xs)) {
                            if *x > EPS_LOG {
                                *gi += gv / x;
                            }
                        }
                    });
                }
                Op::PowConst(a, p) => {
                    let p = *p;
                    let xs = self.val(*a).data().to_vec();
                    self.accumulate(*a, |_self, ga| {
                        for (gi, (gv, x)) in ga.iter_mut().zip(g.data().iter().zip(&xs)) {
                            *gi += gv * pow_grad(*x, p);
                        }
                    });
                }
                Op::ClampMin(a, c) => {
                    let c = *c;
                    let xs = self.val(*a).data().to_vec();
                    self.accumulate(*a, |_self, ga| {
                        for (gi, (gv, x)) in ga.iter_mut().zip(g.data().iter().zip(&xs)) {
                            if *x > c {
                                *gi += gv;
                            }
                        }
                    });
                }
                Op::ClampMax(a, c) => {
                    let c = *c;
                    let xs = self.val(*a).data().to_vec();
                    self.accumulate(*a, |_self, ga| {
                        for (gi, (gv, x)) in ga.iter_mut().zip(g.data().iter().zip(&xs)) {
                            if *x < c {
                                *gi += gv;
                            }
                        }
                    });
                }
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    self.accumulate(*a, |_self, ga| {
                        for gi in ga.iter_mut() {
                            *gi += gv;
                        }
                    });
                }
                Op::Mean(a) => {
                    let n = self.val(*a).len() as f64;
                    let gv = g.data()[0] / n;
                    self.accumulate(*a, |_self, ga| {
                        for gi in ga.iter_mut() {
                            *gi += gv;
                        }
                    });
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts.clone() {
                        let n = self.val(p).len();
                        let slice = g.data()[offset..offset + n].to_vec();
                        self.accumulate(p, |_self, gp| {
                            for (gi, gv) in gp.iter_mut().zip(&slice) {
                                *gi += gv;
                            }
                        });
                        offset += n;
                    }
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, f: impl FnOnce(&(), &mut [f64])) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        if self.nodes[id.0].grad.is_none() {
            self.nodes[id.0].grad = Some(Tensor::zeros_like(&self.nodes[id.0].value));
        }
        let mut grad = self.nodes[id.0].grad.take().unwrap();
        f(&(), grad.data_mut());
        self.nodes[id.0].grad = Some(grad);
    }

    /// Central-difference check of every trainable leaf against the analytic
    /// gradient of `output`. Returns the worst relative error
    /// `|analytic - numeric| / max(1e-12, |analytic| + |numeric|)`.
    pub fn grad_check(&mut self, output: NodeId, eps: f64) -> Result<f64, GraphError> {
        self.forward()?;
        self.backward(output)?;
        let params = self.params.clone();
        let analytic: Vec<Vec<f64>> = params
            .iter()
            .map(|p| {
                self.grad(*p)
                    .map(|g| g.data().to_vec())
                    .unwrap_or_else(|| vec![0.0; self.nodes[p.0].value.len()])
            })
            .collect();

        let mut worst: f64 = 0.0;
        for (pi, p) in params.iter().enumerate() {
            let n = self.nodes[p.0].value.len();
            for e in 0..n {
                let orig = self.nodes[p.0].value.data()[e];
                self.leaf_data_mut(*p)?[e] = orig + eps;
                self.forward()?;
                let plus = self.val(output).item();
                self.leaf_data_mut(*p)?[e] = orig - eps;
                self.forward()?;
                let minus = self.val(output).item();
                self.leaf_data_mut(*p)?[e] = orig;
                let numeric = (plus - minus) / (2.0 * eps);
                let a = analytic[pi][e];
                let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
                worst = worst.max(rel);
            }
        }
        self.forward()?;
        Ok(worst)
    }
}

impl Tensor {
    fn scalar_unchecked(x: f64) -> Self {
        Tensor::from_raw(vec![1], vec![x])
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// d(x^p)/dx with finite subgradients at the boundary cases.
fn pow_grad(x: f64, p: f64) -> f64 {
    if p == 0.0 {
        return 0.0;
    }
    if x == 0.0 {
        // p < 1 would be unbounded; clamp to 0 so training stays finite.
        return if p == 1.0 { 1.0 } else { 0.0 };
    }
    p * x.powf(p - 1.0)
}

fn axpy(acc: &mut [f64], src: &[f64], k: f64) {
    for (a, s) in acc.iter_mut().zip(src) {
        *a += s * k;
    }
}
