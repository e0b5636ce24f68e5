use crate::error::{Error, Result};
use crate::numerics::tensor::{matmul_raw, Tensor};

/// Inputs to log are clamped to at least this value before taking the
/// logarithm; the gradient is zero in the clamped region so analytic and
/// finite-difference derivatives agree on the function actually computed.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    MulScalar { x: NodeId, c: f64 },
    RowBroadcastAdd { x: NodeId, bias: NodeId },
    Relu { x: NodeId },
    LeakyRelu { x: NodeId, alpha: f64 },
    Sigmoid { x: NodeId },
    Tanh { x: NodeId },
    Log { x: NodeId },
    Mean { x: NodeId },
    Clamp { x: NodeId, lo: f64, hi: f64 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::MulScalar { .. } => "mul_scalar",
            Op::RowBroadcastAdd { .. } => "row_broadcast_add",
            Op::Relu { .. } => "relu",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Tanh { .. } => "tanh",
            Op::Log { .. } => "log",
            Op::Mean { .. } => "mean",
            Op::Clamp { .. } => "clamp",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients from one backward pass, indexed by the node they belong to.
#[derive(Debug)]
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.by_node[id.0].as_ref()
    }

    /// Gradient for a leaf, as zeros when the loss did not touch it.
    pub fn for_leaf(&self, id: NodeId, shape: &[usize]) -> Tensor {
        match &self.by_node[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}

/// Record-and-replay reverse-mode tape. Every op records its inputs and
/// caches its forward value; `backward` replays the record in reverse, so
/// nodes always appear after the nodes they consume.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
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

    /// Leaf that participates in backward.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf treated as constant data; backward never propagates into it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op, value: Tensor, inputs: &[NodeId]) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: op.name(),
                node: self.nodes.len(),
            });
        }
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        Ok(self.push(op, value, requires_grad))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!("{:?} x {:?}", av.shape(), bv.shape()),
            });
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let out = Tensor::from_vec(vec![m, n], matmul_raw(av.data(), bv.data(), m, k, n))?;
        self.record(Op::Matmul { a, b }, out, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.elementwise_pair("add", a, b, |x, y| x + y)?;
        self.record(Op::Add { a, b }, out, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.elementwise_pair("sub", a, b, |x, y| x - y)?;
        self.record(Op::Sub { a, b }, out, &[a, b])
    }

    fn elementwise_pair(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape {
                op,
                detail: format!("{:?} vs {:?}", av.shape(), bv.shape()),
            });
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::from_vec(av.shape().to_vec(), data)
    }

    pub fn mul_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let out = self.map_unary(x, |v| v * c);
        self.record(Op::MulScalar { x, c }, out, &[x])
    }

    /// x [r x c] plus a rank-1 bias [c], broadcast over rows.
    pub fn row_broadcast_add(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if xv.shape().len() != 2 || bv.shape().len() != 1 || xv.shape()[1] != bv.shape()[0] {
            return Err(Error::Shape {
                op: "row_broadcast_add",
                detail: format!("{:?} + {:?}", xv.shape(), bv.shape()),
            });
        }
        let cols = xv.shape()[1];
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv.data()[i % cols])
            .collect();
        let out = Tensor::from_vec(xv.shape().to_vec(), data)?;
        self.record(Op::RowBroadcastAdd { x, bias }, out, &[x, bias])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.map_unary(x, |v| if v > 0.0 { v } else { 0.0 });
        self.record(Op::Relu { x }, out, &[x])
    }

    pub fn leaky_relu(&mut self, x: NodeId, alpha: f64) -> Result<NodeId> {
        let out = self.map_unary(x, |v| if v > 0.0 { v } else { alpha * v });
        self.record(Op::LeakyRelu { x, alpha }, out, &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.map_unary(x, |v| 1.0 / (1.0 + (-v).exp()));
        self.record(Op::Sigmoid { x }, out, &[x])
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.map_unary(x, f64::tanh);
        self.record(Op::Tanh { x }, out, &[x])
    }

    /// Natural log of max(x, LOG_FLOOR).
    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.map_unary(x, |v| v.max(LOG_FLOOR).ln());
        self.record(Op::Log { x }, out, &[x])
    }

    /// Full reduction to a one-element tensor.
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.numel() == 0 {
            return Err(Error::Shape {
                op: "mean",
                detail: "empty tensor".into(),
            });
        }
        let out = Tensor::scalar(xv.data().iter().sum::<f64>() / xv.numel() as f64);
        self.record(Op::Mean { x }, out, &[x])
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::Contract(format!("clamp bounds inverted: [{lo}, {hi}]")));
        }
        let out = self.map_unary(x, |v| v.clamp(lo, hi));
        self.record(Op::Clamp { x, lo, hi }, out, &[x])
    }

    fn map_unary(&self, x: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| f(*v)).collect();
        Tensor::from_vec(xv.shape().to_vec(), data).expect("unary op preserves shape")
    }

    /// Reverse pass from a scalar loss. Pure replay over cached forward
    /// values in fixed reverse order, so repeated calls are bit-identical.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = None;
                continue;
            }
            let upstream = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(idx, &upstream, &mut grads)?;
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(upstream);
            }
        }
        Ok(Gradients { by_node: grads })
    }

    fn propagate(&self, idx: usize, upstream: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.needs_grad(*a) {
                    // dA = dC * B^T
                    let bt = transpose(bv.data(), k, n);
                    let da = matmul_raw(upstream.data(), &bt, m, n, k);
                    self.accumulate(grads, *a, Tensor::from_vec(vec![m, k], da)?, "matmul", idx)?;
                }
                if self.needs_grad(*b) {
                    // dB = A^T * dC
                    let at = transpose(av.data(), m, k);
                    let db = matmul_raw(&at, upstream.data(), k, m, n);
                    self.accumulate(grads, *b, Tensor::from_vec(vec![k, n], db)?, "matmul", idx)?;
                }
            }
            Op::Add { a, b } => {
                if self.needs_grad(*a) {
                    self.accumulate(grads, *a, upstream.clone(), "add", idx)?;
                }
                if self.needs_grad(*b) {
                    self.accumulate(grads, *b, upstream.clone(), "add", idx)?;
                }
            }
            Op::Sub { a, b } => {
                if self.needs_grad(*a) {
                    self.accumulate(grads, *a, upstream.clone(), "sub", idx)?;
                }
                if self.needs_grad(*b) {
                    let neg = scale_tensor(upstream, -1.0);
                    self.accumulate(grads, *b, neg, "sub", idx)?;
                }
            }
            Op::MulScalar { x, c } => {
                if self.needs_grad(*x) {
                    self.accumulate(grads, *x, scale_tensor(upstream, *c), "mul_scalar", idx)?;
                }
            }
            Op::RowBroadcastAdd { x, bias } => {
                if self.needs_grad(*x) {
                    self.accumulate(grads, *x, upstream.clone(), "row_broadcast_add", idx)?;
                }
                if self.needs_grad(*bias) {
                    let cols = self.value(*bias).numel();
                    let mut db = vec![0.0; cols];
                    for (i, g) in upstream.data().iter().enumerate() {
                        db[i % cols] += g;
                    }
                    let db = Tensor::from_vec(vec![cols], db)?;
                    self.accumulate(grads, *bias, db, "row_broadcast_add", idx)?;
                }
            }
            Op::Relu { x } => {
                self.unary_vjp(grads, *x, upstream, idx, "relu", |xi, _yi, g| {
                    if xi > 0.0 {
                        g
                    } else {
                        0.0
                    }
                })?;
            }
            Op::LeakyRelu { x, alpha } => {
                let alpha = *alpha;
                self.unary_vjp(grads, *x, upstream, idx, "leaky_relu", move |xi, _yi, g| {
                    if xi > 0.0 {
                        g
                    } else {
                        alpha * g
                    }
                })?;
            }
            Op::Sigmoid { x } => {
                self.unary_vjp(grads, *x, upstream, idx, "sigmoid", |_xi, yi, g| {
                    g * yi * (1.0 - yi)
                })?;
            }
            Op::Tanh { x } => {
                self.unary_vjp(grads, *x, upstream, idx, "tanh", |_xi, yi, g| {
                    g * (1.0 - yi * yi)
                })?;
            }
            Op::Log { x } => {
                // Zero gradient inside the clamped region, matching forward.
                self.unary_vjp(grads, *x, upstream, idx, "log", |xi, _yi, g| {
                    if xi > LOG_FLOOR {
                        g / xi
                    } else {
                        0.0
                    }
                })?;
            }
            Op::Mean { x } => {
                if self.needs_grad(*x) {
                    let xv = self.value(*x);
                    let g = upstream.data()[0] / xv.numel() as f64;
                    let dx = Tensor::filled(xv.shape().to_vec(), g);
                    self.accumulate(grads, *x, dx, "mean", idx)?;
                }
            }
            Op::Clamp { x, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                self.unary_vjp(grads, *x, upstream, idx, "clamp", move |xi, _yi, g| {
                    if xi > lo && xi < hi {
                        g
                    } else {
                        0.0
                    }
                })?;
            }
        }
        Ok(())
    }

    fn unary_vjp(
        &self,
        grads: &mut [Option<Tensor>],
        x: NodeId,
        upstream: &Tensor,
        idx: usize,
        op: &'static str,
        f: impl Fn(f64, f64, f64) -> f64,
    ) -> Result<()> {
        if !self.needs_grad(x) {
            return Ok(());
        }
        let xv = self.value(x);
        let yv = &self.nodes[idx].value;
        let data = xv
            .data()
            .iter()
            .zip(yv.data())
            .zip(upstream.data())
            .map(|((xi, yi), g)| f(*xi, *yi, *g))
            .collect();
        let dx = Tensor::from_vec(xv.shape().to_vec(), data)?;
        self.accumulate(grads, x, dx, op, idx)
    }

    fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Tensor>],
        target: NodeId,
        contribution: Tensor,
        op: &'static str,
        node: usize,
    ) -> Result<()> {
        if !contribution.is_finite() {
            return Err(Error::NonFinite { op, node });
        }
        match &mut grads[target.0] {
            Some(existing) => {
                for (e, c) in existing.data_mut().iter_mut().zip(contribution.data()) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
        Ok(())
    }
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn scale_tensor(t: &Tensor, c: f64) -> Tensor {
    let data = t.data().iter().map(|v| v * c).collect();
    Tensor::from_vec(t.shape().to_vec(), data).expect("scaling preserves shape")
}
