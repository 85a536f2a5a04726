//! Reverse-mode differentiation over a small, fixed set of tensor operations.
//!
//! A [`Graph`] records nodes in creation order, so the node list is already a
//! topological order and [`Graph::backward`] is a single reverse sweep. Leaves
//! are either constants or variables; only variables (and nodes depending on
//! them) carry gradients. Model parameters and the attacked input signal are
//! both ordinary variables.
//!
//! ```
//! use tsattack::autodiff::Graph;
//! use tsattack::tensor::Tensor;
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.variable(Tensor::vector(vec![3.0]));
//! let y = g.mul(x, x).unwrap();
//! let root = g.sum(y).unwrap();
//! g.backward(root).unwrap();
//! assert_eq!(g.grad(x).unwrap().values(), &[6.0]);
//! ```

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation tag of a compute node.
#[derive(Debug, Clone)]
pub enum OpKind<S> {
    Constant,
    Variable,
    Conv1d {
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        in_channels: usize,
        out_channels: usize,
        width: usize,
        len: usize,
    },
    Relu(NodeId),
    GlobalAvgPool {
        input: NodeId,
        channels: usize,
        len: usize,
    },
    Dense {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    LogSoftmax(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, S),
    Sum(NodeId),
    Abs(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    Slice {
        input: NodeId,
        start: usize,
    },
}

/// One recorded operation with its cached forward value.
#[derive(Debug, Clone)]
pub struct ComputeNode<S> {
    op: OpKind<S>,
    value: Tensor<S>,
    /// Allocated only for nodes that depend on a variable; same shape as `value`.
    grad: Option<Tensor<S>>,
}

impl<S: Scalar> ComputeNode<S> {
    pub fn op(&self) -> &OpKind<S> {
        &self.op
    }

    pub fn value(&self) -> &Tensor<S> {
        &self.value
    }

    pub fn grad(&self) -> Option<&Tensor<S>> {
        self.grad.as_ref()
    }

    fn requires_grad(&self) -> bool {
        self.grad.is_some()
    }
}

/// A single-threaded compute graph.
#[derive(Debug, Clone, Default)]
pub struct Graph<S> {
    nodes: Vec<ComputeNode<S>>,
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node created after the first `len`; earlier handles stay valid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn node(&self, id: NodeId) -> &ComputeNode<S> {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a node, `None` for nodes not depending on any variable.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.values_mut().iter_mut().for_each(|v| *v = S::zero());
            }
        }
    }

    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.push(OpKind::Constant, value, false)
    }

    /// A differentiable leaf.
    pub fn variable(&mut self, value: Tensor<S>) -> NodeId {
        self.push(OpKind::Variable, value, true)
    }

    fn push(&mut self, op: OpKind<S>, value: Tensor<S>, requires_grad: bool) -> NodeId {
        let grad = requires_grad.then(|| Tensor::zeros(value.shape()));
        self.nodes.push(ComputeNode { op, value, grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad())
    }

    fn check_non_empty(&self, id: NodeId, op: &str) -> Result<()> {
        if self.value(id).is_empty() {
            return Err(Error::dim(format!("{op} on empty input")));
        }
        Ok(())
    }

    /// Same-padded 1-D cross-correlation.
    ///
    /// `input` is `[T]` (one channel) or `[C, T]`; `kernels` is `[K, W]` (one
    /// input channel) or `[K, C, W]`; `bias` is `[K]`. The output is `[K, T]`
    /// with zero padding of `(W - 1) / 2` on both ends.
    pub fn conv1d(&mut self, input: NodeId, kernels: NodeId, bias: NodeId) -> Result<NodeId> {
        let in_shape = self.value(input).shape().to_vec();
        let k_shape = self.value(kernels).shape().to_vec();
        let b_shape = self.value(bias).shape().to_vec();
        let (in_channels, len) = match in_shape[..] {
            [t] => (1, t),
            [c, t] => (c, t),
            _ => {
                return Err(Error::dim(format!(
                    "conv1d input must be [T] or [C, T], got {in_shape:?}"
                )))
            }
        };
        let (out_channels, k_in, width) = match k_shape[..] {
            [k, w] => (k, 1, w),
            [k, c, w] => (k, c, w),
            _ => {
                return Err(Error::dim(format!(
                    "conv1d kernels must be [K, W] or [K, C, W], got {k_shape:?}"
                )))
            }
        };
        if k_in != in_channels {
            return Err(Error::dim(format!(
                "conv1d input {in_shape:?} has {in_channels} channels but kernels {k_shape:?} expect {k_in}"
            )));
        }
        if b_shape != [out_channels] {
            return Err(Error::dim(format!(
                "conv1d bias {b_shape:?} does not match kernels {k_shape:?}"
            )));
        }
        if width % 2 == 0 {
            return Err(Error::dim(format!(
                "conv1d kernel width {width} must be odd"
            )));
        }
        if len < width {
            return Err(Error::dim(format!(
                "conv1d input {in_shape:?} shorter than kernel width {width}"
            )));
        }

        let x = self.value(input).values();
        let w = self.value(kernels).values();
        let b = self.value(bias).values();
        let pad = (width / 2) as isize;
        let mut out = vec![S::zero(); out_channels * len];
        for k in 0..out_channels {
            let row = &mut out[k * len..(k + 1) * len];
            row.iter_mut().for_each(|v| *v = b[k]);
            for c in 0..in_channels {
                let xc = &x[c * len..(c + 1) * len];
                let wk = &w[(k * in_channels + c) * width..(k * in_channels + c + 1) * width];
                for (j, &wj) in wk.iter().enumerate() {
                    let off = j as isize - pad;
                    let (lo, hi) = valid_range(len, off);
                    let src = &xc[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    for (o, &xv) in row[lo..hi].iter_mut().zip(src) {
                        *o += wj * xv;
                    }
                }
            }
        }
        let value = Tensor::from_parts_unchecked(vec![out_channels, len], out);
        let rg = self.needs(&[input, kernels, bias]);
        Ok(self.push(
            OpKind::Conv1d {
                input,
                kernels,
                bias,
                in_channels,
                out_channels,
                width,
                len,
            },
            value,
            rg,
        ))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_non_empty(a, "relu")?;
        let value = self.value(a).map(|v| v.max(S::zero()));
        let rg = self.needs(&[a]);
        Ok(self.push(OpKind::Relu(a), value, rg))
    }

    /// Mean over the time axis: `[C, T] -> [C]`.
    pub fn global_avg_pool(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_non_empty(a, "global_avg_pool")?;
        let shape = self.value(a).shape().to_vec();
        let [channels, len] = shape[..] else {
            return Err(Error::dim(format!(
                "global_avg_pool expects [C, T], got {shape:?}"
            )));
        };
        let x = self.value(a).values();
        let n = S::lit(len as f64);
        let out = (0..channels)
            .map(|c| x[c * len..(c + 1) * len].iter().copied().sum::<S>() / n)
            .collect();
        let rg = self.needs(&[a]);
        Ok(self.push(
            OpKind::GlobalAvgPool {
                input: a,
                channels,
                len,
            },
            Tensor::vector(out),
            rg,
        ))
    }

    /// Affine map `weight · input + bias` with `weight: [M, N]`, the input
    /// flattened to `N` values and `bias: [M]`.
    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check_non_empty(input, "dense")?;
        let n = self.value(input).len();
        let w_shape = self.value(weight).shape().to_vec();
        let [m, wn] = w_shape[..] else {
            return Err(Error::dim(format!(
                "dense weight must be [M, N], got {w_shape:?}"
            )));
        };
        if wn != n {
            return Err(Error::dim(format!(
                "dense weight {w_shape:?} incompatible with input {:?}",
                self.value(input).shape()
            )));
        }
        if self.value(bias).shape() != [m] {
            return Err(Error::dim(format!(
                "dense bias {:?} incompatible with weight {w_shape:?}",
                self.value(bias).shape()
            )));
        }
        let x = self.value(input).values();
        let w = self.value(weight).values();
        let b = self.value(bias).values();
        let out = (0..m)
            .map(|i| {
                w[i * n..(i + 1) * n]
                    .iter()
                    .zip(x)
                    .fold(b[i], |acc, (&wv, &xv)| acc + wv * xv)
            })
            .collect();
        let rg = self.needs(&[input, weight, bias]);
        Ok(self.push(
            OpKind::Dense {
                input,
                weight,
                bias,
            },
            Tensor::vector(out),
            rg,
        ))
    }

    /// Log-softmax of a vector, stabilised by subtracting the maximum.
    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_non_empty(a, "log_softmax")?;
        let value = Tensor::vector(log_softmax(self.value(a).values()));
        let rg = self.needs(&[a]);
        Ok(self.push(OpKind::LogSoftmax(a), value, rg))
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &str,
        f: impl Fn(S, S) -> S,
        op: OpKind<S>,
    ) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(format!(
                "{name}: shapes {:?} and {:?} differ",
                va.shape(),
                vb.shape()
            )));
        }
        let out = va
            .values()
            .iter()
            .zip(vb.values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_parts_unchecked(va.shape().to_vec(), out);
        let rg = self.needs(&[a, b]);
        Ok(self.push(op, value, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "add", |x, y| x + y, OpKind::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "sub", |x, y| x - y, OpKind::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "mul", |x, y| x * y, OpKind::Mul(a, b))
    }

    /// Multiplies by a constant factor.
    pub fn scale(&mut self, a: NodeId, factor: S) -> Result<NodeId> {
        let value = self.value(a).map(|v| v * factor);
        let rg = self.needs(&[a]);
        Ok(self.push(OpKind::Scale(a, factor), value, rg))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_non_empty(a, "sum")?;
        let total = self.value(a).values().iter().copied().sum();
        let rg = self.needs(&[a]);
        Ok(self.push(OpKind::Sum(a), Tensor::scalar(total), rg))
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|v| v.abs());
        let rg = self.needs(&[a]);
        Ok(self.push(OpKind::Abs(a), value, rg))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|v| v * v);
        let rg = self.needs(&[a]);
        Ok(self.push(OpKind::Square(a), value, rg))
    }

    /// Elementwise square root; the derivative at exactly zero is taken as zero.
    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).values().iter().any(|&v| v < S::zero()) {
            return Err(Error::Contract("sqrt of a negative value".into()));
        }
        let value = self.value(a).map(|v| v.sqrt());
        let rg = self.needs(&[a]);
        Ok(self.push(OpKind::Sqrt(a), value, rg))
    }

    /// Contiguous window `[start, start + len)` of a vector.
    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(a);
        if v.shape().len() != 1 || start + len > v.len() || len == 0 {
            return Err(Error::dim(format!(
                "slice [{start}, {}) out of range for shape {:?}",
                start + len,
                v.shape()
            )));
        }
        let value = Tensor::vector(v.values()[start..start + len].to_vec());
        let rg = self.needs(&[a]);
        Ok(self.push(OpKind::Slice { input: a, start }, value, rg))
    }

    /// Propagates d(root)/d(node) to every node that depends on a variable,
    /// adding into the existing accumulators.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        if !self.nodes[root.0].requires_grad() {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<S>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![S::one()]);

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            if let Some(acc) = self.nodes[i].grad.as_mut() {
                for (a, v) in acc.values_mut().iter_mut().zip(&g) {
                    *a += *v;
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[S], adj: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[i];
        let rg = |id: NodeId| self.nodes[id.0].requires_grad();
        macro_rules! acc {
            ($id:expr) => {
                slot(adj, $id, self.nodes[$id.0].value.len())
            };
        }

        match node.op {
            OpKind::Constant | OpKind::Variable => {}
            OpKind::Conv1d {
                input,
                kernels,
                bias,
                in_channels,
                out_channels,
                width,
                len,
            } => {
                let x = self.value(input).values();
                let w = self.value(kernels).values();
                let pad = (width / 2) as isize;
                if rg(bias) {
                    let db = acc!(bias);
                    for k in 0..out_channels {
                        db[k] += g[k * len..(k + 1) * len].iter().copied().sum::<S>();
                    }
                }
                if rg(kernels) {
                    let dw = acc!(kernels);
                    for k in 0..out_channels {
                        let gk = &g[k * len..(k + 1) * len];
                        for c in 0..in_channels {
                            let xc = &x[c * len..(c + 1) * len];
                            for j in 0..width {
                                let off = j as isize - pad;
                                let (lo, hi) = valid_range(len, off);
                                let src =
                                    &xc[(lo as isize + off) as usize..(hi as isize + off) as usize];
                                let dot: S = gk[lo..hi].iter().zip(src).map(|(&a, &b)| a * b).sum();
                                dw[(k * in_channels + c) * width + j] += dot;
                            }
                        }
                    }
                }
                if rg(input) {
                    let dx = acc!(input);
                    for k in 0..out_channels {
                        let gk = &g[k * len..(k + 1) * len];
                        for c in 0..in_channels {
                            let wk = &w
                                [(k * in_channels + c) * width..(k * in_channels + c + 1) * width];
                            let dxc = &mut dx[c * len..(c + 1) * len];
                            for (j, &wj) in wk.iter().enumerate() {
                                let off = j as isize - pad;
                                let (lo, hi) = valid_range(len, off);
                                let dst = &mut dxc
                                    [(lo as isize + off) as usize..(hi as isize + off) as usize];
                                for (d, &gv) in dst.iter_mut().zip(&gk[lo..hi]) {
                                    *d += wj * gv;
                                }
                            }
                        }
                    }
                }
            }
            OpKind::Relu(a) => {
                if rg(a) {
                    let x = self.value(a).values();
                    let da = acc!(a);
                    for ((d, &xv), &gv) in da.iter_mut().zip(x).zip(g) {
                        if xv > S::zero() {
                            *d += gv;
                        }
                    }
                }
            }
            OpKind::GlobalAvgPool {
                input,
                channels,
                len,
            } => {
                if rg(input) {
                    let n = S::lit(len as f64);
                    let da = acc!(input);
                    for c in 0..channels {
                        let share = g[c] / n;
                        da[c * len..(c + 1) * len]
                            .iter_mut()
                            .for_each(|d| *d += share);
                    }
                }
            }
            OpKind::Dense {
                input,
                weight,
                bias,
            } => {
                let x = self.value(input).values();
                let w = self.value(weight).values();
                let n = x.len();
                if rg(bias) {
                    let db = acc!(bias);
                    for (d, &gv) in db.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if rg(weight) {
                    let dw = acc!(weight);
                    for (i, &gv) in g.iter().enumerate() {
                        for (d, &xv) in dw[i * n..(i + 1) * n].iter_mut().zip(x) {
                            *d += gv * xv;
                        }
                    }
                }
                if rg(input) {
                    let dx = acc!(input);
                    for (i, &gv) in g.iter().enumerate() {
                        for (d, &wv) in dx.iter_mut().zip(&w[i * n..(i + 1) * n]) {
                            *d += gv * wv;
                        }
                    }
                }
            }
            OpKind::LogSoftmax(a) => {
                if rg(a) {
                    let out = node.value.values();
                    let total: S = g.iter().copied().sum();
                    let da = acc!(a);
                    for ((d, &gv), &ls) in da.iter_mut().zip(g).zip(out) {
                        *d += gv - ls.exp() * total;
                    }
                }
            }
            OpKind::Add(a, b) => {
                for id in [a, b] {
                    if rg(id) {
                        let d = acc!(id);
                        d.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
                    }
                }
            }
            OpKind::Sub(a, b) => {
                if rg(a) {
                    let d = acc!(a);
                    d.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
                }
                if rg(b) {
                    let d = acc!(b);
                    d.iter_mut().zip(g).for_each(|(d, &gv)| *d -= gv);
                }
            }
            OpKind::Mul(a, b) => {
                if rg(a) {
                    let other = self.value(b).values();
                    let d = acc!(a);
                    for ((d, &gv), &o) in d.iter_mut().zip(g).zip(other) {
                        *d += gv * o;
                    }
                }
                if rg(b) {
                    let other = self.value(a).values();
                    let d = acc!(b);
                    for ((d, &gv), &o) in d.iter_mut().zip(g).zip(other) {
                        *d += gv * o;
                    }
                }
            }
            OpKind::Scale(a, factor) => {
                if rg(a) {
                    let d = acc!(a);
                    d.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv * factor);
                }
            }
            OpKind::Sum(a) => {
                if rg(a) {
                    let d = acc!(a);
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            OpKind::Abs(a) => {
                if rg(a) {
                    let x = self.value(a).values();
                    let d = acc!(a);
                    for ((d, &gv), &xv) in d.iter_mut().zip(g).zip(x) {
                        *d += gv * sign(xv);
                    }
                }
            }
            OpKind::Square(a) => {
                if rg(a) {
                    let x = self.value(a).values();
                    let two = S::lit(2.0);
                    let d = acc!(a);
                    for ((d, &gv), &xv) in d.iter_mut().zip(g).zip(x) {
                        *d += gv * two * xv;
                    }
                }
            }
            OpKind::Sqrt(a) => {
                if rg(a) {
                    let out = node.value.values();
                    let two = S::lit(2.0);
                    let d = acc!(a);
                    for ((d, &gv), &y) in d.iter_mut().zip(g).zip(out) {
                        if y > S::zero() {
                            *d += gv / (two * y);
                        }
                    }
                }
            }
            OpKind::Slice { input, start } => {
                if rg(input) {
                    let d = acc!(input);
                    d[start..start + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, &gv)| *d += gv);
                }
            }
        }
    }
}

fn slot<S: Scalar>(adj: &mut [Option<Vec<S>>], id: NodeId, len: usize) -> &mut Vec<S> {
    adj[id.0].get_or_insert_with(|| vec![S::zero(); len])
}

/// Output positions `t` for which `t + off` indexes a real input sample.
#[inline]
fn valid_range(len: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (len as isize - off).min(len as isize).max(lo as isize) as usize;
    (lo.min(hi), hi)
}

/// `sign(0) = 0`.
#[inline]
pub fn sign<S: Scalar>(v: S) -> S {
    if v > S::zero() {
        S::one()
    } else if v < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

/// Stable log-softmax of a slice.
pub fn log_softmax<S: Scalar>(v: &[S]) -> Vec<S> {
    let max = v.iter().copied().fold(S::neg_infinity(), S::max);
    let lse = v.iter().map(|&x| (x - max).exp()).sum::<S>().ln() + max;
    v.iter().map(|&x| x - lse).collect()
}
