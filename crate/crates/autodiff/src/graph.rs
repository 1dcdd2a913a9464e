//! Tape of tensor operations with reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value. Nodes only ever
//! reference earlier nodes, so a single reverse sweep over the tape visits
//! each node after all of its consumers.

use crate::conv::{self, ConvSpec};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        spec: ConvSpec,
    },
    ConvTranspose {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        spec: ConvSpec,
    },
    InstanceNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    LeakyRelu {
        x: NodeId,
        slope: f64,
    },
    Sigmoid(NodeId),
    Softplus(NodeId),
    Abs(NodeId),
    Square(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Clamp {
        x: NodeId,
        lo: f64,
        hi: f64,
    },
    Concat {
        inputs: Vec<NodeId>,
        dim: usize,
    },
    Slice {
        x: NodeId,
        dim: usize,
        start: usize,
    },
    Reshape(NodeId),
    Mean(NodeId),
    Sum(NodeId),
    MeanSpatial(NodeId),
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Tile(NodeId),
    WeightedSum {
        inputs: Vec<NodeId>,
        weights: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `id`, if it was reached.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn to5d(t: &Tensor) -> Tensor {
    match t.ndim() {
        5 => t.clone(),
        4 => {
            let s = t.shape();
            t.clone().reshape(&[s[0], s[1], 1, s[2], s[3]])
        }
        _ => panic!(
            "convolution expects a 4-d or 5-d tensor, got {:?}",
            t.shape()
        ),
    }
}

fn from5d(t: Tensor, like_ndim: usize) -> Tensor {
    if like_ndim == 4 {
        let s = t.shape().to_vec();
        t.reshape(&[s[0], s[1], s[3], s[4]])
    } else {
        t
    }
}

fn outer_inner(shape: &[usize], dim: usize) -> (usize, usize) {
    (
        shape[..dim].iter().product(),
        shape[dim + 1..].iter().product(),
    )
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
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

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[NodeId]) -> NodeId {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf that gradients never flow into.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is recorded by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Convolution over `[N, C, H, W]` (with a 4-d weight) or
    /// `[N, C, D, H, W]` (with a 5-d weight).
    pub fn conv(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, spec: ConvSpec) -> NodeId {
        let xv = self.value(x);
        let nd = xv.ndim();
        let y = conv::conv_forward(
            &to5d(xv),
            &to5d(self.value(w)),
            b.map(|b| self.value(b)),
            spec,
        );
        let y = from5d(y, nd);
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(y, Op::Conv { x, w, b, spec }, &parents)
    }

    /// Transposed convolution; weight layout `[Cin, Cout, ...]`.
    pub fn conv_transpose(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        spec: ConvSpec,
    ) -> NodeId {
        let xv = self.value(x);
        let nd = xv.ndim();
        let y = conv::conv_transpose_forward(
            &to5d(xv),
            &to5d(self.value(w)),
            b.map(|b| self.value(b)),
            spec,
        );
        let y = from5d(y, nd);
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(y, Op::ConvTranspose { x, w, b, spec }, &parents)
    }

    /// Per-sample, per-channel normalization over all trailing axes with a
    /// learned channel scale and shift.
    pub fn instance_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let xv = self.value(x);
        let s = xv.shape().to_vec();
        let (n, c) = (s[0], s[1]);
        let p: usize = s[2..].iter().product();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; n * c];
        let mut out = vec![0.0; xv.len()];
        for i in 0..n * c {
            let ch = i % c;
            let src = &xv.data()[i * p..(i + 1) * p];
            let mean = src.iter().sum::<f64>() / p as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / p as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..p {
                let h = (src[j] - mean) * is;
                xhat[i * p + j] = h;
                out[i * p + j] = g[ch] * h + bt[ch];
            }
        }
        self.push(
            Tensor::new(&s, out),
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let y = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(y, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.leaky_relu(x, 0.0)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let y = self.value(x).map(sigmoid);
        self.push(y, Op::Sigmoid(x), &[x])
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let y = self.value(x).map(softplus);
        self.push(y, Op::Softplus(x), &[x])
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let y = self.value(x).map(f64::abs);
        self.push(y, Op::Abs(x), &[x])
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let y = self.value(x).map(|v| v * v);
        self.push(y, Op::Square(x), &[x])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y = self.value(a).zip_map(self.value(b), |p, q| p + q);
        self.push(y, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y = self.value(a).zip_map(self.value(b), |p, q| p - q);
        self.push(y, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y = self.value(a).zip_map(self.value(b), |p, q| p * q);
        self.push(y, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let y = self.value(x).map(|v| v * c);
        self.push(y, Op::Scale(x, c), &[x])
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let y = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(y, Op::Clamp { x, lo, hi }, &[x])
    }

    /// Concatenation along `dim`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[NodeId], dim: usize) -> NodeId {
        assert!(!inputs.is_empty(), "concat of nothing");
        let first = self.value(inputs[0]).shape().to_vec();
        let mut total = 0;
        for &id in inputs {
            let s = self.value(id).shape();
            assert_eq!(s.len(), first.len(), "concat rank mismatch");
            for (a, (&p, &q)) in s.iter().zip(&first).enumerate() {
                assert!(
                    a == dim || p == q,
                    "concat shape mismatch {:?} vs {:?}",
                    s,
                    first
                );
            }
            total += s[dim];
        }
        let mut shape = first.clone();
        shape[dim] = total;
        let (outer, inner) = outer_inner(&first, dim);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &id in inputs {
                let v = self.value(id);
                let span = v.shape()[dim] * inner;
                out.extend_from_slice(&v.data()[o * span..(o + 1) * span]);
            }
        }
        self.push(
            Tensor::new(&shape, out),
            Op::Concat {
                inputs: inputs.to_vec(),
                dim,
            },
            inputs,
        )
    }

    pub fn slice(&mut self, x: NodeId, dim: usize, start: usize, len: usize) -> NodeId {
        let v = self.value(x);
        let s = v.shape().to_vec();
        assert!(
            start + len <= s[dim],
            "slice {}..{} out of range for {:?}",
            start,
            start + len,
            s
        );
        let (outer, inner) = outer_inner(&s, dim);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[dim] + start) * inner;
            out.extend_from_slice(&v.data()[base..base + len * inner]);
        }
        let mut shape = s;
        shape[dim] = len;
        self.push(Tensor::new(&shape, out), Op::Slice { x, dim, start }, &[x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let y = self.value(x).clone().reshape(shape);
        self.push(y, Op::Reshape(x), &[x])
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let y = Tensor::scalar(v.sum() / v.len() as f64);
        self.push(y, Op::Mean(x), &[x])
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum(x), &[x])
    }

    /// `[N, C, ...] -> [N, C]` by averaging the trailing axes.
    pub fn mean_spatial(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let s = v.shape();
        let (n, c) = (s[0], s[1]);
        let p: usize = s[2..].iter().product();
        let out: Vec<f64> = v
            .data()
            .chunks(p)
            .map(|ch| ch.iter().sum::<f64>() / p as f64)
            .collect();
        self.push(Tensor::new(&[n, c], out), Op::MeanSpatial(x), &[x])
    }

    /// `[N, Din] x [Dout, Din]^T + b`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, din) = (xv.shape()[0], xv.shape()[1]);
        let dout = wv.shape()[0];
        assert_eq!(wv.shape()[1], din, "linear input width mismatch");
        let mut out = vec![0.0; n * dout];
        crate::gemm::gemm(
            n,
            din,
            dout,
            xv.data(),
            false,
            wv.data(),
            true,
            0.0,
            &mut out,
        );
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in out.chunks_mut(dout) {
                for (o, bb) in row.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(
            Tensor::new(&[n, dout], out),
            Op::Linear { x, w, b },
            &parents,
        )
    }

    /// `[N, C] -> [N, C, spatial...]`, copying each value over the grid.
    pub fn tile(&mut self, x: NodeId, spatial: &[usize]) -> NodeId {
        let v = self.value(x);
        assert_eq!(v.ndim(), 2, "tile expects [N, C]");
        let p: usize = spatial.iter().product();
        let mut out = Vec::with_capacity(v.len() * p);
        for &e in v.data() {
            out.extend(std::iter::repeat_n(e, p));
        }
        let mut shape = v.shape().to_vec();
        shape.extend_from_slice(spatial);
        self.push(Tensor::new(&shape, out), Op::Tile(x), &[x])
    }

    /// `sum_i weights[i] * inputs[i]`, accumulated in input order.
    pub fn weighted_sum(&mut self, inputs: &[NodeId], weights: &[f64]) -> NodeId {
        assert!(!inputs.is_empty() && inputs.len() == weights.len());
        let mut acc = self.value(inputs[0]).map(|v| v * weights[0]);
        for (&id, &w) in inputs.iter().zip(weights).skip(1) {
            let v = self.value(id);
            assert_eq!(v.shape(), acc.shape(), "weighted_sum shape mismatch");
            for (a, b) in acc.data_mut().iter_mut().zip(v.data()) {
                *a += w * b;
            }
        }
        self.push(
            acc,
            Op::WeightedSum {
                inputs: inputs.to_vec(),
                weights: weights.to_vec(),
            },
            inputs,
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(node, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Gradients { grads }
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&self, node: &Node, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |id: NodeId, g: Tensor| match &mut grads[id.0] {
            Some(t) => t.add_assign(&g),
            slot @ None => *slot = Some(g),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, spec } => {
                let xv = self.value(*x);
                let nd = xv.ndim();
                let gy5 = to5d(gy);
                let w5 = to5d(self.value(*w));
                if self.wants(*x) {
                    let x5shape = to5d_shape(xv.shape());
                    let dx = conv::conv_backward_input(&gy5, &w5, &x5shape, *spec);
                    acc(*x, from5d(dx, nd).reshape(xv.shape()));
                }
                if self.wants(*w) {
                    let dw = conv::conv_backward_weight(&to5d(xv), &gy5, w5.shape(), *spec);
                    acc(*w, dw.reshape(self.value(*w).shape()));
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    acc(b, conv::bias_grad(gy));
                }
            }
            Op::ConvTranspose { x, w, b, spec } => {
                let xv = self.value(*x);
                let (dx, dw) = conv::conv_transpose_backward(
                    &to5d(xv),
                    &to5d(self.value(*w)),
                    &to5d(gy),
                    *spec,
                    self.wants(*x),
                    self.wants(*w),
                );
                if let Some(dx) = dx {
                    acc(*x, dx.reshape(xv.shape()));
                }
                if let Some(dw) = dw {
                    acc(*w, dw.reshape(self.value(*w).shape()));
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    acc(b, conv::bias_grad(gy));
                }
            }
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let s = gy.shape();
                let c = s[1];
                let p: usize = s[2..].iter().product();
                let g = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = vec![0.0; gy.len()];
                for (i, &is) in inv_std.iter().enumerate() {
                    let ch = i % c;
                    let gys = &gy.data()[i * p..(i + 1) * p];
                    let xh = &xhat[i * p..(i + 1) * p];
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..p {
                        dgamma[ch] += gys[j] * xh[j];
                        dbeta[ch] += gys[j];
                        let d = gys[j] * g[ch];
                        m1 += d;
                        m2 += d * xh[j];
                    }
                    m1 /= p as f64;
                    m2 /= p as f64;
                    for j in 0..p {
                        dx[i * p + j] = is * (gys[j] * g[ch] - m1 - xh[j] * m2);
                    }
                }
                if self.wants(*x) {
                    acc(*x, Tensor::new(s, dx));
                }
                if self.wants(*gamma) {
                    acc(*gamma, Tensor::new(&[c], dgamma));
                }
                if self.wants(*beta) {
                    acc(*beta, Tensor::new(&[c], dbeta));
                }
            }
            Op::LeakyRelu { x, slope } => {
                let d = self
                    .value(*x)
                    .zip_map(gy, |v, g| if v > 0.0 { g } else { slope * g });
                acc(*x, d);
            }
            Op::Sigmoid(x) => {
                let d = node.value.zip_map(gy, |y, g| g * y * (1.0 - y));
                acc(*x, d);
            }
            Op::Softplus(x) => {
                let d = self.value(*x).zip_map(gy, |v, g| g * sigmoid(v));
                acc(*x, d);
            }
            Op::Abs(x) => {
                let d = self.value(*x).zip_map(gy, |v, g| {
                    if v > 0.0 {
                        g
                    } else if v < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                });
                acc(*x, d);
            }
            Op::Square(x) => {
                let d = self.value(*x).zip_map(gy, |v, g| 2.0 * v * g);
                acc(*x, d);
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    acc(*a, gy.clone());
                }
                if self.wants(*b) {
                    acc(*b, gy.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    acc(*a, gy.clone());
                }
                if self.wants(*b) {
                    acc(*b, gy.map(|g| -g));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    acc(*a, self.value(*b).zip_map(gy, |q, g| q * g));
                }
                if self.wants(*b) {
                    acc(*b, self.value(*a).zip_map(gy, |p, g| p * g));
                }
            }
            Op::Scale(x, c) => acc(*x, gy.map(|g| g * c)),
            Op::Clamp { x, lo, hi } => {
                let d = self
                    .value(*x)
                    .zip_map(gy, |v, g| if v < *lo || v > *hi { 0.0 } else { g });
                acc(*x, d);
            }
            Op::Concat { inputs, dim } => {
                let (outer, inner) = outer_inner(gy.shape(), *dim);
                let total = gy.shape()[*dim];
                let mut offset = 0;
                for &id in inputs {
                    let s = self.value(id).shape();
                    let span = s[*dim] * inner;
                    if self.wants(id) {
                        let mut d = Vec::with_capacity(outer * span);
                        for o in 0..outer {
                            let base = o * total * inner + offset;
                            d.extend_from_slice(&gy.data()[base..base + span]);
                        }
                        acc(id, Tensor::new(s, d));
                    }
                    offset += span;
                }
            }
            Op::Slice { x, dim, start } => {
                let s = self.value(*x).shape();
                let (outer, inner) = outer_inner(s, *dim);
                let len = gy.shape()[*dim];
                let mut d = vec![0.0; self.value(*x).len()];
                for o in 0..outer {
                    let dst = (o * s[*dim] + start) * inner;
                    let srcb = o * len * inner;
                    d[dst..dst + len * inner].copy_from_slice(&gy.data()[srcb..srcb + len * inner]);
                }
                acc(*x, Tensor::new(s, d));
            }
            Op::Reshape(x) => acc(*x, gy.clone().reshape(self.value(*x).shape())),
            Op::Mean(x) => {
                let v = self.value(*x);
                acc(*x, Tensor::full(v.shape(), gy.item() / v.len() as f64));
            }
            Op::Sum(x) => acc(*x, Tensor::full(self.value(*x).shape(), gy.item())),
            Op::MeanSpatial(x) => {
                let v = self.value(*x);
                let p: usize = v.shape()[2..].iter().product();
                let mut d = Vec::with_capacity(v.len());
                for &g in gy.data() {
                    d.extend(std::iter::repeat_n(g / p as f64, p));
                }
                acc(*x, Tensor::new(v.shape(), d));
            }
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n, din) = (xv.shape()[0], xv.shape()[1]);
                let dout = wv.shape()[0];
                if self.wants(*x) {
                    let mut d = vec![0.0; n * din];
                    crate::gemm::gemm(
                        n,
                        dout,
                        din,
                        gy.data(),
                        false,
                        wv.data(),
                        false,
                        0.0,
                        &mut d,
                    );
                    acc(*x, Tensor::new(&[n, din], d));
                }
                if self.wants(*w) {
                    let mut d = vec![0.0; dout * din];
                    crate::gemm::gemm(dout, n, din, gy.data(), true, xv.data(), false, 0.0, &mut d);
                    acc(*w, Tensor::new(&[dout, din], d));
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    let mut d = vec![0.0; dout];
                    for row in gy.data().chunks(dout) {
                        for (a, g) in d.iter_mut().zip(row) {
                            *a += g;
                        }
                    }
                    acc(b, Tensor::new(&[dout], d));
                }
            }
            Op::Tile(x) => {
                let v = self.value(*x);
                let p = gy.len() / v.len();
                let d: Vec<f64> = gy.data().chunks(p).map(|c| c.iter().sum()).collect();
                acc(*x, Tensor::new(v.shape(), d));
            }
            Op::WeightedSum { inputs, weights } => {
                for (&id, &w) in inputs.iter().zip(weights) {
                    if self.wants(id) {
                        acc(id, gy.map(|g| g * w));
                    }
                }
            }
        }
    }
}

fn to5d_shape(s: &[usize]) -> Vec<usize> {
    match s.len() {
        5 => s.to_vec(),
        4 => vec![s[0], s[1], 1, s[2], s[3]],
        _ => panic!("convolution expects a 4-d or 5-d tensor, got {:?}", s),
    }
}
