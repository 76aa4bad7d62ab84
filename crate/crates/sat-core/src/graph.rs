//! Define-by-run reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] is an append-only tape: every operation records its inputs and
//! saved forward value, and topological order is insertion order. The graph is
//! rebuilt per forward pass, which keeps per-phase activation overrides
//! trivially correct. All loops are sequential with fixed accumulation order,
//! so identical inputs give bit-identical values and gradients.

use crate::activations::{ActivationError, ActivationKind, ActivationPair};
use crate::tensor::Tensor;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GraphError {
    /// Elementwise or bias op over incompatible shapes.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// Operand is not the matrix/4-D tensor the op requires.
    BadRank {
        op: &'static str,
        shape: Vec<usize>,
        expected_rank: usize,
    },
    /// Reduction axis outside the operand's rank.
    InvalidAxis { axis: usize, rank: usize },
    /// Convolution geometry that yields no output (or zero stride).
    BadConvGeometry {
        input: Vec<usize>,
        kernel: Vec<usize>,
        stride: usize,
        pad: usize,
    },
    /// `backward` seeded from a non-scalar node.
    NonScalarLoss { shape: Vec<usize> },
    /// Cross-entropy label outside `[0, class_count)`.
    LabelOutOfRange { label: usize, classes: usize },
    /// Label count differs from the batch size.
    LabelCountMismatch { labels: usize, batch: usize },
    /// Reshape that changes the element count.
    BadReshape { from: Vec<usize>, to: Vec<usize> },
    Activation(ActivationError),
}

impl From<ActivationError> for GraphError {
    fn from(e: ActivationError) -> Self {
        GraphError::Activation(e)
    }
}

impl fmt::Display for GraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphError::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch {left:?} vs {right:?}")
            }
            GraphError::BadRank {
                op,
                shape,
                expected_rank,
            } => write!(f, "{op}: expected rank {expected_rank}, got shape {shape:?}"),
            GraphError::InvalidAxis { axis, rank } => {
                write!(f, "axis {axis} out of range for rank {rank}")
            }
            GraphError::BadConvGeometry {
                input,
                kernel,
                stride,
                pad,
            } => write!(
                f,
                "conv2d: no valid output for input {input:?}, kernel {kernel:?}, stride {stride}, pad {pad}"
            ),
            GraphError::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            GraphError::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            GraphError::LabelCountMismatch { labels, batch } => {
                write!(f, "{labels} labels for a batch of {batch}")
            }
            GraphError::BadReshape { from, to } => {
                write!(f, "cannot reshape {from:?} into {to:?}")
            }
            GraphError::Activation(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddScalar(NodeId),
    Scale(NodeId, f64),
    Negate(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    /// `[m, n] + [n]`, bias added to every row.
    AddRowBias(NodeId, NodeId),
    /// `[n, f, h, w] + [f]`, bias added to every channel plane.
    AddChannelBias(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        pad: usize,
    },
    Reshape(NodeId),
    Sum(NodeId, Option<usize>),
    Mean(NodeId, Option<usize>),
    /// Forward applies `pair.forward`; backward multiplies by
    /// `pair.backward`'s derivative at the saved pre-activations. When an
    /// `alpha` node is supplied its current value replaces the alpha stored in
    /// a SmoothReLU kind, and the alpha leaf receives ∂f/∂α when the forward
    /// side is SmoothReLU.
    Activation {
        input: NodeId,
        pair: ActivationPair,
        alpha: Option<NodeId>,
    },
    /// Mean over the batch of −log softmax(logits)[label].
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only operation tape; see the module docs.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients for every node of a graph, in node order. Nodes that do not
/// reach the loss hold exact zeros.
pub struct GradientMap {
    grads: Vec<Tensor>,
}

impl GradientMap {
    pub fn get(&self, id: NodeId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn take(mut self, id: NodeId) -> Tensor {
        self.grads.swap_remove(id.0)
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
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

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    /// Record an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    fn check_same_shape(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
    ) -> Result<(), GraphError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(GraphError::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.check_same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y).unwrap();
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.check_same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y).unwrap();
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.check_same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y).unwrap();
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a), v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x * c);
        self.push(Op::Scale(a, c), v)
    }

    pub fn negate(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| -x);
        self.push(Op::Negate(a), v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 {
            return Err(GraphError::BadRank {
                op: "matmul",
                shape: sa.to_vec(),
                expected_rank: 2,
            });
        }
        if sb.len() != 2 {
            return Err(GraphError::BadRank {
                op: "matmul",
                shape: sb.to_vec(),
                expected_rank: 2,
            });
        }
        if sa[1] != sb[0] {
            return Err(GraphError::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let v = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], v).unwrap()))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let sa = self.value(a).shape();
        if sa.len() != 2 {
            return Err(GraphError::BadRank {
                op: "transpose",
                shape: sa.to_vec(),
                expected_rank: 2,
            });
        }
        let (r, c) = (sa[0], sa[1]);
        let v = transpose_raw(self.value(a).data(), r, c);
        Ok(self.push(Op::Transpose(a), Tensor::new(vec![c, r], v).unwrap()))
    }

    pub fn add_row_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, GraphError> {
        let (sa, sb) = (self.value(a).shape(), self.value(bias).shape());
        if sa.len() != 2 || sb.len() != 1 || sb[0] != sa[1] {
            return Err(GraphError::ShapeMismatch {
                op: "add_row_bias",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, n) = (sa[0], sa[1]);
        let x = self.value(a).data();
        let b = self.value(bias).data();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(x[i * n + j] + b[j]);
            }
        }
        Ok(self.push(Op::AddRowBias(a, bias), Tensor::new(vec![m, n], out).unwrap()))
    }

    pub fn add_channel_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, GraphError> {
        let (sa, sb) = (self.value(a).shape(), self.value(bias).shape());
        if sa.len() != 4 || sb.len() != 1 || sb[0] != sa[1] {
            return Err(GraphError::ShapeMismatch {
                op: "add_channel_bias",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (n, f, h, w) = (sa[0], sa[1], sa[2], sa[3]);
        let plane = h * w;
        let x = self.value(a).data();
        let b = self.value(bias).data();
        let mut out = Vec::with_capacity(x.len());
        for ni in 0..n {
            for fi in 0..f {
                let base = (ni * f + fi) * plane;
                for p in 0..plane {
                    out.push(x[base + p] + b[fi]);
                }
            }
        }
        Ok(self.push(
            Op::AddChannelBias(a, bias),
            Tensor::new(sa.to_vec(), out).unwrap(),
        ))
    }

    /// 2-D cross-correlation (no kernel flip), zero padding. Output spatial
    /// size is `floor((dim + 2*pad − k)/stride) + 1`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId, GraphError> {
        let (si, sk) = (self.value(input).shape(), self.value(kernel).shape());
        let geometry_err = || GraphError::BadConvGeometry {
            input: si.to_vec(),
            kernel: sk.to_vec(),
            stride,
            pad,
        };
        if si.len() != 4 {
            return Err(GraphError::BadRank {
                op: "conv2d",
                shape: si.to_vec(),
                expected_rank: 4,
            });
        }
        if sk.len() != 4 {
            return Err(GraphError::BadRank {
                op: "conv2d",
                shape: sk.to_vec(),
                expected_rank: 4,
            });
        }
        if stride == 0 || si[1] != sk[1] {
            return Err(geometry_err());
        }
        let (n, c, h, w) = (si[0], si[1], si[2], si[3]);
        let (f, _, kh, kw) = (sk[0], sk[1], sk[2], sk[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(geometry_err());
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let geom = ConvGeometry {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            oh,
            ow,
            stride,
            pad,
        };
        let x = self.value(input).data();
        let k = self.value(kernel).data();
        // Lowered to a per-sample matmul over im2col columns. The reduction
        // per output cell runs over (c, ky, kx) ascending, matching the naive
        // loop semantics bit for bit (out-of-range taps contribute an exact
        // zero either way).
        let mut out = vec![0.0; n * f * oh * ow];
        let mut col = vec![0.0; c * kh * kw * oh * ow];
        for ni in 0..n {
            geom.im2col(&x[ni * c * h * w..(ni + 1) * c * h * w], &mut col);
            let sample_out = matmul_raw(k, &col, f, c * kh * kw, oh * ow);
            out[ni * f * oh * ow..(ni + 1) * f * oh * ow].copy_from_slice(&sample_out);
        }
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                stride,
                pad,
            },
            Tensor::new(vec![n, f, oh, ow], out).unwrap(),
        ))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId, GraphError> {
        let v = self
            .value(a)
            .reshaped(shape.clone())
            .map_err(|_| GraphError::BadReshape {
                from: self.value(a).shape().to_vec(),
                to: shape,
            })?;
        Ok(self.push(Op::Reshape(a), v))
    }

    pub fn sum(&mut self, a: NodeId, axis: Option<usize>) -> Result<NodeId, GraphError> {
        let v = reduce_forward(self.value(a), axis, false)?;
        Ok(self.push(Op::Sum(a, axis), v))
    }

    pub fn mean(&mut self, a: NodeId, axis: Option<usize>) -> Result<NodeId, GraphError> {
        let v = reduce_forward(self.value(a), axis, true)?;
        Ok(self.push(Op::Mean(a, axis), v))
    }

    /// Apply an activation pair; see [`Op::Activation`] for the alpha rules.
    pub fn activation(
        &mut self,
        input: NodeId,
        pair: ActivationPair,
        alpha: Option<NodeId>,
    ) -> Result<NodeId, GraphError> {
        pair.validate()?;
        let forward_kind = self.effective_kind(pair.forward, alpha)?;
        let v = self.value(input).map(|x| forward_kind.value(x));
        Ok(self.push(
            Op::Activation { input, pair, alpha },
            v,
        ))
    }

    fn effective_kind(
        &self,
        kind: ActivationKind,
        alpha: Option<NodeId>,
    ) -> Result<ActivationKind, GraphError> {
        let k = match (kind, alpha) {
            (ActivationKind::SmoothRelu { .. }, Some(aid)) => ActivationKind::SmoothRelu {
                alpha: self.value(aid).item(),
            },
            _ => kind,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[usize],
    ) -> Result<NodeId, GraphError> {
        let shape = self.value(logits).shape();
        if shape.len() != 2 {
            return Err(GraphError::BadRank {
                op: "cross_entropy",
                shape: shape.to_vec(),
                expected_rank: 2,
            });
        }
        let (batch, classes) = (shape[0], shape[1]);
        if labels.len() != batch {
            return Err(GraphError::LabelCountMismatch {
                labels: labels.len(),
                batch,
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(GraphError::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
        let z = self.value(logits).data();
        let mut total = 0.0;
        for (row, &label) in labels.iter().enumerate() {
            let r = &z[row * classes..(row + 1) * classes];
            let lse = log_sum_exp(r);
            total -= r[label] - lse;
        }
        let loss = total / batch as f64;
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            Tensor::scalar(loss),
        ))
    }

    /// Reverse sweep from a scalar loss. Every node receives a gradient of its
    /// own shape; nodes with no path to the loss keep exact zeros.
    pub fn backward(&self, loss: NodeId) -> Result<GradientMap, GraphError> {
        if self.value(loss).numel() != 1 {
            return Err(GraphError::NonScalarLoss {
                shape: self.value(loss).shape().to_vec(),
            });
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.shape().to_vec()))
            .collect();
        grads[loss.0].data_mut()[0] = 1.0;

        for i in (0..=loss.0).rev() {
            if grads[i].data().iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = grads[i].clone();
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.data(), 1.0);
                    accumulate(&mut grads[b.0], g.data(), 1.0);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.0], g.data(), 1.0);
                    accumulate(&mut grads[b.0], g.data(), -1.0);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).clone(), self.value(*b).clone());
                    accumulate_prod(&mut grads[a.0], g.data(), vb.data());
                    accumulate_prod(&mut grads[b.0], g.data(), va.data());
                }
                Op::AddScalar(a) => accumulate(&mut grads[a.0], g.data(), 1.0),
                Op::Scale(a, c) => accumulate(&mut grads[a.0], g.data(), *c),
                Op::Negate(a) => accumulate(&mut grads[a.0], g.data(), -1.0),
                Op::MatMul(a, b) => {
                    let sa = self.value(*a).shape();
                    let sb = self.value(*b).shape();
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    // dA = dC · Bᵀ ; dB = Aᵀ · dC
                    let bt = transpose_raw(self.value(*b).data(), k, n);
                    let da = matmul_raw(g.data(), &bt, m, n, k);
                    let at = transpose_raw(self.value(*a).data(), m, k);
                    let db = matmul_raw(&at, g.data(), k, m, n);
                    accumulate(&mut grads[a.0], &da, 1.0);
                    accumulate(&mut grads[b.0], &db, 1.0);
                }
                Op::Transpose(a) => {
                    let so = self.nodes[i].value.shape();
                    let gt = transpose_raw(g.data(), so[0], so[1]);
                    accumulate(&mut grads[a.0], &gt, 1.0);
                }
                Op::AddRowBias(a, bias) => {
                    accumulate(&mut grads[a.0], g.data(), 1.0);
                    let sa = self.value(*a).shape();
                    let (m, n) = (sa[0], sa[1]);
                    let gb = grads[bias.0].data_mut();
                    for r in 0..m {
                        for c in 0..n {
                            gb[c] += g.data()[r * n + c];
                        }
                    }
                }
                Op::AddChannelBias(a, bias) => {
                    accumulate(&mut grads[a.0], g.data(), 1.0);
                    let sa = self.value(*a).shape();
                    let (n, f, plane) = (sa[0], sa[1], sa[2] * sa[3]);
                    let gb = grads[bias.0].data_mut();
                    for ni in 0..n {
                        for fi in 0..f {
                            let base = (ni * f + fi) * plane;
                            for p in 0..plane {
                                gb[fi] += g.data()[base + p];
                            }
                        }
                    }
                }
                Op::Conv2d {
                    input,
                    kernel,
                    stride,
                    pad,
                } => {
                    let si = self.value(*input).shape();
                    let sk = self.value(*kernel).shape();
                    let so = self.nodes[i].value.shape();
                    let geom = ConvGeometry {
                        n: si[0],
                        c: si[1],
                        h: si[2],
                        w: si[3],
                        f: sk[0],
                        kh: sk[2],
                        kw: sk[3],
                        oh: so[2],
                        ow: so[3],
                        stride: *stride,
                        pad: *pad,
                    };
                    let x = self.value(*input).data();
                    let kv = self.value(*kernel).data();
                    let (ckk, plane, sample) =
                        (geom.c * geom.kh * geom.kw, geom.oh * geom.ow, geom.c * geom.h * geom.w);
                    let kt = transpose_raw(kv, geom.f, ckk);
                    let mut dx = vec![0.0; x.len()];
                    let mut dk = vec![0.0; kv.len()];
                    let mut col = vec![0.0; ckk * plane];
                    for ni in 0..geom.n {
                        let gout = &g.data()[ni * geom.f * plane..(ni + 1) * geom.f * plane];
                        // dK += dOut · colᵀ  (reduction over output positions)
                        geom.im2col(&x[ni * sample..(ni + 1) * sample], &mut col);
                        let colt = transpose_raw(&col, ckk, plane);
                        let dk_n = matmul_raw(gout, &colt, geom.f, plane, ckk);
                        for (d, s) in dk.iter_mut().zip(&dk_n) {
                            *d += s;
                        }
                        // dX = col2im(Kᵀ · dOut)
                        let dcol = matmul_raw(&kt, gout, ckk, geom.f, plane);
                        geom.col2im(&dcol, &mut dx[ni * sample..(ni + 1) * sample]);
                    }
                    accumulate(&mut grads[input.0], &dx, 1.0);
                    accumulate(&mut grads[kernel.0], &dk, 1.0);
                }
                Op::Reshape(a) => accumulate(&mut grads[a.0], g.data(), 1.0),
                Op::Sum(a, axis) => {
                    let si = self.value(*a).shape().to_vec();
                    let spread = reduce_backward(g.data(), &si, *axis, false);
                    accumulate(&mut grads[a.0], &spread, 1.0);
                }
                Op::Mean(a, axis) => {
                    let si = self.value(*a).shape().to_vec();
                    let spread = reduce_backward(g.data(), &si, *axis, true);
                    accumulate(&mut grads[a.0], &spread, 1.0);
                }
                Op::Activation { input, pair, alpha } => {
                    let x = self.value(*input);
                    let backward_kind = self.effective_kind(pair.backward, *alpha)?;
                    {
                        let gx = grads[input.0].data_mut();
                        for (j, (&go, &xv)) in g.data().iter().zip(x.data()).enumerate() {
                            gx[j] += go * backward_kind.derivative(xv);
                        }
                    }
                    if let (Some(aid), ActivationKind::SmoothRelu { .. }) = (alpha, pair.forward)
                    {
                        let a_val = self.value(*aid).item();
                        let mut da = 0.0;
                        for (&go, &xv) in g.data().iter().zip(x.data()) {
                            da += go * crate::activations::smoothrelu_alpha_grad(a_val, xv);
                        }
                        grads[aid.0].data_mut()[0] += da;
                    }
                }
                Op::CrossEntropy { logits, labels } => {
                    let z = self.value(*logits);
                    let (batch, classes) = (z.shape()[0], z.shape()[1]);
                    let seed = g.data()[0];
                    let gl = grads[logits.0].data_mut();
                    for (row, &label) in labels.iter().enumerate() {
                        let r = &z.data()[row * classes..(row + 1) * classes];
                        let lse = log_sum_exp(r);
                        for cidx in 0..classes {
                            let softmax = crate::fmath::exp(r[cidx] - lse);
                            let one_hot = if cidx == label { 1.0 } else { 0.0 };
                            gl[row * classes + cidx] +=
                                seed * (softmax - one_hot) / batch as f64;
                        }
                    }
                }
            }
        }
        Ok(GradientMap { grads })
    }
}

// ── Raw kernels ─────────────────────────────────────────────────────────────

/// `A[m,k] · B[k,n]`, ikj loop order: per output cell the reduction runs in
/// ascending `k`, so results are bit-reproducible.
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// Shapes and strides of one conv2d application.
struct ConvGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    /// Unfold one sample into `[c*kh*kw, oh*ow]` columns; out-of-range taps
    /// become zeros.
    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let plane = self.oh * self.ow;
        let mut row = 0;
        for ci in 0..self.c {
            let xc = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let dst = &mut col[row * plane..(row + 1) * plane];
                    let mut p = 0;
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            dst[p..p + self.ow].fill(0.0);
                            p += self.ow;
                            continue;
                        }
                        let xrow = &xc[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            dst[p] = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                xrow[ix as usize]
                            };
                            p += 1;
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Fold `[c*kh*kw, oh*ow]` column gradients back onto one sample,
    /// accumulating overlapping taps.
    fn col2im(&self, dcol: &[f64], dx: &mut [f64]) {
        let plane = self.oh * self.ow;
        let mut row = 0;
        for ci in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let src = &dcol[row * plane..(row + 1) * plane];
                    let mut p = 0;
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            p += self.ow;
                            continue;
                        }
                        let base = (ci * self.h + iy as usize) * self.w;
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dx[base + ix as usize] += src[p];
                            }
                            p += 1;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| crate::fmath::max(a, b));
    let s: f64 = row.iter().map(|&v| crate::fmath::exp(v - m)).sum();
    m + crate::fmath::ln(s)
}

fn reduce_forward(t: &Tensor, axis: Option<usize>, mean: bool) -> Result<Tensor, GraphError> {
    let shape = t.shape();
    match axis {
        None => {
            let mut s = 0.0;
            for &v in t.data() {
                s += v;
            }
            if mean {
                s /= t.numel() as f64;
            }
            Ok(Tensor::scalar(s))
        }
        Some(ax) => {
            if ax >= shape.len() {
                return Err(GraphError::InvalidAxis {
                    axis: ax,
                    rank: shape.len(),
                });
            }
            let outer: usize = shape[..ax].iter().product();
            let axis_len = shape[ax];
            let inner: usize = shape[ax + 1..].iter().product();
            let mut out_shape: Vec<usize> = shape.to_vec();
            out_shape.remove(ax);
            if out_shape.is_empty() {
                out_shape.push(1);
            }
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for a in 0..axis_len {
                    for ii in 0..inner {
                        out[o * inner + ii] += t.data()[(o * axis_len + a) * inner + ii];
                    }
                }
            }
            if mean {
                for v in out.iter_mut() {
                    *v /= axis_len as f64;
                }
            }
            Ok(Tensor::new(out_shape, out).unwrap())
        }
    }
}

fn reduce_backward(g: &[f64], input_shape: &[usize], axis: Option<usize>, mean: bool) -> Vec<f64> {
    let numel: usize = input_shape.iter().product();
    match axis {
        None => {
            let scale = if mean { 1.0 / numel as f64 } else { 1.0 };
            vec![g[0] * scale; numel]
        }
        Some(ax) => {
            let outer: usize = input_shape[..ax].iter().product();
            let axis_len = input_shape[ax];
            let inner: usize = input_shape[ax + 1..].iter().product();
            let scale = if mean { 1.0 / axis_len as f64 } else { 1.0 };
            let mut out = vec![0.0; numel];
            for o in 0..outer {
                for a in 0..axis_len {
                    for ii in 0..inner {
                        out[(o * axis_len + a) * inner + ii] = g[o * inner + ii] * scale;
                    }
                }
            }
            out
        }
    }
}

fn accumulate(target: &mut Tensor, src: &[f64], scale: f64) {
    for (t, &s) in target.data_mut().iter_mut().zip(src) {
        *t += scale * s;
    }
}

fn accumulate_prod(target: &mut Tensor, g: &[f64], other: &[f64]) {
    for ((t, &gv), &ov) in target.data_mut().iter_mut().zip(g).zip(other) {
        *t += gv * ov;
    }
}

// ── Finite-difference oracle ────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq)]
pub enum FdError {
    /// `f` produced a non-finite value while probing this coordinate.
    NonFinite { coordinate: usize, value: f64 },
}

impl fmt::Display for FdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FdError::NonFinite { coordinate, value } => {
                write!(f, "non-finite value {value} at coordinate {coordinate}")
            }
        }
    }
}

/// Central-difference gradient `(f(x+h·eᵢ) − f(x−h·eᵢ)) / (2h)` per
/// coordinate. Independent of the reverse-mode path by construction; this is
/// the oracle every analytic gradient in the crate is checked against.
pub fn finite_difference_grad(
    mut f: impl FnMut(&Tensor) -> f64,
    x: &Tensor,
    h: f64,
) -> Result<Tensor, FdError> {
    debug_assert!(h > 0.0);
    let mut grad = Tensor::zeros(x.shape().to_vec());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        for v in [up, down] {
            if !v.is_finite() {
                return Err(FdError::NonFinite {
                    coordinate: i,
                    value: v,
                });
            }
        }
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Relative L2 error `‖a − b‖ / max(‖b‖, floor)`; the standard gradient-check
/// metric (per-coordinate ratios blow up on negligible entries).
pub fn relative_l2_error(a: &Tensor, b: &Tensor) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        diff += (x - y) * (x - y);
        norm += y * y;
    }
    crate::fmath::sqrt(diff) / crate::fmath::max(crate::fmath::sqrt(norm), 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from, uniform_in};

    fn randn_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
        let mut rng = rng_from(seed);
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| uniform_in(&mut rng, -1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn elementwise_add() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(&[1.0, 2.0]));
        let b = g.leaf(Tensor::vector(&[3.0, 4.0]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn elementwise_shape_mismatch_reports_both_shapes() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(vec![2, 2]));
        let b = g.leaf(Tensor::zeros(vec![3]));
        match g.add(a, b) {
            Err(GraphError::ShapeMismatch { left, right, .. }) => {
                assert_eq!(left, vec![2, 2]);
                assert_eq!(right, vec![3]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn mul_gradients() {
        // z = x*y with x=2, y=3: dz/dx = 3, dz/dy = 2.
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0));
        let y = g.leaf(Tensor::scalar(3.0));
        let z = g.mul(x, y).unwrap();
        let grads = g.backward(z).unwrap();
        assert_eq!(grads.get(x).item(), 3.0);
        assert_eq!(grads.get(y).item(), 2.0);
    }

    #[test]
    fn scale_halves() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(&[1.0, -1.0]));
        let s = g.scale(a, 0.5);
        assert_eq!(g.value(s).data(), &[0.5, -0.5]);
    }

    #[test]
    fn matmul_identity_and_small_product() {
        let mut g = Graph::new();
        let eye = g.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = g.leaf(Tensor::new(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let c = g.matmul(eye, b).unwrap();
        assert_eq!(g.value(c).data(), g.value(b).data());

        let row = g.leaf(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let col = g.leaf(Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap());
        let prod = g.matmul(row, col).unwrap();
        assert_eq!(g.value(prod).data(), &[11.0]);
    }

    #[test]
    fn matmul_rejects_dim_mismatch() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(vec![2, 3]));
        let b = g.leaf(Tensor::zeros(vec![2, 3]));
        assert!(matches!(
            g.matmul(a, b),
            Err(GraphError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let a0 = randn_tensor(vec![3, 4], 1);
        let b0 = randn_tensor(vec![4, 2], 2);

        let mut g = Graph::new();
        let a = g.leaf(a0.clone());
        let b = g.leaf(b0.clone());
        let c = g.matmul(a, b).unwrap();
        let loss = g.sum(c, None).unwrap();
        let grads = g.backward(loss).unwrap();

        let fd_a = finite_difference_grad(
            |probe: &Tensor| {
                let mut g = Graph::new();
                let a = g.leaf(probe.clone());
                let b = g.leaf(b0.clone());
                let c = g.matmul(a, b).unwrap();
                let l = g.sum(c, None).unwrap();
                g.value(l).item()
            },
            &a0,
            1e-4,
        )
        .unwrap();
        let fd_b = finite_difference_grad(
            |probe: &Tensor| {
                let mut g = Graph::new();
                let a = g.leaf(a0.clone());
                let b = g.leaf(probe.clone());
                let c = g.matmul(a, b).unwrap();
                let l = g.sum(c, None).unwrap();
                g.value(l).item()
            },
            &b0,
            1e-4,
        )
        .unwrap();
        assert!(relative_l2_error(grads.get(a), &fd_a) < 1e-6);
        assert!(relative_l2_error(grads.get(b), &fd_b) < 1e-6);
    }

    #[test]
    fn conv_all_ones_sums_window() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(vec![1, 1, 3, 3], 1.0));
        let k = g.leaf(Tensor::full(vec![1, 1, 3, 3], 1.0));
        let y = g.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).item(), 9.0);
    }

    #[test]
    fn conv_delta_kernel_is_identity() {
        let x0 = randn_tensor(vec![1, 1, 4, 5], 3);
        let mut kdata = vec![0.0; 9];
        kdata[4] = 1.0; // center of a 3x3 kernel
        let mut g = Graph::new();
        let x = g.leaf(x0.clone());
        let k = g.leaf(Tensor::new(vec![1, 1, 3, 3], kdata).unwrap());
        let y = g.conv2d(x, k, 1, 1).unwrap();
        assert_eq!(g.value(y).shape(), x0.shape());
        for (a, b) in g.value(y).data().iter().zip(x0.data()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn conv_rejects_empty_output() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(vec![1, 1, 2, 2]));
        let k = g.leaf(Tensor::zeros(vec![1, 1, 3, 3]));
        assert!(matches!(
            g.conv2d(x, k, 1, 0),
            Err(GraphError::BadConvGeometry { .. })
        ));
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let x0 = randn_tensor(vec![1, 2, 5, 5], 4);
        let k0 = randn_tensor(vec![3, 2, 3, 3], 5);
        let run = |xv: &Tensor, kv: &Tensor| -> f64 {
            let mut g = Graph::new();
            let x = g.leaf(xv.clone());
            let k = g.leaf(kv.clone());
            let y = g.conv2d(x, k, 2, 1).unwrap();
            let l = g.sum(y, None).unwrap();
            g.value(l).item()
        };
        let mut g = Graph::new();
        let x = g.leaf(x0.clone());
        let k = g.leaf(k0.clone());
        let y = g.conv2d(x, k, 2, 1).unwrap();
        let loss = g.sum(y, None).unwrap();
        let grads = g.backward(loss).unwrap();

        let fd_x = finite_difference_grad(|p: &Tensor| run(p, &k0), &x0, 1e-4).unwrap();
        let fd_k = finite_difference_grad(|p: &Tensor| run(&x0, p), &k0, 1e-4).unwrap();
        assert!(relative_l2_error(grads.get(x), &fd_x) < 1e-5);
        assert!(relative_l2_error(grads.get(k), &fd_k) < 1e-5);
    }

    #[test]
    fn reductions() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(&[1.0, 2.0, 3.0]));
        let s = g.sum(a, None).unwrap();
        assert_eq!(g.value(s).item(), 6.0);
        let b = g.leaf(Tensor::vector(&[2.0, 4.0]));
        let m = g.mean(b, None).unwrap();
        assert_eq!(g.value(m).item(), 3.0);

        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn reduction_along_axis() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let s0 = g.sum(a, Some(0)).unwrap();
        assert_eq!(g.value(s0).shape(), &[3]);
        assert_eq!(g.value(s0).data(), &[5.0, 7.0, 9.0]);
        let m1 = g.mean(a, Some(1)).unwrap();
        assert_eq!(g.value(m1).data(), &[2.0, 5.0]);
        assert!(matches!(
            g.sum(a, Some(2)),
            Err(GraphError::InvalidAxis { axis: 2, rank: 2 })
        ));
    }

    #[test]
    fn backward_square() {
        // L = x^2 at x = 3 gives dL/dx = 6.
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let sq = g.mul(x, x).unwrap();
        let grads = g.backward(sq).unwrap();
        assert_eq!(grads.get(x).item(), 6.0);
    }

    #[test]
    fn backward_constant_loss_gives_zeros() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(&[1.0, 2.0]));
        let c = g.leaf(Tensor::scalar(5.0));
        let grads = g.backward(c).unwrap();
        assert_eq!(grads.get(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_seed() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(&[1.0, 2.0]));
        assert!(matches!(
            g.backward(x),
            Err(GraphError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn unreachable_parameters_get_exact_zeros() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0));
        let unused = g.leaf(Tensor::vector(&[1.0, 1.0, 1.0]));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(unused).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_is_linear() {
        // grad of a*f + b*g equals a*grad(f) + b*grad(g).
        let x0 = randn_tensor(vec![4], 6);
        let (a, b) = (1.7, -0.6);

        let f_only = |x0: &Tensor| {
            let mut g = Graph::new();
            let x = g.leaf(x0.clone());
            let y = g.mul(x, x).unwrap();
            let l = g.sum(y, None).unwrap();
            let grads = g.backward(l).unwrap();
            grads.get(x).clone()
        };
        let g_only = |x0: &Tensor| {
            let mut g = Graph::new();
            let x = g.leaf(x0.clone());
            let l = g.sum(x, None).unwrap();
            let grads = g.backward(l).unwrap();
            grads.get(x).clone()
        };

        let mut g = Graph::new();
        let x = g.leaf(x0.clone());
        let y = g.mul(x, x).unwrap();
        let f = g.sum(y, None).unwrap();
        let gg = g.sum(x, None).unwrap();
        let fa = g.scale(f, a);
        let gb = g.scale(gg, b);
        let combined = g.add(fa, gb).unwrap();
        let grads = g.backward(combined).unwrap();

        let gf = f_only(&x0);
        let ggrad = g_only(&x0);
        for i in 0..x0.numel() {
            let expect = a * gf.data()[i] + b * ggrad.data()[i];
            assert!((grads.get(x).data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let build = || {
            let mut g = Graph::new();
            let x = g.leaf(randn_tensor(vec![3, 3], 7));
            let w = g.leaf(randn_tensor(vec![3, 3], 8));
            let y = g.matmul(x, w).unwrap();
            let act = g
                .activation(
                    y,
                    ActivationPair::symmetric(ActivationKind::Silu),
                    None,
                )
                .unwrap();
            let l = g.sum(act, None).unwrap();
            let grads = g.backward(l).unwrap();
            (g.value(l).item(), grads.get(x).clone(), grads.get(w).clone())
        };
        let (l1, gx1, gw1) = build();
        let (l2, gx2, gw2) = build();
        assert_eq!(l1.to_bits(), l2.to_bits());
        for (a, b) in gx1.data().iter().zip(gx2.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in gw1.data().iter().zip(gw2.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn fd_oracle_basics() {
        // f = x^2 at 3 with h = 1e-4.
        let fd = finite_difference_grad(|t: &Tensor| t.item() * t.item(), &Tensor::scalar(3.0), 1e-4)
            .unwrap();
        assert!((fd.item() - 6.0).abs() < 1e-7);

        let fd = finite_difference_grad(|_t: &Tensor| 4.2, &Tensor::vector(&[1.0, 2.0]), 1e-4)
            .unwrap();
        assert_eq!(fd.data(), &[0.0, 0.0]);

        // Softplus sum at x = [0]: sigmoid(0) = 0.5.
        let fd = finite_difference_grad(
            |t: &Tensor| t.data().iter().map(|&v| crate::fmath::softplus(v)).sum(),
            &Tensor::vector(&[0.0]),
            1e-4,
        )
        .unwrap();
        assert!((fd.item() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn fd_oracle_reports_non_finite_coordinate() {
        let err = finite_difference_grad(
            |t: &Tensor| {
                if t.data()[1] > 1.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            },
            &Tensor::vector(&[0.0, 1.0, 0.0]),
            0.5,
        )
        .unwrap_err();
        assert_eq!(
            err,
            FdError::NonFinite {
                coordinate: 1,
                value: f64::INFINITY
            }
        );
    }

    #[test]
    fn composite_gradients_match_fd_at_random_points() {
        // Random composites drawn from the op set, checked at 100 points.
        let kinds = [
            ActivationKind::Softplus,
            ActivationKind::Silu,
            ActivationKind::Gelu,
            ActivationKind::ParametricSoftplus { alpha: 10.0 },
            ActivationKind::Celu { alpha: 1.5 },
        ];
        for trial in 0..100 {
            let kind = kinds[trial % kinds.len()];
            let x0 = randn_tensor(vec![2, 3], 100 + trial as u64);
            let w0 = randn_tensor(vec![3, 2], 200 + trial as u64);
            let run = |xv: &Tensor| -> f64 {
                let mut g = Graph::new();
                let x = g.leaf(xv.clone());
                let w = g.leaf(w0.clone());
                let y = g.matmul(x, w).unwrap();
                let neg = g.negate(y);
                let act = g
                    .activation(neg, ActivationPair::symmetric(kind), None)
                    .unwrap();
                let scaled = g.scale(act, 1.5);
                let shifted = g.add_scalar(scaled, 0.25);
                let prod = g.mul(shifted, shifted).unwrap();
                let l = g.mean(prod, None).unwrap();
                g.value(l).item()
            };
            let mut g = Graph::new();
            let x = g.leaf(x0.clone());
            let w = g.leaf(w0.clone());
            let y = g.matmul(x, w).unwrap();
            let neg = g.negate(y);
            let act = g
                .activation(neg, ActivationPair::symmetric(kind), None)
                .unwrap();
            let scaled = g.scale(act, 1.5);
            let shifted = g.add_scalar(scaled, 0.25);
            let prod = g.mul(shifted, shifted).unwrap();
            let l = g.mean(prod, None).unwrap();
            let grads = g.backward(l).unwrap();
            let fd = finite_difference_grad(run, &x0, 1e-5).unwrap();
            let err = relative_l2_error(grads.get(x), &fd);
            assert!(err < 1e-5, "trial {trial} ({kind}): rel err {err:.3e}");
        }
    }

    #[test]
    fn cross_entropy_label_validation() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::zeros(vec![2, 3]));
        assert!(matches!(
            g.cross_entropy(z, &[0, 3]),
            Err(GraphError::LabelOutOfRange { label: 3, classes: 3 })
        ));
        assert!(matches!(
            g.cross_entropy(z, &[0]),
            Err(GraphError::LabelCountMismatch { .. })
        ));
    }
}
