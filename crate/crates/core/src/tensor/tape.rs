//! Define-by-run reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and enough
//! saved state to run its backward rule. Nodes are only ever appended, so
//! the node vector is already in topological order and `backward` is a
//! single reverse sweep.

use super::kernels::{self, ConvSpec, PoolKind};
use super::value::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation tags, used for diagnostics and fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Conv2d,
    Add,
    Sub,
    Mul,
    Relu,
    Sigmoid,
    Scale,
    Pool,
    Dense,
    Concat,
    Reshape,
    SoftmaxCrossEntropy,
    Sum,
    Mean,
    ChannelReduce,
    Softmax,
    Upsample,
}

impl std::str::FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "conv2d" => OpKind::Conv2d,
            "add" => OpKind::Add,
            "sub" => OpKind::Sub,
            "mul" => OpKind::Mul,
            "relu" => OpKind::Relu,
            "sigmoid" => OpKind::Sigmoid,
            "scale" => OpKind::Scale,
            "pool" => OpKind::Pool,
            "dense" => OpKind::Dense,
            "concat" => OpKind::Concat,
            "reshape" => OpKind::Reshape,
            "softmax_cross_entropy" => OpKind::SoftmaxCrossEntropy,
            "sum" => OpKind::Sum,
            "mean" => OpKind::Mean,
            "channel_reduce" => OpKind::ChannelReduce,
            "softmax" => OpKind::Softmax,
            "upsample" => OpKind::Upsample,
            other => return Err(format!("unknown op kind `{other}`")),
        })
    }
}

/// Reduction across the channel axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelReduction {
    Mean,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Scale(Var, f64),
    Pool {
        input: Var,
        kind: PoolKind,
        window: usize,
        stride: usize,
        argmax: Vec<usize>,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Concat(Vec<Var>),
    Reshape(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    ChannelReduce {
        input: Var,
        kind: ChannelReduction,
        argmax: Vec<usize>,
    },
    Softmax(Var),
    Upsample {
        input: Var,
        rows: Vec<usize>,
        cols: Vec<usize>,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Scale(..) => OpKind::Scale,
            Op::Pool { .. } => OpKind::Pool,
            Op::Dense { .. } => OpKind::Dense,
            Op::Concat(_) => OpKind::Concat,
            Op::Reshape(_) => OpKind::Reshape,
            Op::SoftmaxCrossEntropy { .. } => OpKind::SoftmaxCrossEntropy,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::ChannelReduce { .. } => OpKind::ChannelReduce,
            Op::Softmax(_) => OpKind::Softmax,
            Op::Upsample { .. } => OpKind::Upsample,
        }
    }
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
    grads: Vec<Option<Tensor>>,
    fault: Option<OpKind>,
}

/// Multiplier applied to the faulty op's backward output.
const FAULT_FACTOR: f64 = 1.5;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Test hook: scales every input gradient produced by ops of `kind`,
    /// breaking that backward rule on purpose.
    #[doc(hidden)]
    pub fn corrupt_backward(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Gradient of the last `backward` loss with respect to `var`, if any
    /// path connects them.
    pub fn grad(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient, or zeros of the value's shape when unreachable.
    pub fn grad_or_zeros(&self, var: Var) -> Tensor {
        self.grad(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shape(var)))
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite output from {:?}", op.kind());
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(value, op, requires_grad)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    // ---- convolution and linear maps ----

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out = kernels::conv2d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            spec,
        )?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            },
            &inputs,
        ))
    }

    /// Per-channel spatial convolution followed by a 1x1 channel mix.
    pub fn depthwise_separable(
        &mut self,
        input: Var,
        depthwise: (Var, Option<Var>),
        pointwise: (Var, Option<Var>),
        spec: ConvSpec,
    ) -> Result<Var> {
        let channels = self.value(input).dims4("depthwise_separable")?.1;
        if spec.groups != channels {
            return Err(shape_err(
                "depthwise_separable",
                "groups",
                format!("depthwise stage needs groups == channels ({channels}), got {}", spec.groups),
            ));
        }
        let pw_shape = self.shape(pointwise.0);
        if pw_shape.len() != 4 || pw_shape[2] != 1 || pw_shape[3] != 1 {
            return Err(shape_err(
                "depthwise_separable",
                "pointwise kernel",
                format!("pointwise weight must be Kx Cx1x1, got {pw_shape:?}"),
            ));
        }
        let mid = self.conv2d(input, depthwise.0, depthwise.1, spec)?;
        self.conv2d(mid, pointwise.0, pointwise.1, ConvSpec::square(1, 0))
    }

    /// `input[N,F] @ weight[F,G] + bias[G]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "dense";
        let (xs, ws, bs) = (self.shape(input), self.shape(weight), self.shape(bias));
        let (&[n, f], &[f2, g]) = (xs, ws) else {
            return Err(shape_err(OP, "rank", format!("input {xs:?}, weight {ws:?}")));
        };
        if f != f2 {
            return Err(shape_err(OP, "inner dimension", format!("input has {f}, weight has {f2}")));
        }
        if bs != [g] {
            return Err(shape_err(OP, "bias", format!("expected [{g}], got {bs:?}")));
        }
        let (x, w, b) = (self.value(input).data(), self.value(weight).data(), self.value(bias).data());
        let mut out = Vec::with_capacity(n * g);
        for row in x.chunks(f) {
            let mut acc = b.to_vec();
            for (xi, wrow) in row.iter().zip(w.chunks(g)) {
                for (a, wv) in acc.iter_mut().zip(wrow) {
                    *a += xi * wv;
                }
            }
            out.extend(acc);
        }
        let out = Tensor::from_parts(vec![n, g], out);
        Ok(self.push(out, Op::Dense { input, weight, bias }, &[input, weight, bias]))
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_apply("add", self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_apply("sub", self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_apply("mul", self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor), &[x])
    }

    // ---- reductions and reshapes ----

    pub fn pool(&mut self, input: Var, kind: PoolKind, window: usize, stride: usize) -> Result<Var> {
        let (out, argmax) = kernels::pool_forward(self.value(input), kind, window, stride)?;
        Ok(self.push(
            out,
            Op::Pool {
                input,
                kind,
                window,
                stride,
                argmax,
            },
            &[input],
        ))
    }

    /// `[N,C,H,W] -> [N,1,H,W]` by mean or max over channels.
    pub fn channel_reduce(&mut self, input: Var, kind: ChannelReduction) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4("channel_reduce")?;
        let plane = h * w;
        let data = x.data();
        let mut out = vec![0.0; n * plane];
        let mut argmax = Vec::new();
        match kind {
            ChannelReduction::Mean => {
                let inv = 1.0 / c as f64;
                for b in 0..n {
                    let dst = &mut out[b * plane..(b + 1) * plane];
                    for ch in 0..c {
                        let src = &data[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                    dst.iter_mut().for_each(|d| *d *= inv);
                }
            }
            ChannelReduction::Max => {
                argmax = vec![0; n * plane];
                for b in 0..n {
                    for p in 0..plane {
                        let mut best = b * c * plane + p;
                        for ch in 1..c {
                            let idx = (b * c + ch) * plane + p;
                            if data[idx] > data[best] {
                                best = idx;
                            }
                        }
                        out[b * plane + p] = data[best];
                        argmax[b * plane + p] = best;
                    }
                }
            }
        }
        let out = Tensor::from_parts(vec![n, 1, h, w], out);
        Ok(self.push(out, Op::ChannelReduce { input, kind, argmax }, &[input]))
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        const OP: &str = "concat_channels";
        let first = *inputs
            .first()
            .ok_or_else(|| shape_err(OP, "inputs", "nothing to concatenate"))?;
        let (n, _, h, w) = self.value(first).dims4(OP)?;
        let mut total = 0;
        for &v in inputs {
            let (vn, vc, vh, vw) = self.value(v).dims4(OP)?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(shape_err(
                    OP,
                    "batch/spatial",
                    format!("expected [{n}, _, {h}, {w}], got {:?}", self.shape(v)),
                ));
            }
            total += vc;
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total * plane);
        for b in 0..n {
            for &v in inputs {
                let t = self.value(v);
                let c = t.shape()[1];
                out.extend_from_slice(&t.data()[b * c * plane..(b + 1) * c * plane]);
            }
        }
        let out = Tensor::from_parts(vec![n, total, h, w], out);
        Ok(self.push(out, Op::Concat(inputs.to_vec()), inputs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / t.numel() as f64);
        self.push(out, Op::Mean(x), &[x])
    }

    /// Softmax along the last axis of a rank-2 tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let &[_, k] = t.shape() else {
            return Err(shape_err("softmax", "rank", format!("expected rank 2, got {:?}", t.shape())));
        };
        let mut out = Vec::with_capacity(t.numel());
        for row in t.data().chunks(k) {
            out.extend(softmax_row(row));
        }
        let out = Tensor::from_parts(t.shape().to_vec(), out);
        Ok(self.push(out, Op::Softmax(x), &[x]))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        const OP: &str = "softmax_cross_entropy";
        let t = self.value(logits);
        let &[n, k] = t.shape() else {
            return Err(shape_err(OP, "rank", format!("expected [N, K], got {:?}", t.shape())));
        };
        if labels.len() != n {
            return Err(shape_err(OP, "batch", format!("{n} logit rows, {} labels", labels.len())));
        }
        let mut probs = Vec::with_capacity(n * k);
        let mut loss = 0.0;
        for (row, &label) in t.data().chunks(k).zip(labels) {
            if label >= k {
                return Err(Error::LabelOutOfRange { label, classes: k });
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_z = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            loss += log_z - row[label];
            probs.extend(row.iter().map(|v| (v - log_z).exp()));
        }
        let out = Tensor::scalar(loss / n as f64);
        Ok(self.push(
            out,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Nearest-neighbour resampling of `[N,C,H,W]` to `[N,C,out_h,out_w]`
    /// with source index `floor(dst * in / out)` per axis.
    pub fn upsample_nearest(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let t = self.value(input);
        let (n, c, h, w) = t.dims4("upsample_nearest")?;
        if out_h == 0 || out_w == 0 {
            return Err(shape_err("upsample_nearest", "target", "target extent must be positive"));
        }
        let rows: Vec<usize> = (0..out_h).map(|y| y * h / out_h).collect();
        let cols: Vec<usize> = (0..out_w).map(|x| x * w / out_w).collect();
        let data = t.data();
        let mut out = Vec::with_capacity(n * c * out_h * out_w);
        for plane in 0..n * c {
            let base = plane * h * w;
            for &sy in &rows {
                out.extend(cols.iter().map(|&sx| data[base + sy * w + sx]));
            }
        }
        let out = Tensor::from_parts(vec![n, c, out_h, out_w], out);
        Ok(self.push(out, Op::Upsample { input, rows, cols }, &[input]))
    }

    // ---- backward ----

    /// Reverse sweep from a scalar `loss`. Gradients accumulate additively
    /// across fan-out and replace those of any earlier call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss).to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::full(&shape, 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(grad) = self.grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.requires_grad {
                let mut contributions = self.backward_node(node, &grad);
                if self.fault == Some(node.op.kind()) {
                    for (_, g) in &mut contributions {
                        g.data_mut().iter_mut().for_each(|v| *v *= FAULT_FACTOR);
                    }
                }
                for (var, g) in contributions {
                    if !self.nodes[var.0].requires_grad {
                        continue;
                    }
                    match &mut self.grads[var.0] {
                        Some(acc) => acc.add_assign(&g)?,
                        slot @ None => *slot = Some(g),
                    }
                }
            }
            self.grads[idx] = Some(grad);
        }
        Ok(())
    }

    fn backward_node(&self, node: &Node, grad: &Tensor) -> Vec<(Var, Tensor)> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            } => {
                let want = (self.needs(*input), self.needs(*weight), bias.is_some_and(|b| self.needs(b)));
                let g = kernels::conv2d_backward(val(*input), val(*weight), grad, *spec, want);
                let mut out = Vec::with_capacity(3);
                out.extend(g.input.map(|t| (*input, t)));
                out.extend(g.weight.map(|t| (*weight, t)));
                if let (Some(b), Some(t)) = (bias, g.bias) {
                    out.push((*b, t));
                }
                out
            }
            Op::Add(a, b) => vec![
                (*a, reduce_to(grad, val(*a).shape())),
                (*b, reduce_to(grad, val(*b).shape())),
            ],
            Op::Sub(a, b) => vec![
                (*a, reduce_to(grad, val(*a).shape())),
                (*b, reduce_to(&grad.map(|g| -g), val(*b).shape())),
            ],
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let mut out = Vec::with_capacity(2);
                if self.needs(*a) {
                    let ga = broadcast_apply("mul", grad, bv, |g, y| g * y).expect("forward shapes");
                    out.push((*a, reduce_to(&ga, av.shape())));
                }
                if self.needs(*b) {
                    let gb = broadcast_apply("mul", grad, av, |g, x| g * x).expect("forward shapes");
                    out.push((*b, reduce_to(&gb, bv.shape())));
                }
                out
            }
            Op::Relu(x) => {
                let data = val(*x)
                    .data()
                    .iter()
                    .zip(grad.data())
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                vec![(*x, Tensor::from_parts(grad.shape().to_vec(), data))]
            }
            Op::Sigmoid(x) => {
                let data = node
                    .value
                    .data()
                    .iter()
                    .zip(grad.data())
                    .map(|(&s, &g)| g * s * (1.0 - s))
                    .collect();
                vec![(*x, Tensor::from_parts(grad.shape().to_vec(), data))]
            }
            Op::Scale(x, f) => vec![(*x, grad.map(|g| g * f))],
            Op::Pool {
                input,
                kind,
                window,
                stride,
                argmax,
            } => vec![(
                *input,
                kernels::pool_backward(val(*input).shape(), grad, *kind, *window, *stride, argmax),
            )],
            Op::Dense { input, weight, bias } => {
                let (x, w) = (val(*input), val(*weight));
                let (n, f, g) = (x.shape()[0], x.shape()[1], w.shape()[1]);
                let (xd, wd, gd) = (x.data(), w.data(), grad.data());
                let mut out = Vec::with_capacity(3);
                if self.needs(*input) {
                    let mut gx = vec![0.0; n * f];
                    for (grow, gxrow) in gd.chunks(g).zip(gx.chunks_mut(f)) {
                        for (gxv, wrow) in gxrow.iter_mut().zip(wd.chunks(g)) {
                            *gxv = grow.iter().zip(wrow).map(|(a, b)| a * b).sum();
                        }
                    }
                    out.push((*input, Tensor::from_parts(vec![n, f], gx)));
                }
                if self.needs(*weight) {
                    let mut gw = vec![0.0; f * g];
                    for (xrow, grow) in xd.chunks(f).zip(gd.chunks(g)) {
                        for (xv, gwrow) in xrow.iter().zip(gw.chunks_mut(g)) {
                            for (d, gv) in gwrow.iter_mut().zip(grow) {
                                *d += xv * gv;
                            }
                        }
                    }
                    out.push((*weight, Tensor::from_parts(vec![f, g], gw)));
                }
                if self.needs(*bias) {
                    let mut gb = vec![0.0; g];
                    for grow in gd.chunks(g) {
                        for (d, gv) in gb.iter_mut().zip(grow) {
                            *d += gv;
                        }
                    }
                    out.push((*bias, Tensor::from_parts(vec![g], gb)));
                }
                out
            }
            Op::Concat(inputs) => {
                let (n, _, h, w) = node.value.dims4("concat").expect("rank 4");
                let plane = h * w;
                let mut parts: Vec<Vec<f64>> = inputs
                    .iter()
                    .map(|v| Vec::with_capacity(val(*v).numel()))
                    .collect();
                let mut offset = 0;
                for _ in 0..n {
                    for (v, part) in inputs.iter().zip(&mut parts) {
                        let len = val(*v).shape()[1] * plane;
                        part.extend_from_slice(&grad.data()[offset..offset + len]);
                        offset += len;
                    }
                }
                inputs
                    .iter()
                    .zip(parts)
                    .map(|(v, d)| (*v, Tensor::from_parts(val(*v).shape().to_vec(), d)))
                    .collect()
            }
            Op::Reshape(x) => vec![(*x, Tensor::from_parts(val(*x).shape().to_vec(), grad.data().to_vec()))],
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let k = val(*logits).shape()[1];
                let scale = grad.data()[0] / labels.len() as f64;
                let mut g = probs.clone();
                for (row, &label) in g.chunks_mut(k).zip(labels) {
                    row[label] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                vec![(*logits, Tensor::from_parts(val(*logits).shape().to_vec(), g))]
            }
            Op::Sum(x) => vec![(*x, Tensor::full(val(*x).shape(), grad.data()[0]))],
            Op::Mean(x) => {
                let t = val(*x);
                vec![(*x, Tensor::full(t.shape(), grad.data()[0] / t.numel() as f64))]
            }
            Op::ChannelReduce { input, kind, argmax } => {
                let t = val(*input);
                let (n, c, h, w) = t.dims4("channel_reduce").expect("rank 4");
                let plane = h * w;
                let mut g = vec![0.0; t.numel()];
                match kind {
                    ChannelReduction::Mean => {
                        let inv = 1.0 / c as f64;
                        for b in 0..n {
                            let src = &grad.data()[b * plane..(b + 1) * plane];
                            for ch in 0..c {
                                let dst = &mut g[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d = s * inv;
                                }
                            }
                        }
                    }
                    ChannelReduction::Max => {
                        for (gv, &idx) in grad.data().iter().zip(argmax) {
                            g[idx] += gv;
                        }
                    }
                }
                vec![(*input, Tensor::from_parts(t.shape().to_vec(), g))]
            }
            Op::Softmax(x) => {
                let k = node.value.shape()[1];
                let mut g = Vec::with_capacity(node.value.numel());
                for (srow, grow) in node.value.data().chunks(k).zip(grad.data().chunks(k)) {
                    let dot: f64 = srow.iter().zip(grow).map(|(s, g)| s * g).sum();
                    g.extend(srow.iter().zip(grow).map(|(s, gv)| s * (gv - dot)));
                }
                vec![(*x, Tensor::from_parts(node.value.shape().to_vec(), g))]
            }
            Op::Upsample { input, rows, cols } => {
                let t = val(*input);
                let (_, _, h, w) = t.dims4("upsample").expect("rank 4");
                let mut g = vec![0.0; t.numel()];
                let out_plane = rows.len() * cols.len();
                for (plane, gplane) in grad.data().chunks(out_plane).enumerate() {
                    let base = plane * h * w;
                    for (grow, &sy) in gplane.chunks(cols.len()).zip(rows) {
                        for (gv, &sx) in grow.iter().zip(cols) {
                            g[base + sy * w + sx] += gv;
                        }
                    }
                }
                vec![(*input, Tensor::from_parts(t.shape().to_vec(), g))]
            }
        }
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

fn softmax_row(row: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
    row.iter().map(move |v| (v - max).exp() / z)
}

/// Right-aligned broadcast of two shapes along singleton dimensions.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let pad = |s: &[usize], i: usize| {
        let off = rank - s.len();
        if i < off {
            1
        } else {
            s[i - off]
        }
    };
    (0..rank)
        .map(|i| match (pad(a, i), pad(b, i)) {
            (x, y) if x == y => Some(x),
            (1, y) => Some(y),
            (x, 1) => Some(x),
            _ => None,
        })
        .collect()
}

/// Strides of `shape` viewed inside `out` (rank-aligned), with zero stride
/// on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let off = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        if shape[i] != 1 {
            strides[i + off] = acc;
        }
        acc *= shape[i];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` for every output element.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = out.len();
    let total: usize = out.iter().product();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..total {
        f(o, ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

fn broadcast_apply(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    let out = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| {
        shape_err(op, "broadcast", format!("{:?} and {:?} are not broadcastable", a.shape(), b.shape()))
    })?;
    let (sa, sb) = (broadcast_strides(a.shape(), &out), broadcast_strides(b.shape(), &out));
    let mut data = vec![0.0; out.iter().product()];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(&out, &sa, &sb, |o, ia, ib| data[o] = f(ad[ia], bd[ib]));
    Ok(Tensor::from_parts(out, data))
}

/// Sums `grad` over the axes along which `shape` was broadcast.
fn reduce_to(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let out = grad.shape();
    let s = broadcast_strides(shape, out);
    let zero = vec![0; out.len()];
    let mut data = vec![0.0; shape.iter().product()];
    let gd = grad.data();
    for_each_broadcast(out, &s, &zero, |o, i, _| data[i] += gd[o]);
    Tensor::from_parts(shape.to_vec(), data)
}
