//! Forward and backward loops for the heavier tensor operations.
//!
//! These work on plain slices. Shape validation happens in the tape layer
//! before any kernel runs.

use super::value::Tensor;
use crate::error::{shape_err, Result};

/// Geometry of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    /// Square kernel, stride 1, single group.
    pub fn square(kernel: usize, padding: usize) -> Self {
        Self {
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
            padding,
            groups: 1,
        }
    }

    /// Shape-preserving square kernel (odd sizes only).
    pub fn same(kernel: usize) -> Self {
        Self::square(kernel, kernel / 2)
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    /// `floor((in + 2p - k) / s) + 1`, or `None` when the window does not fit.
    pub fn output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
        let padded = input + 2 * padding;
        if kernel == 0 || stride == 0 || padded < kernel {
            None
        } else {
            Some((padded - kernel) / stride + 1)
        }
    }

    /// Validates operand shapes and returns the output shape `[N, K, H', W']`.
    pub fn output_shape(
        &self,
        input: &[usize],
        weight: &[usize],
        bias: Option<&[usize]>,
    ) -> Result<[usize; 4]> {
        const OP: &str = "conv2d";
        let [n, c, h, w] = *input else {
            return Err(shape_err(OP, "input rank", format!("expected rank 4, got {input:?}")));
        };
        let [k, cg, kh, kw] = *weight else {
            return Err(shape_err(OP, "weight rank", format!("expected rank 4, got {weight:?}")));
        };
        if self.stride == 0 {
            return Err(shape_err(OP, "stride", "stride must be positive"));
        }
        if self.groups == 0 || c % self.groups != 0 {
            return Err(shape_err(
                OP,
                "groups",
                format!("groups {} must divide input channels {c}", self.groups),
            ));
        }
        if k % self.groups != 0 {
            return Err(shape_err(
                OP,
                "groups",
                format!("groups {} must divide output channels {k}", self.groups),
            ));
        }
        if cg != c / self.groups {
            return Err(shape_err(
                OP,
                "weight channels",
                format!("weight expects {cg} channels per group, input gives {}", c / self.groups),
            ));
        }
        if kh != self.kernel_h || kw != self.kernel_w {
            return Err(shape_err(
                OP,
                "kernel",
                format!("weight kernel {kh}x{kw}, spec {}x{}", self.kernel_h, self.kernel_w),
            ));
        }
        if let Some(b) = bias {
            if b != [k] {
                return Err(shape_err(OP, "bias", format!("expected [{k}], got {b:?}")));
            }
        }
        let oh = Self::output_extent(h, kh, self.stride, self.padding)
            .ok_or_else(|| shape_err(OP, "height", format!("kernel {kh} exceeds padded height")))?;
        let ow = Self::output_extent(w, kw, self.stride, self.padding)
            .ok_or_else(|| shape_err(OP, "width", format!("kernel {kw} exceeds padded width")))?;
        Ok([n, k, oh, ow])
    }
}

/// Output columns `[lo, hi)` whose tap `j` lands inside a row of width `w`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, tap: usize, stride: usize, padding: usize) -> (usize, usize) {
    // input index = o * stride + tap - padding
    let lo = if padding > tap {
        (padding - tap).div_ceil(stride)
    } else {
        0
    };
    if in_len + padding <= tap {
        return (0, 0);
    }
    let hi = ((in_len - 1 + padding - tap) / stride + 1).min(out_len);
    if lo >= hi {
        (0, 0)
    } else {
        (lo, hi)
    }
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    oh: usize,
    ow: usize,
    cg: usize,
    kg: usize,
    spec: ConvSpec,
}

impl ConvGeom {
    fn new(input: &[usize], out: [usize; 4], spec: ConvSpec) -> Self {
        Self {
            n: input[0],
            c: input[1],
            h: input[2],
            w: input[3],
            k: out[1],
            oh: out[2],
            ow: out[3],
            cg: input[1] / spec.groups,
            kg: out[1] / spec.groups,
            spec,
        }
    }

    /// Visits every (input plane, output plane, weight index, tap) combination.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        let s = &self.spec;
        for n in 0..self.n {
            for k in 0..self.k {
                let g = k / self.kg;
                let out_plane = (n * self.k + k) * self.oh * self.ow;
                for cl in 0..self.cg {
                    let c = g * self.cg + cl;
                    let in_plane = (n * self.c + c) * self.h * self.w;
                    for i in 0..s.kernel_h {
                        for j in 0..s.kernel_w {
                            let widx = ((k * self.cg + cl) * s.kernel_h + i) * s.kernel_w + j;
                            f(in_plane, out_plane, widx, i, j);
                        }
                    }
                }
            }
        }
    }

    /// Output rows `[lo, hi)` reached by tap row `i`.
    #[inline]
    fn rows(&self, i: usize) -> (usize, usize) {
        valid_range(self.oh, self.h, i, self.spec.stride, self.spec.padding)
    }

    #[inline]
    fn cols(&self, j: usize) -> (usize, usize) {
        valid_range(self.ow, self.w, j, self.spec.stride, self.spec.padding)
    }
}

pub(crate) fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    spec: ConvSpec,
) -> Result<Tensor> {
    let out_shape = spec.output_shape(input.shape(), weight.shape(), bias.map(|b| b.shape()))?;
    let geom = ConvGeom::new(input.shape(), out_shape, spec);
    let mut out = vec![0.0; out_shape.iter().product()];
    if let Some(b) = bias {
        let plane = geom.oh * geom.ow;
        for (idx, chunk) in out.chunks_mut(plane).enumerate() {
            chunk.fill(b.data()[idx % geom.k]);
        }
    }
    let x = input.data();
    let wt = weight.data();
    let (s, p, in_w, out_w) = (spec.stride, spec.padding, geom.w, geom.ow);
    geom.for_each_tap(|in_plane, out_plane, widx, i, j| {
        let wv = wt[widx];
        let (r0, r1) = geom.rows(i);
        let (c0, c1) = geom.cols(j);
        if c0 == c1 {
            return;
        }
        for oy in r0..r1 {
            let iy = oy * s + i - p;
            let src = &x[in_plane + iy * in_w..in_plane + (iy + 1) * in_w];
            let dst = &mut out[out_plane + oy * out_w + c0..out_plane + oy * out_w + c1];
            let start = c0 * s + j - p;
            if s == 1 {
                for (o, v) in dst.iter_mut().zip(&src[start..start + (c1 - c0)]) {
                    *o += wv * v;
                }
            } else {
                for (q, o) in dst.iter_mut().enumerate() {
                    *o += wv * src[start + q * s];
                }
            }
        }
    });
    Ok(Tensor::from_parts(out_shape.to_vec(), out))
}

/// Gradients of a convolution with respect to (input, weight, bias).
pub(crate) struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

pub(crate) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    spec: ConvSpec,
    want: (bool, bool, bool),
) -> ConvGrads {
    let out_shape: [usize; 4] = grad_out.shape().try_into().expect("rank-4 conv output");
    let geom = ConvGeom::new(input.shape(), out_shape, spec);
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();
    let (s, p, in_w, out_w) = (spec.stride, spec.padding, geom.w, geom.ow);

    let mut gx = want.0.then(|| vec![0.0; x.len()]);
    let mut gw = want.1.then(|| vec![0.0; wt.len()]);
    if gx.is_some() || gw.is_some() {
        geom.for_each_tap(|in_plane, out_plane, widx, i, j| {
            let wv = wt[widx];
            let (r0, r1) = geom.rows(i);
            let (c0, c1) = geom.cols(j);
            if c0 == c1 {
                return;
            }
            let mut acc = 0.0;
            for oy in r0..r1 {
                let iy = oy * s + i - p;
                let row = in_plane + iy * in_w;
                let g = &go[out_plane + oy * out_w + c0..out_plane + oy * out_w + c1];
                let start = row + c0 * s + j - p;
                if let Some(gx) = gx.as_mut() {
                    if s == 1 {
                        for (d, gv) in gx[start..start + g.len()].iter_mut().zip(g) {
                            *d += wv * gv;
                        }
                    } else {
                        for (q, gv) in g.iter().enumerate() {
                            gx[start + q * s] += wv * gv;
                        }
                    }
                }
                if gw.is_some() {
                    if s == 1 {
                        acc += g.iter().zip(&x[start..start + g.len()]).map(|(a, b)| a * b).sum::<f64>();
                    } else {
                        acc += g.iter().enumerate().map(|(q, gv)| gv * x[start + q * s]).sum::<f64>();
                    }
                }
            }
            if let Some(gw) = gw.as_mut() {
                gw[widx] += acc;
            }
        });
    }
    let gb = want.2.then(|| {
        let plane = geom.oh * geom.ow;
        let mut b = vec![0.0; geom.k];
        for (idx, chunk) in go.chunks(plane).enumerate() {
            b[idx % geom.k] += chunk.iter().sum::<f64>();
        }
        Tensor::from_parts(vec![geom.k], b)
    });
    ConvGrads {
        input: gx.map(|d| Tensor::from_parts(input.shape().to_vec(), d)),
        weight: gw.map(|d| Tensor::from_parts(weight.shape().to_vec(), d)),
        bias: gb,
    }
}

/// Pooling reductions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
    GlobalMax,
    GlobalAvg,
}

/// Windowed pooling without padding. Returns the output and, for max
/// pooling, the flat input index selected for every output element.
pub(crate) fn pool_forward(
    input: &Tensor,
    kind: PoolKind,
    window: usize,
    stride: usize,
) -> Result<(Tensor, Vec<usize>)> {
    const OP: &str = "pool";
    let (n, c, h, w) = input.dims4(OP)?;
    let (wh, ww, s) = match kind {
        PoolKind::GlobalMax | PoolKind::GlobalAvg => (h, w, 1),
        PoolKind::Max | PoolKind::Avg => (window, window, stride),
    };
    if wh == 0 || ww == 0 {
        return Err(shape_err(OP, "window", "empty pooling window"));
    }
    if s == 0 {
        return Err(shape_err(OP, "stride", "stride must be positive"));
    }
    if wh > h || ww > w {
        return Err(shape_err(
            OP,
            "window",
            format!("window {wh}x{ww} exceeds spatial extent {h}x{w}"),
        ));
    }
    let oh = (h - wh) / s + 1;
    let ow = (w - ww) / s + 1;
    let is_max = matches!(kind, PoolKind::Max | PoolKind::GlobalMax);
    let inv = 1.0 / (wh * ww) as f64;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::new();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let (y0, x0) = (oy * s, ox * s);
                if is_max {
                    let mut best = base + y0 * w + x0;
                    for yy in y0..y0 + wh {
                        for xx in x0..x0 + ww {
                            let idx = base + yy * w + xx;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                } else {
                    let mut acc = 0.0;
                    for yy in y0..y0 + wh {
                        acc += x[base + yy * w + x0..base + yy * w + x0 + ww].iter().sum::<f64>();
                    }
                    out.push(acc * inv);
                }
            }
        }
    }
    Ok((Tensor::from_parts(vec![n, c, oh, ow], out), argmax))
}

pub(crate) fn pool_backward(
    input_shape: &[usize],
    grad_out: &Tensor,
    kind: PoolKind,
    window: usize,
    stride: usize,
    argmax: &[usize],
) -> Tensor {
    let mut gx = vec![0.0; input_shape.iter().product()];
    let go = grad_out.data();
    match kind {
        PoolKind::Max | PoolKind::GlobalMax => {
            for (g, &idx) in go.iter().zip(argmax) {
                gx[idx] += g;
            }
        }
        PoolKind::Avg | PoolKind::GlobalAvg => {
            let (h, w) = (input_shape[2], input_shape[3]);
            let (wh, ww, s) = if kind == PoolKind::GlobalAvg {
                (h, w, 1)
            } else {
                (window, window, stride)
            };
            let (oh, ow) = (grad_out.shape()[2], grad_out.shape()[3]);
            let inv = 1.0 / (wh * ww) as f64;
            for plane in 0..go.len() / (oh * ow) {
                let base = plane * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = go[(plane * oh + oy) * ow + ox] * inv;
                        for yy in oy * s..oy * s + wh {
                            for v in &mut gx[base + yy * w + ox * s..base + yy * w + ox * s + ww] {
                                *v += g;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(input_shape.to_vec(), gx)
}
