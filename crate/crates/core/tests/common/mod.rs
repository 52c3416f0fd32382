//! Straight-line reference implementations used as test oracles.
//!
//! The oracles share no code with the library kernels: every output element
//! is computed from its definition by explicit index arithmetic. The
//! `*_sweep` helpers run the library against them over random shapes.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcnet_core::blocks::{Cbam, Conv, LateralInteraction, Linear};
use vcnet_core::{ConvSpec, ParamStore, PoolKind, Tape, Tensor};

pub fn at4(t: &Tensor, n: usize, c: usize, y: usize, x: usize) -> f64 {
    let s = t.shape();
    t.data()[((n * s[1] + c) * s[2] + y) * s[3] + x]
}

/// Zero-padded grouped cross-correlation.
pub fn conv_oracle(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: ConvSpec) -> Tensor {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (k, cg, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    assert_eq!(cg * spec.groups, c);
    let kg = k / spec.groups;
    let oh = (h + 2 * spec.padding - kh) / spec.stride + 1;
    let ow = (wd + 2 * spec.padding - kw) / spec.stride + 1;
    let mut out = vec![0.0; n * k * oh * ow];
    for ni in 0..n {
        for ko in 0..k {
            let g = ko / kg;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[ko]);
                    for ci in 0..cg {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (oy * spec.stride + dy) as i64 - spec.padding as i64;
                                let ix = (ox * spec.stride + dx) as i64 - spec.padding as i64;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                    continue;
                                }
                                acc += at4(x, ni, g * cg + ci, iy as usize, ix as usize) * at4(w, ko, ci, dy, dx);
                            }
                        }
                    }
                    out[((ni * k + ko) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, k, oh, ow], out).unwrap()
}

pub fn pool_oracle(x: &Tensor, kind: PoolKind, window: usize, stride: usize) -> Tensor {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (wh, ww, s) = match kind {
        PoolKind::GlobalAvg | PoolKind::GlobalMax => (h, w, 1),
        _ => (window, window, stride),
    };
    let (oh, ow) = ((h - wh) / s + 1, (w - ww) / s + 1);
    let mut out = Vec::new();
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let vals: Vec<f64> = (0..wh)
                        .flat_map(|dy| (0..ww).map(move |dx| (dy, dx)))
                        .map(|(dy, dx)| at4(x, ni, ci, oy * s + dy, ox * s + dx))
                        .collect();
                    out.push(match kind {
                        PoolKind::Max | PoolKind::GlobalMax => vals.iter().copied().fold(f64::MIN, f64::max),
                        _ => vals.iter().sum::<f64>() / vals.len() as f64,
                    });
                }
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out).unwrap()
}

/// `[N, F] x [F, G] + [G]`.
pub fn dense_oracle(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (f, g) = (w.shape()[0], w.shape()[1]);
    (0..g)
        .map(|j| b.data()[j] + (0..f).map(|i| x[i] * w.data()[i * g + j]).sum::<f64>())
        .collect()
}

fn conv_param(store: &ParamStore, conv: &Conv, x: &Tensor) -> Tensor {
    conv_oracle(x, store.get(conv.weight), conv.bias.map(|b| store.get(b)), conv.spec)
}

fn linear(store: &ParamStore, l: &Linear, x: &[f64]) -> Vec<f64> {
    dense_oracle(x, store.get(l.weight), store.get(l.bias))
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Channel then spatial attention, one sample at a time.
pub fn cbam_oracle(store: &ParamStore, block: &Cbam, x: &Tensor) -> Tensor {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut refined = vec![0.0; x.numel()];
    for ni in 0..n {
        let mut avg = vec![0.0; c];
        let mut max = vec![f64::MIN; c];
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let v = at4(x, ni, ci, y, xx);
                    avg[ci] += v / (h * w) as f64;
                    max[ci] = max[ci].max(v);
                }
            }
        }
        let mlp = |d: &[f64]| {
            let hid: Vec<f64> = linear(store, &block.hidden, d).into_iter().map(|v| v.max(0.0)).collect();
            linear(store, &block.expand, &hid)
        };
        let (a, m) = (mlp(&avg), mlp(&max));
        for ci in 0..c {
            let att = sigmoid(a[ci] + m[ci]);
            for y in 0..h {
                for xx in 0..w {
                    refined[((ni * c + ci) * h + y) * w + xx] = at4(x, ni, ci, y, xx) * att;
                }
            }
        }
    }
    let refined = Tensor::new(x.shape().to_vec(), refined).unwrap();
    let mut maps = vec![0.0; n * 2 * h * w];
    for ni in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let vals: Vec<f64> = (0..c).map(|ci| at4(&refined, ni, ci, y, xx)).collect();
                maps[((ni * 2) * h + y) * w + xx] = vals.iter().sum::<f64>() / c as f64;
                maps[((ni * 2 + 1) * h + y) * w + xx] = vals.iter().copied().fold(f64::MIN, f64::max);
            }
        }
    }
    let maps = Tensor::new(vec![n, 2, h, w], maps).unwrap();
    let s = conv_param(store, &block.spatial, &maps);
    let mut out = refined.data().to_vec();
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out[((ni * c + ci) * h + y) * w + xx] *= sigmoid(at4(&s, ni, 0, y, xx));
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).unwrap()
}

/// `x + y * C * softmax(W gap(y) + b)`, `y = conv(x)`.
pub fn lateral_oracle(store: &ParamStore, block: &LateralInteraction, x: &Tensor) -> Tensor {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let y = conv_param(store, &block.conv, x);
    let mut out = vec![0.0; x.numel()];
    for ni in 0..n {
        let gap: Vec<f64> = (0..c)
            .map(|ci| {
                let mut s = 0.0;
                for yy in 0..h {
                    for xx in 0..w {
                        s += at4(&y, ni, ci, yy, xx);
                    }
                }
                s / (h * w) as f64
            })
            .collect();
        let logits = linear(store, &block.attention, &gap);
        let mx = logits.iter().copied().fold(f64::MIN, f64::max);
        let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
        for ci in 0..c {
            let att = c as f64 * (logits[ci] - mx).exp() / z;
            for yy in 0..h {
                for xx in 0..w {
                    out[((ni * c + ci) * h + yy) * w + xx] = at4(x, ni, ci, yy, xx) + at4(&y, ni, ci, yy, xx) * att;
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).unwrap()
}

/// A random convolution geometry together with operands for it.
pub struct ConvCase {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
    pub spec: ConvSpec,
}

pub fn random_conv_case<R: Rng>(rng: &mut R) -> ConvCase {
    let groups = rng.gen_range(1..=3);
    let cg = rng.gen_range(1..=3);
    let kg = rng.gen_range(1..=3);
    let kh: usize = rng.gen_range(1..=5);
    let kw: usize = rng.gen_range(1..=5);
    let stride = rng.gen_range(1..=3);
    let padding = rng.gen_range(0..=2);
    let h = rng.gen_range(kh.saturating_sub(2 * padding).max(1)..=10);
    let w = rng.gen_range(kw.saturating_sub(2 * padding).max(1)..=10);
    let n = rng.gen_range(1..=2);
    ConvCase {
        input: Tensor::uniform(&[n, groups * cg, h, w], -1.0, 1.0, rng),
        weight: Tensor::uniform(&[groups * kg, cg, kh, kw], -1.0, 1.0, rng),
        bias: Tensor::uniform(&[groups * kg], -1.0, 1.0, rng),
        spec: ConvSpec {
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            groups,
        },
    }
}

/// Library convolution of a case, for comparison against [`conv_oracle`].
pub fn tape_conv(case: &ConvCase) -> Tensor {
    let mut t = Tape::new();
    let x = t.constant(case.input.clone());
    let w = t.constant(case.weight.clone());
    let b = t.constant(case.bias.clone());
    let y = t.conv2d(x, w, Some(b), case.spec).unwrap();
    t.value(y).clone()
}

/// Worst absolute deviation of `conv2d` from the oracle over random shapes.
pub fn conv_sweep(seed: u64, shapes: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..shapes)
        .map(|_| {
            let case = random_conv_case(&mut rng);
            let expected = conv_oracle(&case.input, &case.weight, Some(&case.bias), case.spec);
            max_abs_diff(&tape_conv(&case), &expected)
        })
        .fold(0.0, f64::max)
}

/// Depthwise-separable convolution against two chained oracle convolutions.
pub fn depthwise_sweep(seed: u64, shapes: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..shapes {
        let c = rng.gen_range(1..=4);
        let mult = rng.gen_range(1..=2);
        let k_out = rng.gen_range(1..=5);
        let kernel: usize = [1, 3, 5][rng.gen_range(0..3)];
        let pad = rng.gen_range(0..=kernel / 2);
        let stride = rng.gen_range(1..=2);
        let h = rng.gen_range(kernel.saturating_sub(2 * pad).max(1)..=9);
        let w = rng.gen_range(kernel.saturating_sub(2 * pad).max(1)..=9);
        let x = Tensor::uniform(&[rng.gen_range(1..=2), c, h, w], -1.0, 1.0, &mut rng);
        let dw = Tensor::uniform(&[c * mult, 1, kernel, kernel], -1.0, 1.0, &mut rng);
        let db = Tensor::uniform(&[c * mult], -1.0, 1.0, &mut rng);
        let pw = Tensor::uniform(&[k_out, c * mult, 1, 1], -1.0, 1.0, &mut rng);
        let pb = Tensor::uniform(&[k_out], -1.0, 1.0, &mut rng);
        let spec = ConvSpec::square(kernel, pad).with_stride(stride).with_groups(c);

        let mid = conv_oracle(&x, &dw, Some(&db), spec);
        let expected = conv_oracle(&mid, &pw, Some(&pb), ConvSpec::square(1, 0));

        let mut t = Tape::new();
        let vars = [x, dw, db, pw, pb].map(|v| t.constant(v));
        let y = t
            .depthwise_separable(vars[0], (vars[1], Some(vars[2])), (vars[3], Some(vars[4])), spec)
            .unwrap();
        worst = worst.max(max_abs_diff(t.value(y), &expected));
    }
    worst
}

/// All four pool kinds, cycled, against [`pool_oracle`].
pub fn pool_sweep(seed: u64, shapes: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = [PoolKind::Max, PoolKind::Avg, PoolKind::GlobalMax, PoolKind::GlobalAvg];
    let mut worst = 0.0f64;
    for i in 0..shapes {
        let kind = kinds[i % 4];
        let window = rng.gen_range(1..=4);
        let stride = rng.gen_range(1..=3);
        let h = rng.gen_range(window..=10);
        let w = rng.gen_range(window..=10);
        let x = Tensor::uniform(&[rng.gen_range(1..=2), rng.gen_range(1..=4), h, w], -1.0, 1.0, &mut rng);
        let expected = pool_oracle(&x, kind, window, stride);
        let mut t = Tape::new();
        let v = t.constant(x);
        let y = t.pool(v, kind, window, stride).unwrap();
        worst = worst.max(max_abs_diff(t.value(y), &expected));
    }
    worst
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Directional gradient-energy ratio `max(Ex, Ey) / min(Ex, Ey)` of a
/// single-channel image. Equivalent to comparing lag-1 autocorrelations
/// along the two axes: a strongly oriented texture puts almost all its
/// energy on one axis, an isotropic one splits it evenly.
pub fn anisotropy(img: &Tensor) -> f64 {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let px = |y: usize, x: usize| img.data()[y * w + x];
    let (mut ex, mut ey) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                ex += (px(y, x + 1) - px(y, x)).powi(2);
            }
            if y + 1 < h {
                ey += (px(y + 1, x) - px(y, x)).powi(2);
            }
        }
    }
    ex.max(ey) / ex.min(ey)
}

/// Light-field scenes whose class is the sign of the disparity between
/// views: view `(r, c)` sees the scene shifted by `(r * d, c * d)` with
/// `d` in `{-2, 0, 2}`.
pub fn parallax_fixture(per_class: usize, size: usize, seed: u64) -> Vec<vcnet_core::data::LightFieldSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = ["far", "focal", "near"];
    let disparity = [-2i64, 0, 2];
    let margin = 4usize;
    let big = size + 2 * margin;
    let mut out = Vec::new();
    for (label, (&name, &d)) in names.iter().zip(&disparity).enumerate() {
        for _ in 0..per_class {
            let mut scene = vec![0.1; big * big];
            for _ in 0..rng.gen_range(4..8) {
                let (cx, cy) = (rng.gen_range(0.0..big as f64), rng.gen_range(0.0..big as f64));
                let r = rng.gen_range(1.5..3.5);
                let level = rng.gen_range(0.5..1.0);
                for y in 0..big {
                    for x in 0..big {
                        let dist = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                        if dist <= r {
                            scene[y * big + x] = level;
                        }
                    }
                }
            }
            let mut views = Vec::with_capacity(4 * size * size);
            for r in 0..2i64 {
                for c in 0..2i64 {
                    for y in 0..size {
                        for x in 0..size {
                            let sy = (y as i64 + margin as i64 + r * d) as usize;
                            let sx = (x as i64 + margin as i64 + c * d) as usize;
                            views.push(scene[sy * big + sx]);
                        }
                    }
                }
            }
            out.push(vcnet_core::data::LightFieldSample {
                views: Tensor::new(vec![4, size, size], views).unwrap(),
                label,
                class_name: name.to_string(),
                grid: (2, 2),
            });
        }
    }
    out
}
