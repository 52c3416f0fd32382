//! Finite-difference verification of the backward rules.
//!
//! Each case is a scalar function of a [`ParamStore`]; inputs are stored
//! alongside parameters so their gradients are checked too. The analytic
//! gradient from one reverse sweep is compared against central differences
//! with relative error `|a - n| / max(1, |a|)`.

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{
    predictive_error, Cbam, ConvRelu, DepthwiseSeparable, LateralInteraction, MultiScaleV1, Neuromodulation,
    RecurrentBlock, TopDownProjection,
};
use crate::error::Result;
use crate::graph::{build_model, ModelConfig};
use crate::params::{ParamStore, ParamVars};
use crate::tensor::{ChannelReduction, ConvSpec, OpKind, PoolKind, Tape, Tensor, Var};
use crate::train::composite_loss;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;
/// Scalar parameters sampled for the full-model check.
pub const MODEL_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_error: f64,
    /// `tensor[index]` with the largest error.
    pub worst: String,
    pub checked: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<28} max rel err {:.3e} over {:>4} entries (worst {})",
            self.name, self.max_rel_error, self.checked, self.worst
        )
    }
}

/// Compares analytic and numerical gradients of `loss` with respect to the
/// entries of `store`. With `samples = Some((k, seed))` only `k` randomly
/// chosen scalar entries are checked.
pub fn check<F>(
    name: &str,
    store: &ParamStore,
    loss: F,
    samples: Option<(usize, u64)>,
    fault: Option<OpKind>,
) -> Result<CheckReport>
where
    F: Fn(&mut Tape, &ParamVars) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let p = s.bind(&mut tape);
        let l = loss(&mut tape, &p)?;
        Ok(tape.value(l).data()[0])
    };

    let mut tape = Tape::new();
    tape.corrupt_backward(fault);
    let p = store.bind(&mut tape);
    let l = loss(&mut tape, &p)?;
    tape.backward(l)?;
    let analytic = p.grads(&tape);

    let mut entries: Vec<(usize, usize)> = store
        .tensors()
        .iter()
        .enumerate()
        .flat_map(|(t, x)| (0..x.numel()).map(move |i| (t, i)))
        .collect();
    if let Some((k, seed)) = samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<usize> = sample(&mut rng, entries.len(), k.min(entries.len())).into_vec();
        picked.sort_unstable();
        entries = picked.into_iter().map(|i| entries[i]).collect();
    }

    let mut probe = store.clone();
    let mut report = CheckReport {
        name: name.to_string(),
        max_rel_error: 0.0,
        worst: String::new(),
        checked: entries.len(),
    };
    for (t, i) in entries {
        let original = probe.tensors()[t].data()[i];
        probe.tensors_mut()[t].data_mut()[i] = original + STEP;
        let plus = eval(&probe)?;
        probe.tensors_mut()[t].data_mut()[i] = original - STEP;
        let minus = eval(&probe)?;
        probe.tensors_mut()[t].data_mut()[i] = original;

        let numerical = (plus - minus) / (2.0 * STEP);
        let a = analytic[t].data()[i];
        let err = (a - numerical).abs() / a.abs().max(1.0);
        if err > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = report.max_rel_error.max(err);
            let tensor_name = store.iter().nth(t).map_or("?", |(n, _)| n);
            report.worst = format!("{tensor_name}[{i}]");
        }
    }
    Ok(report)
}

/// `sum(x * r)` for a fixed random `r`: a generic scalar readout whose
/// gradient with respect to `x` is `r`.
fn readout(tape: &mut Tape, x: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = Tensor::uniform(tape.shape(x), -1.0, 1.0, &mut rng);
    let r = tape.constant(r);
    let weighted = tape.mul(x, r)?;
    Ok(tape.sum(weighted))
}

struct Case {
    store: ParamStore,
    rng: ChaCha8Rng,
}

impl Case {
    fn new(seed: u64) -> Self {
        Self {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn input(&mut self, name: &str, shape: &[usize]) -> crate::params::ParamId {
        let t = Tensor::uniform(shape, -1.0, 1.0, &mut self.rng);
        self.store.add(name, t)
    }

    /// Moves every entry off its initial value so zero biases and unit
    /// gains do not hide errors.
    fn jitter(&mut self) {
        for t in self.store.tensors_mut() {
            for v in t.data_mut() {
                *v += self.rng.gen_range(-0.3..0.3);
            }
        }
    }
}

/// Runs every case: the primitive ops, each cortical block, and the full
/// mini model under the composite loss.
pub fn run_suite(fault: Option<OpKind>) -> Result<Vec<CheckReport>> {
    let mut reports = Vec::new();
    let mut push = |r: CheckReport| reports.push(r);

    // ---- primitive ops ----
    {
        let mut c = Case::new(1);
        let x = c.input("input", &[2, 4, 6, 6]);
        let w = c.input("weight", &[6, 2, 3, 3]);
        let b = c.input("bias", &[6]);
        let spec = ConvSpec::square(3, 1).with_stride(2).with_groups(2);
        push(check(
            "op/conv2d",
            &c.store,
            |t, p| {
                let y = t.conv2d(p.get(x), p.get(w), Some(p.get(b)), spec)?;
                readout(t, y, 10)
            },
            None,
            fault,
        )?);
    }
    {
        let mut c = Case::new(2);
        let x = c.input("input", &[1, 3, 5, 5]);
        let dw = c.input("depthwise", &[3, 1, 3, 3]);
        let db = c.input("depthwise_bias", &[3]);
        let pw = c.input("pointwise", &[4, 3, 1, 1]);
        let pb = c.input("pointwise_bias", &[4]);
        let spec = ConvSpec::same(3).with_groups(3);
        push(check(
            "op/depthwise_separable",
            &c.store,
            |t, p| {
                let y = t.depthwise_separable(
                    p.get(x),
                    (p.get(dw), Some(p.get(db))),
                    (p.get(pw), Some(p.get(pb))),
                    spec,
                )?;
                readout(t, y, 11)
            },
            None,
            fault,
        )?);
    }
    {
        let mut c = Case::new(3);
        let x = c.input("input", &[3, 5]);
        let w = c.input("weight", &[5, 4]);
        let b = c.input("bias", &[4]);
        push(check(
            "op/dense",
            &c.store,
            |t, p| {
                let y = t.dense(p.get(x), p.get(w), p.get(b))?;
                readout(t, y, 12)
            },
            None,
            fault,
        )?);
    }
    {
        let mut c = Case::new(4);
        let a = c.input("a", &[2, 3, 4, 4]);
        let b = c.input("b", &[1, 3, 1, 1]);
        push(check(
            "op/broadcast_arith",
            &c.store,
            |t, p| {
                let s = t.add(p.get(a), p.get(b))?;
                let d = t.sub(p.get(a), p.get(b))?;
                let m = t.mul(s, d)?;
                let m = t.scale(m, 0.7);
                readout(t, m, 13)
            },
            None,
            fault,
        )?);
    }
    {
        let mut c = Case::new(5);
        let x = c.input("input", &[2, 3, 4, 4]);
        push(check(
            "op/relu_sigmoid",
            &c.store,
            |t, p| {
                let r = t.relu(p.get(x));
                let s = t.sigmoid(p.get(x));
                let y = t.add(r, s)?;
                readout(t, y, 14)
            },
            None,
            fault,
        )?);
    }
    for (label, kind, window, stride) in [
        ("op/max_pool", PoolKind::Max, 2, 2),
        ("op/avg_pool", PoolKind::Avg, 3, 1),
        ("op/global_max_pool", PoolKind::GlobalMax, 0, 0),
        ("op/global_avg_pool", PoolKind::GlobalAvg, 0, 0),
    ] {
        let mut c = Case::new(6);
        let x = c.input("input", &[2, 3, 6, 6]);
        push(check(
            label,
            &c.store,
            |t, p| {
                let y = t.pool(p.get(x), kind, window, stride)?;
                readout(t, y, 15)
            },
            None,
            fault,
        )?);
    }
    {
        let mut c = Case::new(7);
        let x = c.input("input", &[2, 4, 3, 3]);
        push(check(
            "op/channel_reduce",
            &c.store,
            |t, p| {
                let m = t.channel_reduce(p.get(x), ChannelReduction::Mean)?;
                let x_max = t.channel_reduce(p.get(x), ChannelReduction::Max)?;
                let y = t.concat_channels(&[m, x_max])?;
                readout(t, y, 16)
            },
            None,
            fault,
        )?);
    }
    {
        let mut c = Case::new(8);
        let x = c.input("input", &[3, 5]);
        let labels = [4, 0, 2];
        push(check(
            "op/softmax_cross_entropy",
            &c.store,
            |t, p| {
                let sm = t.softmax(p.get(x))?;
                let a = readout(t, sm, 17)?;
                let ce = t.softmax_cross_entropy(p.get(x), &labels)?;
                t.add(a, ce)
            },
            None,
            fault,
        )?);
    }
    {
        let mut c = Case::new(9);
        let x = c.input("input", &[2, 2, 3, 3]);
        push(check(
            "op/upsample_reshape_mean",
            &c.store,
            |t, p| {
                let u = t.upsample_nearest(p.get(x), 7, 5)?;
                let r = t.reshape(u, &[4, 35])?;
                let a = readout(t, r, 18)?;
                let sq = t.mul(u, u)?;
                let m = t.mean(sq);
                t.add(a, m)
            },
            None,
            fault,
        )?);
    }

    // ---- blocks ----
    {
        let mut c = Case::new(20);
        let x = c.input("input", &[2, 3, 6, 6]);
        let block = ConvRelu::new(&mut c.store, "conv", 3, 4, &mut c.rng);
        c.jitter();
        push(check(
            "block/conv",
            &c.store,
            |t, p| {
                let y = block.forward(t, p, p.get(x))?;
                readout(t, y, 20)
            },
            None,
            fault,
        )?);
    }
    {
        let mut c = Case::new(21);
        let x = c.input("input", &[1, 2, 8, 8]);
        let block = MultiScaleV1::new(&mut c.store, "multi_scale", 2, 6, &mut c.rng)?;
        c.jitter();
        push(check(
            "block/multi_scale_v1",
            &c.store,
            |t, p| {
                let y = block.forward(t, p, p.get(x))?;
                readout(t, y, 21)
            },
            None,
            fault,
        )?);
    }
    {
        let mut c = Case::new(22);
        let x = c.input("input", &[1, 3, 5, 5]);
        let block = DepthwiseSeparable::new(&mut c.store, "dw", 3, 4, 5, true, &mut c.rng);
        c.jitter();
        push(check(
            "block/depthwise_separable",
            &c.store,
            |t, p| {
                let y = block.forward(t, p, p.get(x))?;
                readout(t, y, 22)
            },
            None,
            fault,
        )?);
    }
    {
        let mut c = Case::new(23);
        let x = c.input("input", &[2, 3, 5, 5]);
        let block = LateralInteraction::new(&mut c.store, "lateral", 3, &mut c.rng);
        c.jitter();
        push(check(
            "block/lateral_interaction",
            &c.store,
            |t, p| {
                let y = block.forward(t, p, p.get(x))?;
                readout(t, y, 23)
            },
            None,
            fault,
        )?);
    }
    {
        let mut c = Case::new(24);
        let x = c.input("input", &[2, 4, 8, 8]);
        let block = Cbam::new(&mut c.store, "cbam", 4, 2, &mut c.rng)?;
        c.jitter();
        push(check(
            "block/cbam",
            &c.store,
            |t, p| {
                let y = block.forward(t, p, p.get(x))?.output;
                readout(t, y, 24)
            },
            None,
            fault,
        )?);
    }
    {
        let mut c = Case::new(25);
        let x = c.input("input", &[1, 3, 5, 5]);
        let block = RecurrentBlock::new(&mut c.store, "recurrent", 3, 3, &mut c.rng)?;
        c.jitter();
        push(check(
            "block/recurrent",
            &c.store,
            |t, p| {
                let y = block.forward(t, p, p.get(x))?;
                readout(t, y, 25)
            },
            None,
            fault,
        )?);
    }
    {
        let mut c = Case::new(26);
        let x = c.input("input", &[2, 3, 4, 4]);
        let block = Neuromodulation::new(&mut c.store, "neuromodulation", 3);
        c.jitter();
        push(check(
            "block/neuromodulation",
            &c.store,
            |t, p| {
                let y = block.forward(t, p, p.get(x))?;
                readout(t, y, 26)
            },
            None,
            fault,
        )?);
    }
    {
        let mut c = Case::new(27);
        let ait = c.input("ait", &[2, 4, 2, 2]);
        let v1 = c.input("v1", &[2, 3, 8, 8]);
        let block = TopDownProjection::new(&mut c.store, "top_down", 4, 3, &mut c.rng);
        c.jitter();
        push(check(
            "block/top_down_prediction",
            &c.store,
            |t, p| {
                let pred = block.forward(t, p, p.get(ait), 8, 8)?;
                let eps = predictive_error(t, p.get(v1), pred)?.epsilon;
                let sq = t.mul(eps, eps)?;
                let pen = t.mean(sq);
                let r = readout(t, eps, 27)?;
                t.add(pen, r)
            },
            None,
            fault,
        )?);
    }

    // ---- full model ----
    {
        let config = ModelConfig::mini(10);
        let graph = build_model(&config, 7)?;
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let mut shape = vec![2];
        shape.extend(config.sample_shape());
        let batch = Tensor::uniform(&shape, 0.0, 1.0, &mut rng);
        let labels = [3, 8];
        push(check(
            "model/mini_composite_loss",
            graph.params(),
            |t, p| {
                let x = t.constant(batch.clone());
                let out = graph.forward(t, p, x)?;
                Ok(composite_loss(t, &out, &labels, 0.1)?.total)
            },
            Some((MODEL_SAMPLES, 31)),
            fault,
        )?);
    }
    Ok(reports)
}
