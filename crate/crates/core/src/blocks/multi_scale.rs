use rand::Rng;

use super::{expect_channels, Conv};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore, ParamVars};
use crate::tensor::{ConvSpec, Tape, Var};

/// Receptive-field sizes of the three parallel V1 branches.
pub const V1_KERNELS: [usize; 3] = [3, 5, 7];

/// Depthwise `k x k` convolution (one filter per channel, no bias) followed
/// by a 1x1 pointwise convolution with optional bias.
#[derive(Debug, Clone)]
pub struct DepthwiseSeparable {
    pub depthwise: Conv,
    pub pointwise: Conv,
}

impl DepthwiseSeparable {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let dw_spec = ConvSpec::same(kernel).with_groups(in_channels);
        let depthwise = Conv::new(store, &format!("{name}.depthwise"), in_channels, in_channels, dw_spec, false, rng);
        let pointwise = Conv::new(
            store,
            &format!("{name}.pointwise"),
            in_channels,
            out_channels,
            ConvSpec::square(1, 0),
            bias,
            rng,
        );
        Self { depthwise, pointwise }
    }

    pub fn forward(&self, tape: &mut Tape, p: &ParamVars, x: Var) -> Result<Var> {
        tape.depthwise_separable(
            x,
            (p.get(self.depthwise.weight), self.depthwise.bias.map(|b| p.get(b))),
            (p.get(self.pointwise.weight), self.pointwise.bias.map(|b| p.get(b))),
            self.depthwise.spec,
        )
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.depthwise.param_ids();
        ids.extend(self.pointwise.param_ids());
        ids
    }
}

/// Three depthwise-separable branches (3x3, 5x5, 7x7), each followed by
/// ReLU, concatenated along channels. Spatial extent is preserved.
#[derive(Debug, Clone)]
pub struct MultiScaleV1 {
    pub branches: Vec<DepthwiseSeparable>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl MultiScaleV1 {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if out_channels == 0 || out_channels % V1_KERNELS.len() != 0 {
            return Err(Error::Config(format!(
                "{name}: output channels {out_channels} must be a positive multiple of 3"
            )));
        }
        let per_branch = out_channels / V1_KERNELS.len();
        let branches = V1_KERNELS
            .iter()
            .map(|&k| DepthwiseSeparable::new(store, &format!("{name}.k{k}"), in_channels, per_branch, k, true, rng))
            .collect();
        Ok(Self {
            branches,
            in_channels,
            out_channels,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &ParamVars, x: Var) -> Result<Var> {
        expect_channels(tape, x, self.in_channels, "multi_scale_v1")?;
        let mut outs = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let y = branch.forward(tape, p, x)?;
            outs.push(tape.relu(y));
        }
        tape.concat_channels(&outs)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.branches.iter().flat_map(DepthwiseSeparable::param_ids).collect()
    }
}
