//! Cortical processing blocks.
//!
//! Every block owns [`ParamId`]s into a shared [`ParamStore`] and records
//! its forward pass on a [`Tape`], so gradients reach its parameters through
//! the ordinary reverse sweep.

mod cbam;
mod lateral;
mod multi_scale;
mod neuromod;
mod predictive;
mod recurrent;

pub use cbam::{Cbam, CbamOutput};
pub use lateral::LateralInteraction;
pub use multi_scale::{DepthwiseSeparable, MultiScaleV1, V1_KERNELS};
pub use neuromod::Neuromodulation;
pub use predictive::{predictive_error, PredictionError, TopDownProjection};
pub use recurrent::RecurrentBlock;

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::params::{ParamId, ParamStore, ParamVars};
use crate::tensor::{ConvSpec, Tape, Tensor, Var};

/// Initial weight scale for convolutions on a residual branch (lateral
/// interaction, recurrent refinement). Full-gain branches amplify the
/// signal they are added to and make early training erratic.
pub const RESIDUAL_INIT_SCALE: f64 = 0.35;

/// Convolution with its own weight and optional bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        spec: ConvSpec,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let per_group = in_channels / spec.groups;
        let fan_in = per_group * spec.kernel_h * spec.kernel_w;
        let weight = store.add_fan_in(
            format!("{name}.weight"),
            &[out_channels, per_group, spec.kernel_h, spec.kernel_w],
            fan_in,
            rng,
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels])));
        Self { weight, bias, spec }
    }

    /// Multiplies the freshly initialised weight by `factor`.
    pub fn damped(self, store: &mut ParamStore, factor: f64) -> Self {
        store.get_mut(self.weight).data_mut().iter_mut().for_each(|v| *v *= factor);
        self
    }

    pub fn forward(&self, tape: &mut Tape, p: &ParamVars, x: Var) -> Result<Var> {
        tape.conv2d(x, p.get(self.weight), self.bias.map(|b| p.get(b)), self.spec)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Affine map `[N,F] -> [N,G]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_fan_in(format!("{name}.weight"), &[inputs, outputs], inputs, rng);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, p: &ParamVars, x: Var) -> Result<Var> {
        tape.dense(x, p.get(self.weight), p.get(self.bias))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }
}

/// 3x3 shape-preserving convolution followed by ReLU.
#[derive(Debug, Clone)]
pub struct ConvRelu {
    pub conv: Conv,
}

impl ConvRelu {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        let conv = Conv::new(store, name, in_channels, out_channels, ConvSpec::same(3), true, rng);
        Self { conv }
    }

    pub fn forward(&self, tape: &mut Tape, p: &ParamVars, x: Var) -> Result<Var> {
        let y = self.conv.forward(tape, p, x)?;
        Ok(tape.relu(y))
    }
}

/// One stage inside a cortical area.
#[derive(Debug, Clone)]
pub enum Block {
    ConvRelu(ConvRelu),
    MultiScaleV1(MultiScaleV1),
    Lateral(LateralInteraction),
    Cbam(Cbam),
    Recurrent(RecurrentBlock),
    Neuromodulation(Neuromodulation),
}

impl Block {
    pub fn name(&self) -> &'static str {
        match self {
            Block::ConvRelu(_) => "conv",
            Block::MultiScaleV1(_) => "multi_scale_v1",
            Block::Lateral(_) => "lateral_interaction",
            Block::Cbam(_) => "cbam",
            Block::Recurrent(_) => "recurrent",
            Block::Neuromodulation(_) => "neuromodulation",
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &ParamVars, x: Var) -> Result<Var> {
        match self {
            Block::ConvRelu(b) => b.forward(tape, p, x),
            Block::MultiScaleV1(b) => b.forward(tape, p, x),
            Block::Lateral(b) => b.forward(tape, p, x),
            Block::Cbam(b) => b.forward(tape, p, x).map(|o| o.output),
            Block::Recurrent(b) => b.forward(tape, p, x),
            Block::Neuromodulation(b) => b.forward(tape, p, x),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            Block::ConvRelu(b) => b.conv.param_ids(),
            Block::MultiScaleV1(b) => b.param_ids(),
            Block::Lateral(b) => b.param_ids(),
            Block::Cbam(b) => b.param_ids(),
            Block::Recurrent(b) => b.conv.param_ids(),
            Block::Neuromodulation(b) => vec![b.gain],
        }
    }
}

/// Channel count of a rank-4 value on the tape.
pub(crate) fn channels(tape: &Tape, x: Var, op: &'static str) -> Result<usize> {
    Ok(tape.value(x).dims4(op)?.1)
}

pub(crate) fn expect_channels(tape: &Tape, x: Var, want: usize, op: &'static str) -> Result<()> {
    let got = channels(tape, x, op)?;
    if got != want {
        return Err(shape_err(op, "channels", format!("expected {want}, got {got}")));
    }
    Ok(())
}
