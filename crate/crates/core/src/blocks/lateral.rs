use rand::Rng;

use super::{expect_channels, Conv, Linear, RESIDUAL_INIT_SCALE};
use crate::error::Result;
use crate::params::{ParamId, ParamStore, ParamVars};
use crate::tensor::{ConvSpec, PoolKind, Tape, Var};

/// Residual lateral interaction `x + y * (C * softmax_c(W avg(y) + b))`
/// with `y = conv3x3(x)`.
///
/// The `C` factor makes uniform attention a unit gain.
#[derive(Debug, Clone)]
pub struct LateralInteraction {
    pub conv: Conv,
    pub attention: Linear,
    pub channels: usize,
}

impl LateralInteraction {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, channels: usize, rng: &mut R) -> Self {
        let conv = Conv::new(store, &format!("{name}.conv"), channels, channels, ConvSpec::same(3), true, rng)
            .damped(store, RESIDUAL_INIT_SCALE);
        let attention = Linear::new(store, &format!("{name}.attention"), channels, channels, rng);
        Self {
            conv,
            attention,
            channels,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &ParamVars, x: Var) -> Result<Var> {
        expect_channels(tape, x, self.channels, "lateral_interaction")?;
        let n = tape.shape(x)[0];
        let c = self.channels;
        let y = self.conv.forward(tape, p, x)?;
        let pooled = tape.pool(y, PoolKind::GlobalAvg, 0, 0)?;
        let pooled = tape.reshape(pooled, &[n, c])?;
        let logits = self.attention.forward(tape, p, pooled)?;
        let att = tape.softmax(logits)?;
        let att = tape.scale(att, c as f64);
        let att = tape.reshape(att, &[n, c, 1, 1])?;
        let weighted = tape.mul(y, att)?;
        tape.add(x, weighted)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.conv.param_ids();
        ids.extend(self.attention.param_ids());
        ids
    }
}
