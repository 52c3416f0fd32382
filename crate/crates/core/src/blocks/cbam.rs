use rand::Rng;

use super::{channels, expect_channels, Conv, Linear};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore, ParamVars};
use crate::tensor::{ChannelReduction, ConvSpec, PoolKind, Tape, Var};

const OPEN_GATE_LOGIT: f64 = 3.0;

/// Convolutional block attention: channel attention from pooled
/// descriptors through a shared two-layer MLP, then spatial attention from
/// a 7x7 convolution over channel-mean and channel-max maps.
#[derive(Debug, Clone)]
pub struct Cbam {
    pub hidden: Linear,
    pub expand: Linear,
    pub spatial: Conv,
    pub channels: usize,
    pub reduction: usize,
}

/// Output of [`Cbam`] with the two attention maps it applied.
#[derive(Debug, Clone, Copy)]
pub struct CbamOutput {
    pub output: Var,
    /// `[N, C, 1, 1]`
    pub channel_attention: Var,
    /// `[N, 1, H, W]`
    pub spatial_attention: Var,
}

impl Cbam {
    pub const DEFAULT_REDUCTION: usize = 4;
    pub const SPATIAL_KERNEL: usize = 7;

    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        reduction: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::Config(format!(
                "{name}: CBAM reduction {reduction} must divide channel count {channels}"
            )));
        }
        let mid = channels / reduction;
        let hidden = Linear::new(store, &format!("{name}.mlp_hidden"), channels, mid, rng);
        let expand = Linear::new(store, &format!("{name}.mlp_expand"), mid, channels, rng);
        let spatial = Conv::new(
            store,
            &format!("{name}.spatial"),
            2,
            1,
            ConvSpec::same(Self::SPATIAL_KERNEL),
            true,
            rng,
        );
        // Gates start open (sigmoid(3) ~ 0.95) so fresh models pass signal
        // through; the shared MLP runs on both pooled paths, hence half.
        store.get_mut(expand.bias).data_mut().fill(OPEN_GATE_LOGIT / 2.0);
        if let Some(bias) = spatial.bias {
            store.get_mut(bias).data_mut().fill(OPEN_GATE_LOGIT);
        }
        Ok(Self {
            hidden,
            expand,
            spatial,
            channels,
            reduction,
        })
    }

    fn mlp(&self, tape: &mut Tape, p: &ParamVars, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, p, x)?;
        let h = tape.relu(h);
        self.expand.forward(tape, p, h)
    }

    pub fn forward(&self, tape: &mut Tape, p: &ParamVars, x: Var) -> Result<CbamOutput> {
        expect_channels(tape, x, self.channels, "cbam")?;
        let n = tape.shape(x)[0];
        let c = channels(tape, x, "cbam")?;

        let avg = tape.pool(x, PoolKind::GlobalAvg, 0, 0)?;
        let avg = tape.reshape(avg, &[n, c])?;
        let max = tape.pool(x, PoolKind::GlobalMax, 0, 0)?;
        let max = tape.reshape(max, &[n, c])?;
        let a = self.mlp(tape, p, avg)?;
        let m = self.mlp(tape, p, max)?;
        let logits = tape.add(a, m)?;
        let att = tape.sigmoid(logits);
        let channel_attention = tape.reshape(att, &[n, c, 1, 1])?;
        let refined = tape.mul(x, channel_attention)?;

        let mean_c = tape.channel_reduce(refined, ChannelReduction::Mean)?;
        let max_c = tape.channel_reduce(refined, ChannelReduction::Max)?;
        let stacked = tape.concat_channels(&[mean_c, max_c])?;
        let s = self.spatial.forward(tape, p, stacked)?;
        let spatial_attention = tape.sigmoid(s);
        let output = tape.mul(refined, spatial_attention)?;
        Ok(CbamOutput {
            output,
            channel_attention,
            spatial_attention,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.hidden.param_ids();
        ids.extend(self.expand.param_ids());
        ids.extend(self.spatial.param_ids());
        ids
    }
}
