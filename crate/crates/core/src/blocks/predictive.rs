use rand::Rng;

use super::{expect_channels, Conv};
use crate::error::{shape_err, Result};
use crate::params::{ParamId, ParamStore, ParamVars};
use crate::tensor::{ConvSpec, Tape, Var};

/// Rectified residual between bottom-up activity and its top-down
/// prediction. Every element is non-negative.
#[derive(Debug, Clone, Copy)]
pub struct PredictionError {
    pub epsilon: Var,
}

/// `relu(bottom_up - top_down)`.
pub fn predictive_error(tape: &mut Tape, bottom_up: Var, top_down: Var) -> Result<PredictionError> {
    if tape.shape(bottom_up) != tape.shape(top_down) {
        return Err(shape_err(
            "predictive_error",
            "shape",
            format!(
                "bottom-up {:?} vs top-down {:?}",
                tape.shape(bottom_up),
                tape.shape(top_down)
            ),
        ));
    }
    let diff = tape.sub(bottom_up, top_down)?;
    Ok(PredictionError {
        epsilon: tape.relu(diff),
    })
}

/// Decoder from the top of the ventral stream back to V1: a biased 1x1
/// channel projection followed by nearest-neighbour upsampling.
#[derive(Debug, Clone)]
pub struct TopDownProjection {
    pub projection: Conv,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl TopDownProjection {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        let projection = Conv::new(
            store,
            &format!("{name}.projection"),
            in_channels,
            out_channels,
            ConvSpec::square(1, 0),
            true,
            rng,
        );
        Self {
            projection,
            in_channels,
            out_channels,
        }
    }

    /// Projects `ait` to `out_channels` and resamples to `(height, width)`.
    pub fn forward(&self, tape: &mut Tape, p: &ParamVars, ait: Var, height: usize, width: usize) -> Result<Var> {
        expect_channels(tape, ait, self.in_channels, "top_down_projection")?;
        let y = self.projection.forward(tape, p, ait)?;
        let (_, _, h, w) = tape.value(y).dims4("top_down_projection")?;
        if (h, w) == (height, width) {
            return Ok(y);
        }
        tape.upsample_nearest(y, height, width)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.projection.param_ids()
    }
}
