use super::expect_channels;
use crate::error::Result;
use crate::params::{ParamId, ParamStore, ParamVars};
use crate::tensor::{Tape, Tensor, Var};

/// Learnable per-channel multiplicative gain, initialised to one.
#[derive(Debug, Clone)]
pub struct Neuromodulation {
    pub gain: ParamId,
    pub channels: usize,
}

impl Neuromodulation {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::ones(&[channels]));
        Self { gain, channels }
    }

    pub fn forward(&self, tape: &mut Tape, p: &ParamVars, x: Var) -> Result<Var> {
        expect_channels(tape, x, self.channels, "neuromodulate")?;
        let g = tape.reshape(p.get(self.gain), &[1, self.channels, 1, 1])?;
        tape.mul(x, g)
    }
}
