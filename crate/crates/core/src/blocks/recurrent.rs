use rand::Rng;

use super::{expect_channels, Conv, RESIDUAL_INIT_SCALE};
use crate::error::{Error, Result};
use crate::params::{ParamStore, ParamVars};
use crate::tensor::{ConvSpec, Tape, Var};

/// Iterated shared-weight refinement `z <- relu(conv(z)) + z0`.
///
/// One weight set serves every iteration, so its gradient is the sum of the
/// per-iteration contributions.
#[derive(Debug, Clone)]
pub struct RecurrentBlock {
    pub conv: Conv,
    pub channels: usize,
    pub iterations: usize,
}

impl RecurrentBlock {
    pub const DEFAULT_ITERATIONS: usize = 3;

    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        iterations: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if iterations < 1 {
            return Err(Error::Config(format!("{name}: recurrent iterations must be at least 1")));
        }
        let conv = Conv::new(store, &format!("{name}.conv"), channels, channels, ConvSpec::same(3), true, rng)
            .damped(store, RESIDUAL_INIT_SCALE);
        Ok(Self {
            conv,
            channels,
            iterations,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &ParamVars, z0: Var) -> Result<Var> {
        self.forward_iterations(tape, p, z0, self.iterations)
    }

    /// Runs a specific number of iterations with the same weights.
    pub fn forward_iterations(&self, tape: &mut Tape, p: &ParamVars, z0: Var, iterations: usize) -> Result<Var> {
        if iterations < 1 {
            return Err(Error::Config("recurrent iterations must be at least 1".into()));
        }
        expect_channels(tape, z0, self.channels, "recurrent_block")?;
        let mut z = z0;
        for _ in 0..iterations {
            let fz = self.conv.forward(tape, p, z)?;
            let fz = tape.relu(fz);
            z = tape.add(fz, z0)?;
        }
        Ok(z)
    }
}
