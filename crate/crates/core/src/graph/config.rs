use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::topology::AreaName;
use crate::blocks::RecurrentBlock;
use crate::error::{Error, Result};

/// Largest trainable-scalar count allowed for the mini variant.
pub const MINI_PARAMETER_BUDGET: usize = 12_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    Mini,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Mini => "mini",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "mini" => Ok(Variant::Mini),
            other => Err(Error::Config(format!("unknown variant `{other}` (expected full or mini)"))),
        }
    }
}

/// Declarative description of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub widths: BTreeMap<AreaName, usize>,
    pub cbam_reduction: usize,
    pub recurrent_iterations: usize,
    pub variant: Variant,
}

impl ModelConfig {
    pub fn new(variant: Variant, input_channels: usize, height: usize, width: usize, classes: usize) -> Self {
        use AreaName::*;
        let (widths, reduction): (&[(AreaName, usize)], usize) = match variant {
            Variant::Full => (
                &[
                    (V1, 24),
                    (V2Interstripe, 24),
                    (V2Thin, 24),
                    (V2Thick, 24),
                    (V4, 32),
                    (Pit, 32),
                    (Cit, 48),
                    (Ait, 48),
                    (Mt, 24),
                    (Mst, 24),
                    (Parietal, 24),
                ],
                4,
            ),
            // 4 does not divide the mini widths 6 and 9; 3 divides all CBAM sites.
            Variant::Mini => (
                &[
                    (V1, 6),
                    (V2Interstripe, 6),
                    (V2Thin, 6),
                    (V2Thick, 6),
                    (V4, 9),
                    (Pit, 9),
                    (Cit, 12),
                    (Ait, 12),
                    (Mt, 6),
                    (Mst, 6),
                    (Parietal, 6),
                ],
                3,
            ),
        };
        Self {
            input_channels,
            height,
            width,
            classes,
            widths: widths.iter().copied().collect(),
            cbam_reduction: reduction,
            recurrent_iterations: RecurrentBlock::DEFAULT_ITERATIONS,
            variant,
        }
    }

    /// Mini variant on 32x32 single-channel images.
    pub fn mini(classes: usize) -> Self {
        Self::new(Variant::Mini, 1, 32, 32, classes)
    }

    pub fn full(classes: usize) -> Self {
        Self::new(Variant::Full, 1, 32, 32, classes)
    }

    pub fn width(&self, area: AreaName) -> usize {
        self.widths.get(&area).copied().unwrap_or(0)
    }

    /// Input shape `[C, H, W]` of one sample.
    pub fn sample_shape(&self) -> [usize; 3] {
        [self.input_channels, self.height, self.width]
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.input_channels == 0 {
            return fail("input channels must be positive".into());
        }
        if self.height < 4 || self.width < 4 {
            return fail(format!(
                "input {}x{} too small for two 2x downsamplings (need at least 4x4)",
                self.height, self.width
            ));
        }
        if self.classes < 2 {
            return fail(format!("class count {} must be at least 2", self.classes));
        }
        for area in AreaName::ALL {
            if self.width(area) == 0 {
                return fail(format!("width of {area} must be positive"));
            }
        }
        if self.width(AreaName::V1) % 3 != 0 {
            return fail(format!("V1 width {} must be divisible by 3", self.width(AreaName::V1)));
        }
        for area in [AreaName::V1, AreaName::V4, AreaName::Mt] {
            if self.cbam_reduction == 0 || self.width(area) % self.cbam_reduction != 0 {
                return fail(format!(
                    "CBAM reduction {} must divide {area} width {}",
                    self.cbam_reduction,
                    self.width(area)
                ));
            }
        }
        if self.recurrent_iterations < 1 {
            return fail("recurrent iterations must be at least 1".into());
        }
        Ok(())
    }
}
