use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Random horizontal flip followed by a random small rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationConfig {
    pub horizontal_flip_probability: f64,
    /// Rotation angle is drawn uniformly from `±rotation_range_degrees`.
    pub rotation_range_degrees: f64,
    /// `(U, V)` when channels are light-field views `r*V + c`. A mirrored
    /// light field also swaps view columns `c <-> V-1-c`; mirroring each
    /// view alone would reverse horizontal parallax.
    pub angular_grid: Option<(usize, usize)>,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            horizontal_flip_probability: 0.5,
            rotation_range_degrees: 15.0,
            angular_grid: None,
        }
    }
}

impl AugmentationConfig {
    pub fn none() -> Self {
        Self {
            horizontal_flip_probability: 0.0,
            rotation_range_degrees: 0.0,
            angular_grid: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.horizontal_flip_probability) {
            return Err(Error::Config(format!(
                "flip probability {} outside [0, 1]",
                self.horizontal_flip_probability
            )));
        }
        if !(self.rotation_range_degrees >= 0.0) {
            return Err(Error::Config(format!(
                "rotation range {} must be non-negative",
                self.rotation_range_degrees
            )));
        }
        if let Some((u, v)) = self.angular_grid {
            if u == 0 || v == 0 {
                return Err(Error::Config(format!("angular grid {u}x{v} must be positive")));
            }
        }
        Ok(())
    }

    /// Checks the angular grid against the sample channel count.
    pub fn validate_for(&self, channels: usize) -> Result<()> {
        self.validate()?;
        match self.angular_grid {
            Some((u, v)) if u * v != channels => Err(Error::Config(format!(
                "angular grid {u}x{v} does not match {channels} channels"
            ))),
            _ => Ok(()),
        }
    }
}

/// Applies a random flip and rotation to a `[C, H, W]` sample.
///
/// Exactly two values are drawn from `rng` per call, whatever the config,
/// so the random stream stays aligned across configurations.
pub fn augment<R: Rng + ?Sized>(sample: &Tensor, config: &AugmentationConfig, rng: &mut R) -> Tensor {
    let flip = rng.gen::<f64>() < config.horizontal_flip_probability;
    let u: f64 = rng.gen();
    let angle = (2.0 * u - 1.0) * config.rotation_range_degrees;
    let flipped;
    let src = if flip {
        flipped = match config.angular_grid {
            Some((_, v)) => swap_view_columns(&flip_horizontal(sample), v),
            None => flip_horizontal(sample),
        };
        &flipped
    } else {
        sample
    };
    if angle == 0.0 {
        src.clone()
    } else {
        rotate(src, angle)
    }
}

/// Reverses the width axis of `[C, H, W]`.
pub fn flip_horizontal(sample: &Tensor) -> Tensor {
    let w = *sample.shape().last().expect("non-empty shape");
    let mut out = sample.data().to_vec();
    for row in out.chunks_mut(w) {
        row.reverse();
    }
    Tensor::new(sample.shape().to_vec(), out).expect("same shape")
}

/// Reorders `[U*V, H, W]` views so channel `r*V + c` holds view
/// `(r, V-1-c)`.
pub fn swap_view_columns(sample: &Tensor, v: usize) -> Tensor {
    let shape = sample.shape();
    let plane = shape[1..].iter().product::<usize>();
    let mut out = Vec::with_capacity(sample.numel());
    for ch in 0..shape[0] {
        let src = ch - ch % v + (v - 1 - ch % v);
        out.extend_from_slice(&sample.data()[src * plane..(src + 1) * plane]);
    }
    Tensor::new(shape.to_vec(), out).expect("same shape")
}

/// Rotates every channel of `[C, H, W]` by `degrees` about the image
/// centre with bilinear resampling and zero fill.
///
/// Output pixel `(y, x)` reads the source at the centre-relative point
/// rotated by `degrees`, i.e. `sx = cx + cos*dx - sin*dy` and
/// `sy = cy + sin*dx + cos*dy`.
pub fn rotate(sample: &Tensor, degrees: f64) -> Tensor {
    let shape = sample.shape();
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = vec![0.0; sample.numel()];
    for (src, dst) in sample.data().chunks(h * w).zip(out.chunks_mut(h * w)) {
        for y in 0..h {
            let dy = y as f64 - cy;
            for x in 0..w {
                let dx = x as f64 - cx;
                let sx = cx + cos * dx - sin * dy;
                let sy = cy + sin * dx + cos * dy;
                dst[y * w + x] = bilinear(src, h, w, sy, sx);
            }
        }
    }
    Tensor::new(shape.to_vec(), out).expect("same shape")
}

fn bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let mut acc = 0.0;
    for (oy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (ox, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let weight = wy * wx;
            if weight == 0.0 {
                continue;
            }
            let (yy, xx) = (y0 + oy, x0 + ox);
            if yy >= 0.0 && xx >= 0.0 && yy < h as f64 && xx < w as f64 {
                acc += weight * plane[yy as usize * w + xx as usize];
            }
        }
    }
    acc
}
