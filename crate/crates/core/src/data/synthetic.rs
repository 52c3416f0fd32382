//! Procedural ten-class texture set.
//!
//! Each sample is a pure function of `(seed, class, index)`: its generator
//! is a ChaCha stream selected by class and index, so no state is shared
//! between samples and output is identical on every platform.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LabeledImage;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Texture families, in label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternFamily {
    /// ~12 medium disks at random positions.
    Spots,
    /// Near-horizontal sinusoidal stripes (within ±8°).
    Stripes,
    /// Concentric rings around a random centre.
    Rings,
    /// Checkerboard with random cell size and small tilt.
    Checker,
    /// Smooth low-frequency value noise.
    NoiseBlotch,
    /// Medium disks over a linear intensity ramp.
    GradientSpots,
    /// Forty-odd small disks.
    DenseSpots,
    /// Two to four large disks.
    SparseSpots,
    /// Stripes at 45° ± 8°, either diagonal.
    DiagonalStripes,
    /// Dots on a jittered-phase hexagonal lattice.
    HexDots,
}

impl PatternFamily {
    pub const ALL: [PatternFamily; 10] = [
        PatternFamily::Spots,
        PatternFamily::Stripes,
        PatternFamily::Rings,
        PatternFamily::Checker,
        PatternFamily::NoiseBlotch,
        PatternFamily::GradientSpots,
        PatternFamily::DenseSpots,
        PatternFamily::SparseSpots,
        PatternFamily::DiagonalStripes,
        PatternFamily::HexDots,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PatternFamily::Spots => "spots",
            PatternFamily::Stripes => "stripes",
            PatternFamily::Rings => "rings",
            PatternFamily::Checker => "checker",
            PatternFamily::NoiseBlotch => "noise-blotch",
            PatternFamily::GradientSpots => "gradient-spots",
            PatternFamily::DenseSpots => "dense-spots",
            PatternFamily::SparseSpots => "sparse-spots",
            PatternFamily::DiagonalStripes => "diagonal-stripes",
            PatternFamily::HexDots => "hex-dots",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// One family per class, label = position.
    pub families: Vec<PatternFamily>,
    pub image_size: usize,
    pub samples_per_class: usize,
    /// Held-out samples per class, taken from the highest indices.
    /// Defaults to a tenth of `samples_per_class`, at least one.
    pub test_per_class: Option<usize>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(samples_per_class: usize, seed: u64) -> Self {
        Self {
            families: PatternFamily::ALL.to_vec(),
            image_size: 32,
            samples_per_class,
            test_per_class: None,
            seed,
        }
    }

    pub fn classes(&self) -> usize {
        self.families.len()
    }

    fn test_count(&self) -> usize {
        self.test_per_class
            .unwrap_or((self.samples_per_class / 10).max(1))
    }

    fn validate(&self) -> Result<()> {
        if self.samples_per_class < 2 {
            return Err(Error::Config("synthetic set needs at least 2 samples per class".into()));
        }
        if self.image_size < 8 {
            return Err(Error::Config(format!("image size {} below 8", self.image_size)));
        }
        for (i, f) in self.families.iter().enumerate() {
            if self.families[..i].contains(f) {
                return Err(Error::Config(format!("family {} listed twice", f.name())));
            }
        }
        if self.test_count() >= self.samples_per_class {
            return Err(Error::Config("test split leaves no training samples".into()));
        }
        Ok(())
    }

    /// Renders sample `index` of class `label`.
    pub fn render(&self, label: usize, index: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((label as u64) << 32) | index as u64);
        let n = self.image_size;
        let mut img = render_family(self.families[label], n, &mut rng);
        for v in &mut img {
            *v = (*v + rng.gen_range(-0.04..0.04)).clamp(0.0, 1.0);
        }
        Tensor::new(vec![1, n, n], img).expect("square image")
    }

    /// The first `count` training samples taken round-robin over classes:
    /// sample `i` is index `i / classes` of class `i % classes`. Small
    /// subsets stay as balanced as possible.
    pub fn interleaved(&self, count: usize) -> Result<Vec<LabeledImage>> {
        self.validate()?;
        let k = self.classes();
        let train_n = self.samples_per_class - self.test_count();
        if count > train_n * k {
            return Err(Error::Config(format!("{count} samples requested from {} training samples", train_n * k)));
        }
        Ok((0..count)
            .map(|i| LabeledImage {
                pixels: self.render(i % k, i / k),
                label: i % k,
            })
            .collect())
    }
}

/// Generates `(train, test)`. Within each class the last
/// `test_per_class` indices form the test split.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    spec.validate()?;
    let test_n = spec.test_count();
    let train_n = spec.samples_per_class - test_n;
    let mut train = Vec::with_capacity(train_n * spec.classes());
    let mut test = Vec::with_capacity(test_n * spec.classes());
    for label in 0..spec.classes() {
        for index in 0..spec.samples_per_class {
            let sample = LabeledImage {
                pixels: spec.render(label, index),
                label,
            };
            if index < train_n {
                train.push(sample);
            } else {
                test.push(sample);
            }
        }
    }
    Ok((train, test))
}

fn render_family(family: PatternFamily, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let size = n as f64;
    let mut img = vec![0.0; n * n];
    let coords = move |i: usize| ((i % n) as f64, (i / n) as f64);
    match family {
        PatternFamily::Spots => {
            let bg = rng.gen_range(0.05..0.2);
            img.fill(bg);
            let count = rng.gen_range(10..=14);
            draw_disks(&mut img, n, count, 1.8..2.8, rng);
        }
        PatternFamily::DenseSpots => {
            img.fill(rng.gen_range(0.05..0.2));
            let count = rng.gen_range(36..=50);
            draw_disks(&mut img, n, count, 0.9..1.4, rng);
        }
        PatternFamily::SparseSpots => {
            img.fill(rng.gen_range(0.05..0.2));
            let count = rng.gen_range(2..=4);
            draw_disks(&mut img, n, count, 4.0..6.0, rng);
        }
        PatternFamily::GradientSpots => {
            let theta = rng.gen_range(0.0..2.0 * PI);
            let (s, c) = theta.sin_cos();
            for (i, v) in img.iter_mut().enumerate() {
                let (x, y) = coords(i);
                let t = ((x - size / 2.0) * c + (y - size / 2.0) * s) / size + 0.5;
                *v = 0.55 * t.clamp(0.0, 1.0);
            }
            let count = rng.gen_range(8..=12);
            draw_disks(&mut img, n, count, 1.8..2.8, rng);
        }
        PatternFamily::Stripes | PatternFamily::DiagonalStripes => {
            let jitter = rng.gen_range(-8.0f64..8.0).to_radians();
            let theta = if family == PatternFamily::Stripes {
                jitter
            } else {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                sign * PI / 4.0 + jitter
            };
            let period = rng.gen_range(5.0..8.0);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let (s, c) = theta.sin_cos();
            for (i, v) in img.iter_mut().enumerate() {
                let (x, y) = coords(i);
                // theta = 0 varies along y only: horizontal stripes
                let u = -x * s + y * c;
                *v = 0.5 + 0.4 * (2.0 * PI * u / period + phase).sin();
            }
        }
        PatternFamily::Rings => {
            let cx = rng.gen_range(0.3 * size..0.7 * size);
            let cy = rng.gen_range(0.3 * size..0.7 * size);
            let period = rng.gen_range(5.0..8.0);
            let phase = rng.gen_range(0.0..2.0 * PI);
            for (i, v) in img.iter_mut().enumerate() {
                let (x, y) = coords(i);
                let r = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                *v = 0.5 + 0.4 * (2.0 * PI * r / period + phase).sin();
            }
        }
        PatternFamily::Checker => {
            let cell = rng.gen_range(3.0..6.0);
            let theta = rng.gen_range(-10.0f64..10.0).to_radians();
            let (ox, oy) = (rng.gen_range(0.0..2.0 * cell), rng.gen_range(0.0..2.0 * cell));
            let (s, c) = theta.sin_cos();
            for (i, v) in img.iter_mut().enumerate() {
                let (x, y) = coords(i);
                let u = (x * c + y * s + ox) / cell;
                let w = (-x * s + y * c + oy) / cell;
                let parity = (u.floor() as i64 + w.floor() as i64).rem_euclid(2);
                *v = if parity == 0 { 0.85 } else { 0.15 };
            }
        }
        PatternFamily::NoiseBlotch => {
            const GRID: usize = 5;
            let lattice: Vec<f64> = (0..GRID * GRID).map(|_| rng.gen_range(0.0..1.0)).collect();
            let step = (size - 1.0) / (GRID - 1) as f64;
            for (i, v) in img.iter_mut().enumerate() {
                let (x, y) = coords(i);
                let (gx, gy) = (x / step, y / step);
                let (x0, y0) = ((gx.floor() as usize).min(GRID - 2), (gy.floor() as usize).min(GRID - 2));
                let (fx, fy) = (smooth(gx - x0 as f64), smooth(gy - y0 as f64));
                let at = |xx: usize, yy: usize| lattice[yy * GRID + xx];
                let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
                let bot = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
                *v = top * (1.0 - fy) + bot * fy;
            }
        }
        PatternFamily::HexDots => {
            img.fill(rng.gen_range(0.05..0.2));
            let spacing = rng.gen_range(6.0..8.0);
            let radius = rng.gen_range(1.5..2.1);
            let theta = rng.gen_range(-10.0f64..10.0).to_radians();
            let (ox, oy) = (rng.gen_range(0.0..spacing), rng.gen_range(0.0..spacing));
            let (s, c) = theta.sin_cos();
            let row_h = spacing * 3f64.sqrt() / 2.0;
            let reach = (size * 1.5 / spacing) as i64 + 2;
            let mut centres = Vec::new();
            for r in -reach..=reach {
                for q in -reach..=reach {
                    let lx = q as f64 * spacing + if r.rem_euclid(2) == 1 { spacing / 2.0 } else { 0.0 };
                    let ly = r as f64 * row_h;
                    let x = lx * c - ly * s + ox;
                    let y = lx * s + ly * c + oy;
                    if x > -radius - 1.0 && y > -radius - 1.0 && x < size + radius && y < size + radius {
                        centres.push((x, y));
                    }
                }
            }
            for (x, y) in centres {
                paint_disk(&mut img, n, x, y, radius, 0.9);
            }
        }
    }
    img
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn draw_disks(img: &mut [f64], n: usize, count: usize, radius: std::ops::Range<f64>, rng: &mut ChaCha8Rng) {
    let size = n as f64;
    for _ in 0..count {
        let x = rng.gen_range(0.0..size);
        let y = rng.gen_range(0.0..size);
        let r = rng.gen_range(radius.clone());
        let level = rng.gen_range(0.8..1.0);
        paint_disk(img, n, x, y, r, level);
    }
}

/// Anti-aliased disk: full `level` inside `r - 0.5`, linear edge.
fn paint_disk(img: &mut [f64], n: usize, cx: f64, cy: f64, r: f64, level: f64) {
    let lo_y = (cy - r - 1.0).floor().max(0.0) as usize;
    let hi_y = ((cy + r + 1.0).ceil().max(0.0) as usize).min(n);
    let lo_x = (cx - r - 1.0).floor().max(0.0) as usize;
    let hi_x = ((cx + r + 1.0).ceil().max(0.0) as usize).min(n);
    for y in lo_y..hi_y {
        for x in lo_x..hi_x {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            let cover = (r + 0.5 - d).clamp(0.0, 1.0);
            if cover > 0.0 {
                let v = &mut img[y * n + x];
                *v = *v * (1.0 - cover) + level * cover;
            }
        }
    }
}
