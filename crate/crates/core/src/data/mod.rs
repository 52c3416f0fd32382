//! Dataset ingestion and generation.

pub mod idx;
pub mod lightfield;
pub mod pgm;
pub mod synthetic;

pub use idx::{load_idx, write_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use lightfield::{load_lightfield, write_lightfield, LightFieldSample};
pub use synthetic::{generate_synthetic, PatternFamily, SyntheticSpec};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One `[C, H, W]` image with values in `[0, 1]` and its class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub pixels: Tensor,
    pub label: usize,
}

impl LabeledImage {
    pub fn new(pixels: Tensor, label: usize) -> Result<Self> {
        if pixels.rank() != 3 {
            return Err(Error::Config(format!("image must be [C, H, W], got {:?}", pixels.shape())));
        }
        if let Some(v) = pixels.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { pixels, label })
    }
}

/// Fails when any label is `>= classes`.
pub fn check_labels(samples: &[LabeledImage], classes: usize) -> Result<()> {
    match samples.iter().find(|s| s.label >= classes) {
        Some(s) => Err(Error::LabelOutOfRange {
            label: s.label,
            classes,
        }),
        None => Ok(()),
    }
}

/// Seeded 90/10 train/validation split.
pub fn split_train_val(mut samples: Vec<LabeledImage>, seed: u64) -> (Vec<LabeledImage>, Vec<LabeledImage>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples.shuffle(&mut rng);
    let cut = samples.len() - samples.len() / 10;
    let val = samples.split_off(cut);
    (samples, val)
}

/// Largest label plus one.
pub fn class_count(samples: &[LabeledImage]) -> usize {
    samples.iter().map(|s| s.label + 1).max().unwrap_or(0)
}

/// Stacks samples into a `[N, C, H, W]` batch.
pub fn stack(samples: &[&Tensor]) -> Result<Tensor> {
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(first.numel() * samples.len());
    for s in samples {
        if s.shape() != shape.as_slice() {
            return Err(crate::error::shape_err(
                "stack",
                "sample",
                format!("{:?} vs {shape:?}", s.shape()),
            ));
        }
        data.extend_from_slice(s.data());
    }
    let mut full = vec![samples.len()];
    full.extend(shape);
    Tensor::new(full, data)
}
