//! A dual-stream cortical image classifier built on a small reverse-mode
//! autodiff engine.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: `f64` tensors, convolution/pooling kernels and the [`Tape`].
//! - [`blocks`]: the cortical mechanisms (multi-scale V1, recurrent blocks,
//!   channel/spatial attention, lateral interaction, neuromodulation and the
//!   top-down prediction error).
//! - [`graph`]: the area graph with its single AIT to V1 feedback edge,
//!   parameter budgets and the checkpoint format.
//! - [`train`]: Adam, augmentation, the composite loss and the epoch loop.
//! - [`data`]: IDX and light-field loaders plus a procedural texture set.
//! - [`gradcheck`]: finite-difference verification of every block.

pub mod blocks;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use params::{ParamId, ParamStore, ParamVars};
pub use tensor::{ConvSpec, PoolKind, Tape, Tensor, Var};
