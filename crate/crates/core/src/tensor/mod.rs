//! Dense `f64` tensors and a tape-based reverse-mode autodiff engine.

mod kernels;
mod tape;
mod value;

pub use kernels::{ConvSpec, PoolKind};
pub use tape::{broadcast_shape, ChannelReduction, OpKind, Tape, Var};
pub use value::Tensor;
