//! The dual-stream area graph, its parameter budget and checkpoints.

pub mod checkpoint;
mod config;
mod model;
mod topology;

pub use config::{ModelConfig, Variant, MINI_PARAMETER_BUDGET};
pub use model::{build_model, build_with_topology, AreaNode, ForwardOutput, StreamGraph};
pub use topology::{AreaName, Topology};
