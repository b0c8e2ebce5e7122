//! Numerical core: tensors, the fixed layer set, reverse-mode gradients, Adam.

pub mod batching;
pub mod checkpoint;
pub mod gradcheck;
pub mod layer;
pub mod linalg;
pub mod network;
pub mod ops;
pub mod params;
#[allow(clippy::module_inception)]
mod tensor;

pub use layer::{Activation, LayerKind, LayerSpec};
pub use network::{Network, Tape};
pub use params::{Param, ParameterSet};
pub use tensor::Tensor;
