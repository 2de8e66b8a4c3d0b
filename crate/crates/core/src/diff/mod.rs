//! Minimal reverse-mode automatic differentiation over dense `f32` tensors.

pub mod adam;
pub mod gradcheck;
mod kernels;
pub mod m2tw;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState, Moments};
pub use params::{Binding, ParamStore, Trainable};
pub use tape::{Gradients, SparseRows, Tape, Var, ZERO_ROW};
pub use tensor::Tensor;

pub(crate) use tape::softplus as softplus_f32;
