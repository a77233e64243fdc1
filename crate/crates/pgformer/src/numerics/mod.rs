//! Dense-tensor algebra with reverse-mode differentiation and Adam.
//!
//! Everything is 64-bit and deterministic: reductions run in a fixed order,
//! so a fixed seed reproduces results bit-identically on the same platform.
//! Tensors are plain immutable values; a [`Tape`] records operations for one
//! forward pass and replays them in reverse to accumulate gradients into a
//! [`ParamStore`].

mod adam;
pub mod checkpoint;
mod params;
mod tape;
mod tensor;

pub use adam::Adam;
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
