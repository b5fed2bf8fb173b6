//! Minimal reverse-mode differentiation over row-major matrices.
//!
//! Only the operations the sentence autoencoder needs are provided. Several of
//! them (attention, cross entropy, layer norm) are fused so the tape stays
//! short.

mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::{ParamGrads, ParamId, ParamStore, Real, Tensor};
