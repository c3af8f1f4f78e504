//! Dense tensors, reverse-mode differentiation, Adam, and seeded randomness.

mod adam;
mod params;
mod rng;
mod tape;
mod tensor;

#[cfg(test)]
mod gradcheck;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use params::{BoundParams, ParamId, ParamSet};
pub use rng::Rng;
pub use tape::{causal_attention, AttentionShape, Gradients, Tape, Var};
pub use tensor::{softmax, Tensor};

pub(crate) use tape::{gelu, layer_norm_rows};
