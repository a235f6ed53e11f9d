//! Minimal differentiable building blocks on top of `candle_core`.
//!
//! Parameters are created from seeded generators and kept in an ordered
//! [`ParamStore`] so checkpoints and optimizer state have a stable layout.

mod attention;
mod layers;
mod params;
mod rotary;

pub use attention::{causal_bias, key_padding_bias, MultiHeadAttention, TransformerBlock};
pub use layers::{
    dropout, length_mask, sinusoid_table, softplus, Dropout, FeedForward, LayerNorm, Linear,
};
pub use params::{tensor_le_bytes, Init, Param, ParamKind, ParamStore};
pub use rotary::{rotary_rotate, Rotary, RotaryTables};
