//! Memory of past frames fused into backbone features by cross-attention.

mod attention;
mod bank;
mod encoder;

pub use attention::{attention_weights, cross_attend, CrossAttnParams, CrossAttnVars};
pub use bank::{encode_history, MemoryBank};
pub use encoder::{SurrogateEncoder, SURROGATE_ENCODER_SEED};
