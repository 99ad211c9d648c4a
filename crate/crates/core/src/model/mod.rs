//! The DNC Transformer: encoder, decoder, loss, gradients and decoding.

mod attention;
mod config;
mod decode;
mod layers;
mod network;
mod params;

pub use attention::{attention, attention_weights, mha, AttentionMask, HeadParams, MaskKind};
pub use config::ModelConfig;
pub use decode::Decoding;
pub use network::{shift_right, DncModel};
pub use params::*;
