use serde::{Deserialize, Serialize};

use crate::error::{DncError, Result};

/// Shape of the encoder-decoder Transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Dimension of the input embeddings.
    pub input_dim: usize,
    pub dim_model: usize,
    pub heads: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub ff_dim: usize,
    /// Largest cluster label K_max; the decoder vocabulary is `0..=K_max`
    /// with 0 the start token.
    pub max_clusters: usize,
    pub dropout: f64,
    /// Adds sinusoidal position encodings to the encoder input and the
    /// decoder label embeddings. Off by default so that the encoder is
    /// permutation-equivariant.
    #[serde(default)]
    pub positional_encoding: bool,
    /// Restricts source attention to the tri-diagonal band |i - j| <= 1.
    #[serde(default = "yes")]
    pub diagonal_local_attention: bool,
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    /// Full-size model: 4+4 blocks of width 256, 4 heads.
    pub fn full() -> Self {
        Self {
            input_dim: 32,
            dim_model: 256,
            heads: 4,
            encoder_blocks: 4,
            decoder_blocks: 4,
            ff_dim: 1024,
            max_clusters: 4,
            dropout: 0.1,
            positional_encoding: false,
            diagonal_local_attention: true,
        }
    }

    /// A shape that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            input_dim: 32,
            dim_model: 64,
            heads: 4,
            encoder_blocks: 2,
            decoder_blocks: 2,
            ff_dim: 128,
            max_clusters: 4,
            dropout: 0.1,
            positional_encoding: false,
            diagonal_local_attention: true,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim_model / self.heads
    }

    pub fn label_vocab(&self) -> usize {
        self.max_clusters + 1
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("dim_model", self.dim_model),
            ("heads", self.heads),
            ("encoder_blocks", self.encoder_blocks),
            ("decoder_blocks", self.decoder_blocks),
            ("ff_dim", self.ff_dim),
            ("max_clusters", self.max_clusters),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(DncError::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.dim_model % self.heads != 0 {
            return Err(DncError::InvalidArgument(format!(
                "dim_model {} is not a multiple of heads {}",
                self.dim_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(DncError::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}
