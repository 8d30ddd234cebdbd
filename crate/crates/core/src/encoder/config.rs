use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl EncoderConfig {
    /// Desk-scale defaults: 4 layers, 64-d model, 4 heads, 128-d FFN.
    pub fn desk(vocab_size: usize, seed: u64) -> Self {
        Self {
            layers: 4,
            d_model: 64,
            heads: 4,
            d_ff: 128,
            max_len: 32,
            vocab_size,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("layers", self.layers),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.d_model < 2 {
            return Err(Error::Config("d_model must be at least 2".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.max_len < 3 {
            return Err(Error::Config("max_len must be at least 3".into()));
        }
        Ok(())
    }

    pub fn head_hidden(&self) -> usize {
        (self.d_model / 2).max(1)
    }

    /// Closed-form parameter count of the unadapted model.
    pub fn parameter_count(&self) -> usize {
        let d = self.d_model;
        let per_layer = 4 * d * d + 2 * d * self.d_ff // weights
            + 4 * d // two layer norms
            + 4 * d + self.d_ff + d; // biases
        let h = self.head_hidden();
        self.vocab_size * d + self.layers * per_layer + (d * h + h + h + 1)
    }
}
