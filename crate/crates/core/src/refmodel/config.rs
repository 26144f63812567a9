use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of the tiny ViT.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    /// Tokens per sample, class token included.
    pub tokens: usize,
    pub mlp_ratio: f64,
    pub classes: usize,
    /// Width of each pre-flattened input patch.
    pub input_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { layers: 2, heads: 2, dim: 32, tokens: 17, mlp_ratio: 2.0, classes: 4, input_dim: 16 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.layers < 1 {
            return bad("layers must be >= 1");
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad("dim must be divisible by heads");
        }
        if self.tokens < 2 {
            return bad("tokens must be >= 2 (class token plus patches)");
        }
        if self.classes < 2 || self.input_dim == 0 || self.hidden() == 0 {
            return bad("classes >= 2, input_dim > 0 and a non-empty MLP are required");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn hidden(&self) -> usize {
        (self.dim as f64 * self.mlp_ratio).round() as usize
    }

    /// Linear layers eligible for per-layer weight bit-widths, in order.
    pub fn weight_layers(&self) -> Vec<String> {
        let mut names = vec!["embed".to_string()];
        for l in 0..self.layers {
            for part in ["attn.q", "attn.k", "attn.v", "attn.o", "mlp.fc1", "mlp.fc2"] {
                names.push(format!("blocks.{l}.{part}"));
            }
        }
        names.push("head".to_string());
        names
    }

    /// `(in, out)` of every weight layer, aligned with [`Self::weight_layers`].
    pub fn weight_layer_dims(&self) -> Vec<(usize, usize)> {
        let (d, h) = (self.dim, self.hidden());
        let mut dims = vec![(self.input_dim, d)];
        for _ in 0..self.layers {
            dims.extend([(d, d), (d, d), (d, d), (d, d), (d, h), (h, d)]);
        }
        dims.push((d, self.classes));
        dims
    }
}
