use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refmodel::ModelConfig;

/// Allowed weight bit-widths.
pub const BIT_CHOICES: [u32; 2] = [4, 8];

/// Per-layer weight bit-widths and their derived metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BitConfig {
    pub layers: Vec<String>,
    pub bits: Vec<u32>,
    pub model_size_mb: f64,
    pub omega: Option<f64>,
    pub accuracy: Option<f64>,
}

/// `Σ params_i · bits_i / 8 / 2^20` over weight matrices.
pub fn model_size_mb(params: &[usize], bits: &[u32]) -> f64 {
    params.iter().zip(bits).map(|(&p, &b)| p as f64 * b as f64).sum::<f64>() / 8.0 / (1u64 << 20) as f64
}

/// Weight-matrix parameter counts in layer order.
pub fn layer_params(cfg: &ModelConfig) -> Vec<usize> {
    cfg.weight_layer_dims().iter().map(|(i, o)| i * o).collect()
}

impl BitConfig {
    pub fn new(cfg: &ModelConfig, bits: Vec<u32>) -> Result<Self> {
        let layers = cfg.weight_layers();
        if bits.len() != layers.len() {
            return Err(Error::Shape(format!("{} bit entries for {} layers", bits.len(), layers.len())));
        }
        if let Some(b) = bits.iter().find(|b| !BIT_CHOICES.contains(b)) {
            return Err(Error::InvalidArgument(format!("weight bit-width {b} not in {{4, 8}}")));
        }
        let model_size_mb = model_size_mb(&layer_params(cfg), &bits);
        Ok(Self { layers, bits, model_size_mb, omega: None, accuracy: None })
    }

    pub fn uniform(cfg: &ModelConfig, b: u32) -> Result<Self> {
        Self::new(cfg, vec![b; cfg.weight_layers().len()])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: BitConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        if c.layers.len() != c.bits.len() {
            return Err(Error::Config("bitconfig layers and bits differ in length".into()));
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_formula() {
        let cfg = ModelConfig::default();
        let c8 = BitConfig::uniform(&cfg, 8).unwrap();
        let c4 = BitConfig::uniform(&cfg, 4).unwrap();
        let params: usize = layer_params(&cfg).iter().sum();
        assert!((c8.model_size_mb - params as f64 / 1048576.0).abs() < 1e-15);
        assert!((c8.model_size_mb - 2.0 * c4.model_size_mb).abs() < 1e-15);
        assert!(BitConfig::new(&cfg, vec![6; 14]).is_err());
        assert!(BitConfig::new(&cfg, vec![8; 3]).is_err());
    }
}
