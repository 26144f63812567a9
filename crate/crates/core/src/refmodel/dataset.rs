use serde::{Deserialize, Serialize};

use super::mat::Mat;
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// Generator parameters for the synthetic classification task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub classes: usize,
    pub samples: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Tokens per sample including the (all-zero) class-token slot.
    pub tokens: usize,
    /// Patch width.
    pub dim: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { classes: 4, samples: 600, noise_sigma: 1.2, seed: 7, tokens: 17, dim: 16 }
    }
}

/// One labelled input of shape `(tokens, dim)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Tensor,
    pub label: usize,
}

impl Sample {
    pub fn as_mat(&self) -> Mat {
        let shape = self.x.shape();
        Mat::from_vec(shape[0], shape[1], self.x.to_f64())
    }
}

/// Gaussian clusters around per-class token-grid prototypes.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub config: DatasetConfig,
    /// One `(tokens - 1) × dim` prototype per class.
    pub means: Vec<Vec<f64>>,
    pub samples: Vec<Sample>,
}

impl SyntheticDataset {
    pub fn generate(config: &DatasetConfig) -> Result<Self> {
        if config.classes < 2 || config.tokens < 2 || config.dim == 0 {
            return Err(Error::Config("dataset needs >= 2 classes, >= 2 tokens, dim > 0".into()));
        }
        if !(config.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        let root = Rng::new(config.seed);
        let mut proto_rng = root.split(0);
        let patch = (config.tokens - 1) * config.dim;
        let means: Vec<Vec<f64>> =
            (0..config.classes).map(|_| (0..patch).map(|_| proto_rng.normal()).collect()).collect();
        let mut rng = root.split(1);
        let samples = (0..config.samples)
            .map(|i| {
                let label = i % config.classes;
                let mut data = vec![0.0f64; config.dim];
                data.extend(means[label].iter().map(|m| m + config.noise_sigma * rng.normal()));
                Ok(Sample { x: Tensor::from_f64(vec![config.tokens, config.dim], &data)?, label })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config: config.clone(), means, samples })
    }

    /// Same prototypes, fresh noise: a held-out split drawn from stream `stream`.
    pub fn resample(&self, samples: usize, stream: u64) -> Result<Vec<Sample>> {
        let c = &self.config;
        let mut rng = Rng::new(c.seed).split(stream + 2);
        (0..samples)
            .map(|i| {
                let label = i % c.classes;
                let mut data = vec![0.0f64; c.dim];
                data.extend(self.means[label].iter().map(|m| m + c.noise_sigma * rng.normal()));
                Ok(Sample { x: Tensor::from_f64(vec![c.tokens, c.dim], &data)?, label })
            })
            .collect()
    }

    /// Deterministic random subset (without replacement).
    pub fn subset(&self, count: usize, seed: u64) -> Vec<Sample> {
        let mut idx: Vec<usize> = (0..self.samples.len()).collect();
        Rng::new(seed).shuffle(&mut idx);
        idx.into_iter().take(count).map(|i| self.samples[i].clone()).collect()
    }
}

/// Samples as `(Mat, label)` pairs for the float forward and gradients.
pub fn to_pairs(samples: &[Sample]) -> Vec<(Mat, usize)> {
    samples.iter().map(|s| (s.as_mat(), s.label)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_labels_in_range() {
        let c = DatasetConfig { samples: 20, ..Default::default() };
        let a = SyntheticDataset::generate(&c).unwrap();
        let b = SyntheticDataset::generate(&c).unwrap();
        assert_eq!(a.samples, b.samples);
        assert!(a.samples.iter().all(|s| s.label < c.classes));
        assert!(a.samples[0].x.data()[..c.dim].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn resample_differs_from_training_noise() {
        let c = DatasetConfig { samples: 8, ..Default::default() };
        let a = SyntheticDataset::generate(&c).unwrap();
        let v = a.resample(8, 0).unwrap();
        assert_ne!(a.samples[0].x, v[0].x);
        assert_eq!(a.resample(8, 0).unwrap(), v);
    }
}
