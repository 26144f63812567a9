use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::dataset::{to_pairs, Sample};
use super::forward::accuracy;
use super::model::{FloatModel, Weights};
use super::backward::loss_and_gradient;
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 6, lr: 0.05, batch_size: 32, momentum: 0.9, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

/// Mini-batch SGD with momentum. Fully deterministic for a given seed.
pub fn train(
    config: &ModelConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    tc: &TrainConfig,
) -> Result<(FloatModel, TrainReport)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let rng = Rng::new(tc.seed);
    let mut w = Weights::init(config, &mut rng.split(0));
    let mut order_rng = rng.split(1);
    let pairs = to_pairs(train_set);
    let val = to_pairs(val_set);
    let mut velocity = Weights::zeros(config);
    let mut epoch_losses = Vec::with_capacity(tc.epochs);
    let mut idx: Vec<usize> = (0..pairs.len()).collect();

    for epoch in 0..tc.epochs {
        order_rng.shuffle(&mut idx);
        let mut total = 0.0;
        for chunk in idx.chunks(tc.batch_size.max(1)) {
            let batch: Vec<_> = chunk.iter().map(|&i| pairs[i].clone()).collect();
            let (loss, g) = loss_and_gradient(config, &w, &batch);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            total += loss * batch.len() as f64;
            velocity.scale(tc.momentum);
            velocity.axpy(1.0, &g);
            w.axpy(-tc.lr, &velocity);
        }
        let mean = total / pairs.len() as f64;
        if !mean.is_finite() || !w.all_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        epoch_losses.push(mean);
    }

    let mut model = FloatModel::from_weights(config.clone(), &w)?;
    // Score the stored f32 parameters, not the f64 working copy.
    let stored = model.weights()?;
    let report = TrainReport {
        epoch_losses,
        train_accuracy: accuracy(config, &stored, &pairs),
        val_accuracy: accuracy(config, &stored, &val),
    };
    model.train_accuracy = Some(report.train_accuracy);
    model.val_accuracy = Some(report.val_accuracy);
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refmodel::{DatasetConfig, SyntheticDataset};

    fn small() -> (ModelConfig, Vec<Sample>) {
        let cfg = ModelConfig { layers: 1, heads: 2, dim: 8, tokens: 5, input_dim: 4, classes: 3, mlp_ratio: 2.0 };
        let d = SyntheticDataset::generate(&DatasetConfig {
            classes: 3,
            samples: 24,
            noise_sigma: 0.5,
            seed: 1,
            tokens: 5,
            dim: 4,
        })
        .unwrap();
        (cfg, d.samples)
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let (cfg, data) = small();
        let tc = TrainConfig { epochs: 2, lr: 0.0, seed: 3, ..Default::default() };
        let (m, _) = train(&cfg, &data, &data, &tc).unwrap();
        let init = FloatModel::from_weights(cfg.clone(), &Weights::init(&cfg, &mut Rng::new(3).split(0))).unwrap();
        assert_eq!(m.tensors, init.tensors);
    }

    #[test]
    fn same_seed_same_weights() {
        let (cfg, data) = small();
        let tc = TrainConfig { epochs: 2, seed: 4, ..Default::default() };
        let (a, _) = train(&cfg, &data, &data, &tc).unwrap();
        let (b, _) = train(&cfg, &data, &data, &tc).unwrap();
        assert_eq!(a.tensors, b.tensors);
    }

    #[test]
    fn absurd_learning_rate_reports_divergence() {
        let (cfg, data) = small();
        let tc = TrainConfig { epochs: 5, lr: 1e300, seed: 4, ..Default::default() };
        assert!(matches!(train(&cfg, &data, &data, &tc), Err(Error::Diverged { .. })));
    }
}
