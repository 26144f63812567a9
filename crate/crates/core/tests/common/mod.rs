#![allow(dead_code)]

use potvit::quantizer::{calibrate, QParams, QuantConfig};
use potvit::refmodel::{train, DatasetConfig, FloatModel, ModelConfig, Sample, SyntheticDataset, TrainConfig};

pub struct Toy {
    pub model: FloatModel,
    pub data: SyntheticDataset,
    pub calib: Vec<Sample>,
    pub val: Vec<Sample>,
}

/// Trains the default toy model; `seed` varies both data and init.
pub fn toy(seed: u64) -> Toy {
    let data = SyntheticDataset::generate(&DatasetConfig { seed: 7 + seed, ..Default::default() }).unwrap();
    let val = data.resample(300, 0).unwrap();
    let calib = data.resample(100, 1).unwrap();
    let tc = TrainConfig { seed, ..Default::default() };
    let (model, _) = train(&ModelConfig::default(), &data.samples, &val, &tc).unwrap();
    Toy { model, data, calib, val }
}

pub fn qparams(t: &Toy, qc: &QuantConfig) -> QParams {
    calibrate(&t.model, &t.calib, qc).unwrap()
}

/// One-block variant of the toy model: eight weight layers.
pub fn toy_one_block(seed: u64) -> Toy {
    let data = SyntheticDataset::generate(&DatasetConfig { seed: 7 + seed, ..Default::default() }).unwrap();
    let val = data.resample(300, 0).unwrap();
    let calib = data.resample(100, 1).unwrap();
    let cfg = ModelConfig { layers: 1, ..Default::default() };
    let (model, _) = train(&cfg, &data.samples, &val, &TrainConfig { seed, ..Default::default() }).unwrap();
    Toy { model, data, calib, val }
}
