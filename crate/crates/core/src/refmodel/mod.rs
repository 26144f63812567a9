//! Floating-point tiny ViT: the quantization target and the ground truth.
//!
//! Parameters live as `f32` [`Tensor`](crate::numerics::Tensor)s in a
//! [`FloatModel`]; all arithmetic runs on an `f64` copy ([`Weights`]) so that
//! finite-difference Hessian products are not drowned in `f32` noise.

mod backward;
mod checkpoint;
mod config;
mod dataset;
mod forward;
mod mat;
mod model;
mod train;

pub use backward::{gradient, gradient_weights, loss_and_gradient};
pub use checkpoint::{load_checkpoint, save_checkpoint, ManifestEntry};
pub use config::ModelConfig;
pub use dataset::{to_pairs, DatasetConfig, Sample, SyntheticDataset};
pub(crate) use checkpoint::{ckpt_err, read_manifest_blobs, write_manifest_blobs};


pub use forward::{
    accuracy, forward, forward_weights, gelu_tanh, layer_norm_row, loss, points, ActivationTrace,
    ForwardCache, LN_EPS,
};
pub use mat::Mat;
pub use model::{Block, FloatModel, Linear, Norm, Weights};
pub use train::{train, TrainConfig, TrainReport};
