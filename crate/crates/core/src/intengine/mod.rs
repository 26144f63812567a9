//! Integer-only inference: shift re-quantization, PS-MAC matmul, integer
//! LayerNorm, log-int Softmax and shift-based attention.

pub mod fixed;
mod forward;
mod kernels;
mod layernorm;
mod model;

pub use forward::{int_accuracy, int_forward, IntOutput};
pub use kernels::{
    i_exp, i_log2, int_softmax_lis, psmac_matmul, psmac_product, requant_value, requantize, shift_attention_v,
    PsMacConfig, PsMacMode, QuantizedTensor,
};
pub use layernorm::{int_layernorm, ln_stats, LnStats};
pub use model::{QNorm, QuantizedModel};
