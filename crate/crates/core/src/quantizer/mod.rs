//! Offline quantization: PoT scales, PTF, smoothing, log2 codes, and the
//! fake-quant reference forward.

mod calibrate;
mod fakequant;
mod log2;
mod ptf;
mod scale;
mod smooth;
mod spec;
mod weights;

pub use calibrate::{calibrate, collect_trace, layer_input_point, ln_sites, prepare_weights, tensor_points, weight_row_factors, LnSite};
pub use fakequant::{fake_quant_forward, CodeTrace, FakeQuantModel};
pub(crate) use fakequant::argmax;
#[cfg(test)]
pub(crate) use fakequant::{iexp_mirror, lis_row_mirror, ln_row_mirror, log2_linear_nearest};
pub use log2::{log2_code, log2_quantize};
pub use ptf::{ptf_calibrate, ptf_perturbation, PTF_MAX_OFFSET};
pub use scale::{
    adaptive_pot_round_act, adaptive_pot_round_weight, candidate_exponents, minmax_scale, nearest_pot,
    nearest_pot_weight, perturbation, pow2, quant_code, quant_dequant, weight_output_perturbation, Rounding,
    DEGENERATE_SCALE,
};
pub use smooth::{fuse_migration, pot_smooth, smooth_activations};
pub use spec::{weight_key, PotScale, PtfSpec, QParams, QuantConfig, QuantKind, QuantSpec, SmoothSpec};
pub use weights::{QuantLayer, WeightBank};
