//! Dense tensors, integer helpers and the deterministic RNG shared by every
//! other module.
//!
//! Rounding is pinned to round-half-toward-+inf (`floor(x + 0.5)`) everywhere
//! so that the integer engine and the float reference agree bit for bit.

mod int;
mod rng;
mod tensor;

pub use int::{clip, clip_i64, code_range, round_half_up, round_half_up_i64, shift_round, shift_round_i64};
pub use rng::Rng;
pub use tensor::{matmul, IntTensor, Tensor};
