//! Fixed-point formats shared by the integer engine and its float mirror.

use crate::error::{Error, Result};

/// Fraction bits of the Q16.16 format.
pub const Q16_FRAC: i32 = 16;
/// Fraction bits carried by the LayerNorm mean and second moment.
pub const LN_STAT_FRAC: u32 = 8;
/// LayerNorm variance guard, `2^-10` in the Q16 variance format.
pub const LN_EPS_FX: i64 = 64;
/// Fraction bits of the LayerNorm output accumulator (`16 + LN_STAT_FRAC`).
pub const LN_OUT_FRAC: i32 = Q16_FRAC + LN_STAT_FRAC as i32;

/// `ln 2` in Q16.
pub const IEXP_LN2: i64 = 45426;
/// Polynomial `L(p) = A(p + B)^2 + C` coefficients in Q16.
pub const IEXP_A: i64 = 23495;
pub const IEXP_B: i64 = 88670;
pub const IEXP_C: i64 = 22544;

/// Rounds a real to Q16.16.
pub fn to_q16(v: f64) -> Result<i32> {
    let r = (v * 65536.0 + 0.5).floor();
    if !r.is_finite() || r < i32::MIN as f64 || r > i32::MAX as f64 {
        return Err(Error::Overflow(format!("{v} does not fit Q16.16")));
    }
    Ok(r as i32)
}
