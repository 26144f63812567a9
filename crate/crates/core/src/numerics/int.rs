use crate::error::{Error, Result};

/// `floor(x + 0.5)` as a 32-bit integer.
pub fn round_half_up(x: f64) -> Result<i32> {
    let r = (x + 0.5).floor();
    if !r.is_finite() || r < i32::MIN as f64 || r > i32::MAX as f64 {
        return Err(Error::Overflow(format!("round_half_up({x}) exceeds 32 bits")));
    }
    Ok(r as i32)
}

/// `floor(x + 0.5)` saturated into `i64`; for internal wide paths.
pub fn round_half_up_i64(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Multiply by `2^k`. Negative `k` is an arithmetic right shift by `|k|`
/// after adding `2^(|k|-1)`, i.e. round-half-toward-+inf.
pub fn shift_round(x: i32, k: i32) -> Result<i32> {
    let wide = shift_round_i64(x as i64, k);
    if k > 0 && (k >= 32 || wide < i32::MIN as i64 || wide > i32::MAX as i64) {
        return Err(Error::Overflow(format!("{x} << {k} exceeds 32 bits")));
    }
    Ok(wide as i32)
}

/// Wide variant of [`shift_round`]; callers guarantee the left-shift range.
pub fn shift_round_i64(x: i64, k: i32) -> i64 {
    if k >= 0 {
        x << k
    } else {
        let s = (-k) as u32;
        if s >= 63 {
            // floor(x / 2^s + 0.5) is 0 for every representable x.
            return 0;
        }
        (x + (1i64 << (s - 1))) >> s
    }
}

/// Inclusive code range for a `bits`-wide integer.
pub fn code_range(bits: u32, signed: bool) -> (i64, i64) {
    debug_assert!((1..=32).contains(&bits));
    if signed {
        (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1)
    } else {
        (0, (1i64 << bits) - 1)
    }
}

/// Saturating clip into the code range. Unsigned 32-bit codes need
/// [`clip_i64`].
pub fn clip(v: i64, bits: u32, signed: bool) -> i32 {
    debug_assert!(signed || bits < 32);
    clip_i64(v, bits, signed) as i32
}

/// Saturating clip that keeps the full unsigned 32-bit range.
pub fn clip_i64(v: i64, bits: u32, signed: bool) -> i64 {
    let (lo, hi) = code_range(bits, signed);
    v.clamp(lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_half_up_examples() {
        assert_eq!(round_half_up(2.5).unwrap(), 3);
        assert_eq!(round_half_up(-2.5).unwrap(), -2);
        assert_eq!(round_half_up(2.379).unwrap(), 2);
        assert!(round_half_up(3.0e9).is_err());
    }

    #[test]
    fn shift_round_examples() {
        assert_eq!(shift_round(100, -3).unwrap(), 13);
        assert_eq!(shift_round(-100, -3).unwrap(), -12);
        assert_eq!(shift_round(5, 0).unwrap(), 5);
        assert_eq!(shift_round(3, 4).unwrap(), 48);
        assert!(shift_round(1 << 30, 2).is_err());
    }

    #[test]
    fn shift_round_matches_division_exhaustive_sample() {
        // Every k in [0, 12]; x over a strided sweep of [-2^20, 2^20] plus
        // the neighbourhood of every tie point.
        for k in 0..=12 {
            let div = (1i64 << k) as f64;
            let mut x = -(1i32 << 20);
            while x <= 1 << 20 {
                assert_eq!(
                    shift_round(x, -k).unwrap(),
                    round_half_up(x as f64 / div).unwrap(),
                    "x={x} k={k}"
                );
                x += 37;
            }
            for t in -64..64i32 {
                let base = t * (1 << k);
                for d in -2..=2 {
                    let x = base + (1 << k) / 2 + d;
                    assert_eq!(shift_round(x, -k).unwrap(), round_half_up(x as f64 / div).unwrap());
                }
            }
        }
    }

    #[test]
    fn clip_saturates() {
        assert_eq!(clip(300, 8, true), 127);
        assert_eq!(clip(-300, 8, true), -128);
        assert_eq!(clip(-3, 4, false), 0);
        assert_eq!(clip(99, 4, false), 15);
    }
}
