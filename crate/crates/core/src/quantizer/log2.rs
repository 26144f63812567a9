use super::scale::check_bits;
use crate::error::{Error, Result};
use crate::numerics::{IntTensor, Tensor};

/// Log2 code of one probability: `clip(round_half_up(−log2 m), 0, 2^b − 1)`;
/// zero saturates.
pub fn log2_code(m: f64, bits: u32) -> u32 {
    let max = (1u32 << bits) - 1;
    if m <= 0.0 {
        return max;
    }
    let c = (-m.log2() + 0.5).floor();
    c.clamp(0.0, max as f64) as u32
}

/// Log2-quantizes Softmax outputs in `[0, 1]`.
pub fn log2_quantize(m: &Tensor, bits: u32) -> Result<IntTensor> {
    check_bits(bits)?;
    if bits > 31 {
        return Err(Error::InvalidArgument("log2 codes limited to 31 bits".into()));
    }
    let mut codes = Vec::with_capacity(m.len());
    for &v in m.data() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidArgument(format!("log2_quantize input {v} outside [0, 1]")));
        }
        codes.push(log2_code(v as f64, bits) as i32);
    }
    IntTensor::new(m.shape().to_vec(), codes, bits, false)
}
