use super::fixed::{IEXP_A, IEXP_B, IEXP_C, IEXP_LN2, Q16_FRAC};
use crate::error::{Error, Result};
use crate::numerics::{clip, shift_round_i64, IntTensor};
use crate::quantizer::QuantSpec;

/// Integer codes plus the spec that gives them meaning.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTensor {
    pub codes: IntTensor,
    pub spec: QuantSpec,
    pub name: String,
}

/// Shift-based re-quantization of one accumulator value.
#[inline]
pub fn requant_value(acc: i64, shift: i32, bits: u32) -> i32 {
    clip(shift_round_i64(acc, shift), bits, true)
}

/// `clip(shift_round(acc, α_x + α_w − α_y))` element-wise.
pub fn requantize(acc: &IntTensor, alpha_x: i32, alpha_w: i32, alpha_y: i32, bits: u32) -> Result<IntTensor> {
    let k = alpha_x + alpha_w - alpha_y;
    if k > 31 {
        return Err(Error::Overflow(format!("requantize left shift {k}")));
    }
    let data = acc.data().iter().map(|&a| requant_value(a as i64, k, bits)).collect();
    IntTensor::new(acc.shape().to_vec(), data, bits, true)
}

/// Precision-scalable MAC operating mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PsMacMode {
    /// One 8-bit × 8-bit product per cycle via nibble decomposition.
    One8,
    /// Two 4-bit × 8-bit products per cycle.
    Two4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PsMacConfig {
    /// Nibble width `m`.
    pub split: u32,
    pub mode: PsMacMode,
}

impl PsMacConfig {
    pub fn for_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(Self { split: 4, mode: PsMacMode::One8 }),
            4 => Ok(Self { split: 4, mode: PsMacMode::Two4 }),
            b => Err(Error::InvalidArgument(format!("PS-MAC supports 4 or 8-bit weights, not {b}"))),
        }
    }
}

/// `(W^H · A) · 2^m + W^L · A` with signed MSBs and unsigned LSBs.
#[inline]
pub fn psmac_product(w: i32, a: i32, m: u32) -> i32 {
    let hi = w >> m;
    let lo = w & ((1 << m) - 1);
    ((hi * a) << m) + lo * a
}

/// Integer matmul `(N, K) × (K, P)` on the PS-MAC datapath.
pub fn psmac_matmul(a: &QuantizedTensor, w: &QuantizedTensor, cfg: PsMacConfig) -> Result<IntTensor> {
    let (n, k) = a.codes.dims2()?;
    let (k2, p) = w.codes.dims2()?;
    if k != k2 {
        return Err(Error::Shape(format!("psmac ({n}, {k}) x ({k2}, {p})")));
    }
    if a.codes.bits() > 8 || cfg.split * 2 != 8 {
        return Err(Error::InvalidArgument("PS-MAC takes 8-bit activations and m = 4".into()));
    }
    let wb = w.codes.bits();
    let ok = matches!((cfg.mode, wb), (PsMacMode::One8, 5..=8) | (PsMacMode::Two4, 2..=4));
    if !ok {
        return Err(Error::InvalidArgument(format!("{wb}-bit weights in {:?} mode", cfg.mode)));
    }
    let mut out = vec![0i32; n * p];
    psmac_matmul_raw(a.codes.data(), w.codes.data(), n, k, p, cfg, None, &mut out)?;
    IntTensor::new(vec![n, p], out, 32, true)
}

/// Raw PS-MAC kernel; `bias` is `(data, rows)`, one row broadcast or one per output row.
#[allow(clippy::too_many_arguments)]
pub(crate) fn psmac_matmul_raw(
    a: &[i32],
    w: &[i32],
    n: usize,
    k: usize,
    p: usize,
    cfg: PsMacConfig,
    bias: Option<(&[i64], usize)>,
    out: &mut [i32],
) -> Result<()> {
    let m = cfg.split;
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..p {
            let mut acc: i64 = bias.map_or(0, |(b, rows)| b[if rows == 1 { 0 } else { i } * p + j]);
            match cfg.mode {
                PsMacMode::One8 => {
                    for (kk, &av) in arow.iter().enumerate() {
                        acc += psmac_product(w[kk * p + j], av, m) as i64;
                    }
                }
                PsMacMode::Two4 => {
                    // Two weight nibbles share one PS-MAC per cycle.
                    let mut kk = 0;
                    while kk + 1 < k {
                        acc += (w[kk * p + j] * arow[kk] + w[(kk + 1) * p + j] * arow[kk + 1]) as i64;
                        kk += 2;
                    }
                    if kk < k {
                        acc += (w[kk * p + j] * arow[kk]) as i64;
                    }
                }
            }
            out[i * p + j] = i32::try_from(acc).map_err(|_| Error::Overflow(format!("accumulator {acc}")))?;
        }
    }
    Ok(())
}

/// Polynomial `exp` of a non-positive quantized input `x_q · 2^scale_exp`.
/// Returns `(L, z)` with value `L · 2^-16 · 2^-z`.
pub fn i_exp(x_q: i64, scale_exp: i32) -> Result<(i64, u32)> {
    if x_q > 0 {
        return Err(Error::InvalidArgument(format!("i_exp input {x_q} is positive")));
    }
    let x = shift_round_i64(x_q, scale_exp + Q16_FRAC);
    let z = (-x) / IEXP_LN2;
    let p = x + z * IEXP_LN2;
    let t = p + IEXP_B;
    let l = shift_round_i64(IEXP_A * shift_round_i64(t * t, -16), -16) + IEXP_C;
    Ok((l, z as u32))
}

/// Index of the highest set bit plus the bit below it.
pub fn i_log2(v: i64) -> Result<u32> {
    if v <= 0 {
        return Err(Error::InvalidArgument(format!("i_log2 of {v}")));
    }
    let i = 63 - v.leading_zeros();
    let next = if i == 0 { 0 } else { ((v >> (i - 1)) & 1) as u32 };
    Ok(i + next)
}

/// Log-int-softmax of one score row; codes in `[0, 2^bits − 1]`.
pub(crate) fn lis_row(row: &[i64], in_exp: i32, bits: u32) -> Vec<i32> {
    let top = (1i64 << bits) - 1;
    let max = row.iter().copied().max().unwrap_or(0);
    let e: Vec<i64> = row
        .iter()
        .map(|&s| {
            let (l, z) = i_exp(s - max, in_exp).expect("max-subtracted input is non-positive");
            shift_round_i64(l, -(z.min(62) as i32))
        })
        .collect();
    let sum: i64 = e.iter().sum();
    e.iter()
        .map(|&ek| {
            if ek == 0 {
                top as i32
            } else {
                // Rounded integer quotient, then log2 of it.
                let ratio = (2 * sum + ek) / (2 * ek);
                (i_log2(ratio).expect("ratio >= 1") as i64).min(top) as i32
            }
        })
        .collect()
}

/// Integer Softmax with log2 output over each row of a score matrix.
pub fn int_softmax_lis(rows: &IntTensor, in_exp: i32, bits: u32) -> Result<IntTensor> {
    let (n, c) = rows.dims2()?;
    let mut out = Vec::with_capacity(n * c);
    for r in 0..n {
        let row: Vec<i64> = rows.data()[r * c..(r + 1) * c].iter().map(|&v| v as i64).collect();
        out.extend(lis_row(&row, in_exp, bits));
    }
    IntTensor::new(vec![n, c], out, bits, false)
}

/// `Σ_k shift_round(V_Q[k], −M_Q[k])` per output element.
pub fn shift_attention_v(m_q: &IntTensor, v_q: &IntTensor) -> Result<IntTensor> {
    let (n, t) = m_q.dims2()?;
    let (t2, d) = v_q.dims2()?;
    if t != t2 {
        return Err(Error::Shape(format!("map ({n}, {t}) vs values ({t2}, {d})")));
    }
    let mut out = vec![0i32; n * d];
    shift_attention_raw(m_q.data(), v_q.data(), n, t, d, &mut out)?;
    IntTensor::new(vec![n, d], out, 32, true)
}

pub(crate) fn shift_attention_raw(m: &[i32], v: &[i32], n: usize, t: usize, d: usize, out: &mut [i32]) -> Result<()> {
    for i in 0..n {
        for j in 0..d {
            let mut acc: i64 = 0;
            for k in 0..t {
                acc += shift_round_i64(v[k * d + j] as i64, -m[i * t + k]);
            }
            out[i * d + j] = i32::try_from(acc).map_err(|_| Error::Overflow(format!("shift accumulator {acc}")))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{round_half_up_i64, Rng};
    use crate::quantizer::{iexp_mirror, log2_linear_nearest, lis_row_mirror};

    fn it(shape: Vec<usize>, d: Vec<i32>, bits: u32, signed: bool) -> IntTensor {
        IntTensor::new(shape, d, bits, signed).unwrap()
    }

    #[test]
    fn requantize_examples() {
        let acc = it(vec![1], vec![100], 32, true);
        assert_eq!(requantize(&acc, -2, -1, 0, 8).unwrap().data(), &[13]);
        let acc = it(vec![2], vec![300, -5], 32, true);
        assert_eq!(requantize(&acc, 1, -1, 0, 8).unwrap().data(), &[127, -5]);
    }

    #[test]
    fn requantize_matches_float_path() {
        let mut rng = Rng::new(21);
        for _ in 0..100_000 {
            let a = (rng.next_u64() % (1 << 24)) as i64 - (1 << 23);
            let (ax, aw, ay) = (rng.below(12) as i32 - 8, rng.below(12) as i32 - 8, rng.below(12) as i32 - 6);
            let got = requant_value(a, ax + aw - ay, 8);
            let f = round_half_up_i64(a as f64 * 2f64.powi(ax + aw) / 2f64.powi(ay));
            assert_eq!(got, clip(f, 8, true), "acc {a} exps {ax} {aw} {ay}");
        }
    }

    #[test]
    fn psmac_examples() {
        assert_eq!(psmac_product(127, 2, 4), 254);
        assert_eq!((127 >> 4, 127 & 15), (7, 15));
        assert_eq!(psmac_product(-1, 3, 4), -3);
        let q = |d: Vec<i32>, shape: Vec<usize>, bits| QuantizedTensor {
            codes: it(shape, d, bits, true),
            spec: QuantSpec::uniform(bits, 0),
            name: String::new(),
        };
        let a = q(vec![2, 5], vec![1, 2], 8);
        let w = q(vec![3, -2], vec![2, 1], 4);
        let out = psmac_matmul(&a, &w, PsMacConfig::for_bits(4).unwrap()).unwrap();
        assert_eq!(out.data(), &[-4]);
        assert!(psmac_matmul(&a, &q(vec![3, -2], vec![2, 1], 8), PsMacConfig::for_bits(4).unwrap()).is_err());
    }

    #[test]
    fn psmac_exhaustive_signed_bytes() {
        for w in -128..=127 {
            for a in -128..=127 {
                assert_eq!(psmac_product(w, a, 4), w * a);
            }
        }
    }

    #[test]
    fn i_exp_examples() {
        let v = |(l, z): (i64, u32)| l as f64 / 65536.0 * 2f64.powi(-(z as i32));
        assert!((v(i_exp(0, 0).unwrap()) - 1.0003).abs() < 2e-4);
        let ln2 = (std::f64::consts::LN_2 * 1024.0).round() as i64;
        let half = v(i_exp(-ln2, -10).unwrap());
        assert!((half - 0.5 * v(i_exp(0, 0).unwrap())).abs() < 1e-3);
        assert!(i_exp(1, 0).is_err());
    }

    #[test]
    fn i_exp_relative_error_sweep() {
        let mut worst = 0.0f64;
        for i in 0..=1000 {
            let x = -10.0 * i as f64 / 1000.0;
            let xq = (x * 4096.0).round() as i64;
            let (l, z) = i_exp(xq, -12).unwrap();
            let got = l as f64 / 65536.0 * 2f64.powi(-(z as i32));
            let want = (xq as f64 / 4096.0).exp();
            worst = worst.max((got - want).abs() / want);
        }
        assert!(worst <= 0.02, "worst relative error {worst}");
    }

    #[test]
    fn i_exp_agrees_with_value_domain_mirror() {
        let mut rng = Rng::new(5);
        for _ in 0..10_000 {
            let e = rng.below(16) as i32 - 14;
            let x = -((rng.next_u64() % (1 << 20)) as i64);
            let (l, z) = i_exp(x, e).unwrap();
            let int_val = shift_round_i64(l, -(z.min(62) as i32)) as f64 / 65536.0;
            assert_eq!(int_val, iexp_mirror(x as f64 * 2f64.powi(e)));
        }
    }

    #[test]
    fn i_log2_examples() {
        assert_eq!(i_log2(0b0011_1001).unwrap(), 6);
        assert_eq!(i_log2(1).unwrap(), 0);
        assert_eq!(i_log2(192).unwrap(), 8);
        assert!(i_log2(0).is_err());
    }

    #[test]
    fn i_log2_is_floor_or_ceil_and_linear_nearest() {
        for v in 1..=(1i64 << 16) {
            let got = i_log2(v).unwrap() as f64;
            let l = (v as f64).log2();
            assert!(got == l.floor() || got == l.ceil(), "v={v}");
            assert_eq!(got as i64, log2_linear_nearest(v as f64), "v={v}");
        }
    }

    #[test]
    fn softmax_examples() {
        let u = it(vec![1, 4], vec![3; 4], 32, true);
        assert_eq!(int_softmax_lis(&u, -4, 4).unwrap().data(), &[2, 2, 2, 2]);
        let d = it(vec![1, 3], vec![10_000, 0, 0], 32, true);
        assert_eq!(int_softmax_lis(&d, -4, 4).unwrap().data(), &[0, 15, 15]);
    }

    #[test]
    fn softmax_agrees_with_mirror() {
        let mut rng = Rng::new(8);
        for _ in 0..2000 {
            let e = rng.below(8) as i32 - 10;
            let row: Vec<i64> = (0..17).map(|_| (rng.normal() * 600.0) as i64).collect();
            let vals: Vec<f64> = row.iter().map(|&v| v as f64 * 2f64.powi(e)).collect();
            let want: Vec<i32> = lis_row_mirror(&vals, 4).into_iter().map(|c| c as i32).collect();
            assert_eq!(lis_row(&row, e, 4), want);
        }
    }

    #[test]
    fn shift_attention_examples() {
        let m = it(vec![1, 1], vec![2], 4, false);
        let v = it(vec![1, 1], vec![8], 8, true);
        assert_eq!(shift_attention_v(&m, &v).unwrap().data(), &[2]);
        let m = it(vec![1, 3], vec![0; 3], 4, false);
        let v = it(vec![3, 2], vec![1, 2, 3, 4, 5, 6], 8, true);
        assert_eq!(shift_attention_v(&m, &v).unwrap().data(), &[9, 12]);
    }

    #[test]
    fn shift_attention_within_rounding_of_float() {
        let mut rng = Rng::new(13);
        for _ in 0..1000 {
            let t = 1 + rng.below(20);
            let m: Vec<i32> = (0..t).map(|_| rng.below(16) as i32).collect();
            let v: Vec<i32> = (0..t).map(|_| rng.below(256) as i32 - 128).collect();
            let got = shift_attention_v(&it(vec![1, t], m.clone(), 4, false), &it(vec![t, 1], v.clone(), 8, true)).unwrap();
            let exact: f64 = m.iter().zip(&v).map(|(&mk, &vk)| vk as f64 * 2f64.powi(-mk)).sum();
            // Each term is off by at most half a unit.
            assert!((got.data()[0] as f64 - exact).abs() <= 0.5 * t as f64);
        }
    }
}
