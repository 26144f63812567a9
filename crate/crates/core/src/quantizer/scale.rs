use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{clip, clip_i64, round_half_up_i64, Tensor};
use crate::refmodel::Mat;

/// Scale returned for an all-zero tensor.
pub const DEGENERATE_SCALE: f64 = 1.0 / (1u64 << 20) as f64;

/// How a floating-point scale becomes a power-of-two exponent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    Nearest,
    Adaptive,
}

/// `2^a` as `f64`.
pub fn pow2(a: i32) -> f64 {
    2f64.powi(a)
}

/// Symmetric min-max scale `2·max|x| / (2^b − 1)`.
pub fn minmax_scale(x: &Tensor, bits: u32) -> f64 {
    minmax_scale_slice(&x.to_f64(), bits)
}

pub(crate) fn minmax_scale_slice(x: &[f64], bits: u32) -> f64 {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    scale_from_max(m, bits)
}

pub(crate) fn scale_from_max(max_abs: f64, bits: u32) -> f64 {
    if max_abs == 0.0 {
        DEGENERATE_SCALE
    } else {
        2.0 * max_abs / (pow2(bits as i32) - 1.0)
    }
}

/// `round_half_up(log2 s)`.
pub fn nearest_pot(s: f64) -> Result<i32> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::InvalidArgument(format!("scale must be positive and finite, got {s}")));
    }
    Ok((s.log2() + 0.5).floor() as i32)
}

/// Quantize then dequantize one value at exponent `a`.
#[inline]
pub fn quant_dequant(v: f64, a: i32, bits: u32, signed: bool) -> f64 {
    clip_i64(round_half_up_i64(v * pow2(-a)), bits, signed) as f64 * pow2(a)
}

/// Integer code of `v` at exponent `a`.
#[inline]
pub fn quant_code(v: f64, a: i32, bits: u32, signed: bool) -> i32 {
    clip(round_half_up_i64(v * pow2(-a)), bits, signed)
}

/// Squared L2 quantization error of `xs` at exponent `a`.
pub(crate) fn sq_error(xs: &[f64], a: i32, bits: u32, signed: bool) -> f64 {
    xs.iter().map(|&v| (v - quant_dequant(v, a, bits, signed)).powi(2)).sum()
}

/// L2 perturbation `‖x − deq(quant(x, 2^a))‖₂`.
pub fn perturbation(x: &Tensor, a: i32, bits: u32, signed: bool) -> f64 {
    sq_error(&x.to_f64(), a, bits, signed).sqrt()
}

/// `{floor−1, floor, ceil, ceil+1}` of `log2 s`, deduplicated and sorted.
pub fn candidate_exponents(s: f64) -> Vec<i32> {
    let l = s.log2();
    let (f, c) = (l.floor() as i32, l.ceil() as i32);
    let mut v = vec![f - 1, f, c, c + 1];
    v.dedup();
    v
}

/// Minimum-error exponent with the pinned tie-break: closer to `log2 s`,
/// then smaller.
pub(crate) fn argmin_exponent(s: f64, cands: &[i32], mut err: impl FnMut(i32) -> f64) -> i32 {
    let l = s.log2();
    let mut best: Option<(f64, f64, i32)> = None;
    for &a in cands {
        let key = (err(a), (a as f64 - l).abs(), a);
        let better = match best {
            None => true,
            Some(b) => key.0 < b.0 || (key.0 == b.0 && (key.1 < b.1 || (key.1 == b.1 && key.2 < b.2))),
        };
        if better {
            best = Some(key);
        }
    }
    best.map(|b| b.2).expect("candidate set is never empty")
}

pub(crate) fn act_exponent_slice(xs: &[f64], bits: u32, signed: bool, mode: Rounding) -> i32 {
    let s = minmax_scale_slice(xs, bits);
    match mode {
        Rounding::Nearest => nearest_pot(s).expect("minmax scale is positive"),
        Rounding::Adaptive => argmin_exponent(s, &candidate_exponents(s), |a| sq_error(xs, a, bits, signed)),
    }
}

/// Activation exponent minimizing the L2 perturbation among the four
/// candidates around the min-max scale (signed codes).
pub fn adaptive_pot_round_act(x: &Tensor, bits: u32) -> Result<i32> {
    check_bits(bits)?;
    if x.is_empty() {
        return Err(Error::InvalidArgument("empty tensor".into()));
    }
    Ok(act_exponent_slice(&x.to_f64(), bits, true, Rounding::Adaptive))
}

/// Per-output-feature weight exponents. The adaptive objective is
/// `‖X·w_j − X·deq(quant(w_j))‖₂`, evaluated through the Gram matrix `XᵀX`.
pub(crate) fn weight_exponents(gram: &Mat, w: &Mat, bits: u32, mode: Rounding) -> Vec<i32> {
    (0..w.cols)
        .map(|j| {
            let col: Vec<f64> = (0..w.rows).map(|i| w.at(i, j)).collect();
            let s = minmax_scale_slice(&col, bits);
            match mode {
                Rounding::Nearest => nearest_pot(s).expect("minmax scale is positive"),
                Rounding::Adaptive => argmin_exponent(s, &candidate_exponents(s), |a| {
                    let d: Vec<f64> = col.iter().map(|&v| v - quant_dequant(v, a, bits, true)).collect();
                    quad_form(gram, &d)
                }),
            }
        })
        .collect()
}

pub(crate) fn quad_form(g: &Mat, d: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (i, &di) in d.iter().enumerate() {
        if di == 0.0 {
            continue;
        }
        let row = g.row(i);
        acc += di * row.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
    }
    acc.max(0.0)
}

/// Output perturbation `‖XW − X·deq(quant(W))‖₂` with per-column exponents.
pub fn weight_output_perturbation(x: &Tensor, w: &Tensor, exps: &[i32], bits: u32) -> Result<f64> {
    let (xm, wm) = (to_mat(x)?, to_mat(w)?);
    if xm.cols != wm.rows || exps.len() != wm.cols {
        return Err(Error::Shape(format!(
            "x {:?}, w {:?}, {} exponents",
            x.shape(),
            w.shape(),
            exps.len()
        )));
    }
    let mut dq = wm.clone();
    for i in 0..wm.rows {
        for j in 0..wm.cols {
            dq.data[i * wm.cols + j] = quant_dequant(wm.at(i, j), exps[j], bits, true);
        }
    }
    let (a, b) = (xm.matmul(&wm), xm.matmul(&dq));
    Ok(a.data.iter().zip(&b.data).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt())
}

/// Adaptive per-feature weight exponents for `w` (in × out) given
/// calibration inputs `x_cal` (rows × in).
pub fn adaptive_pot_round_weight(x_cal: &Tensor, w: &Tensor, bits: u32) -> Result<Vec<i32>> {
    check_bits(bits)?;
    let (xm, wm) = (to_mat(x_cal)?, to_mat(w)?);
    if xm.cols != wm.rows {
        return Err(Error::Shape(format!("x_cal {:?} vs w {:?}", x_cal.shape(), w.shape())));
    }
    Ok(weight_exponents(&xm.t_matmul(&xm), &wm, bits, Rounding::Adaptive))
}

/// Nearest-rounded per-feature weight exponents.
pub fn nearest_pot_weight(w: &Tensor, bits: u32) -> Result<Vec<i32>> {
    check_bits(bits)?;
    let wm = to_mat(w)?;
    Ok(weight_exponents(&Mat::zeros(wm.rows, wm.rows), &wm, bits, Rounding::Nearest))
}

pub(crate) fn to_mat(t: &Tensor) -> Result<Mat> {
    let (r, c) = t.dims2()?;
    Ok(Mat::from_vec(r, c, t.to_f64()))
}

pub(crate) fn check_bits(bits: u32) -> Result<()> {
    if !(2..=32).contains(&bits) {
        return Err(Error::InvalidArgument(format!("bit-width {bits} outside 2..=32")));
    }
    Ok(())
}
