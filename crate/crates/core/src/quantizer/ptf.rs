use super::scale::{act_exponent_slice, argmin_exponent, check_bits, minmax_scale_slice, sq_error, to_mat, Rounding};
use super::spec::PtfSpec;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::refmodel::Mat;

/// Largest per-channel offset (2-bit shifter control).
pub const PTF_MAX_OFFSET: i32 = 3;

/// PTF calibration on stacked LayerNorm inputs `(rows, channels)`.
pub fn ptf_calibrate(x_cal: &Tensor, bits: u32) -> Result<PtfSpec> {
    check_bits(bits)?;
    let m = to_mat(x_cal)?;
    if m.rows == 0 || m.cols == 0 {
        return Err(Error::InvalidArgument("empty calibration trace".into()));
    }
    Ok(ptf_calibrate_mat(&m, bits, Rounding::Adaptive))
}

pub(crate) fn ptf_calibrate_mat(m: &Mat, bits: u32, mode: Rounding) -> PtfSpec {
    let cols: Vec<Vec<f64>> = (0..m.cols).map(|c| (0..m.rows).map(|r| m.at(r, c)).collect()).collect();
    let ranges: Vec<f64> = cols.iter().map(|c| c.iter().fold(0.0f64, |a, v| a.max(v.abs()))).collect();

    // The global exponent fits the least-spread channel, but never so finely
    // that the widest channel would clip beyond the largest offset.
    let live: Vec<usize> = (0..m.cols).filter(|&c| ranges[c] > 0.0).collect();
    let global = if live.is_empty() {
        act_exponent_slice(&cols[0], bits, true, mode)
    } else {
        let narrow = *live.iter().min_by(|&&a, &&b| ranges[a].total_cmp(&ranges[b]).then(a.cmp(&b))).unwrap();
        let wide = *live.iter().max_by(|&&a, &&b| ranges[a].total_cmp(&ranges[b]).then(b.cmp(&a))).unwrap();
        let fit_narrow = act_exponent_slice(&cols[narrow], bits, true, mode);
        let fit_wide = act_exponent_slice(&cols[wide], bits, true, mode);
        fit_narrow.max(fit_wide - PTF_MAX_OFFSET)
    };

    let offsets = cols
        .iter()
        .map(|col| {
            let s = minmax_scale_slice(col, bits);
            let cands: Vec<i32> = (0..=PTF_MAX_OFFSET).map(|o| global + o).collect();
            let a = match mode {
                Rounding::Adaptive => argmin_exponent(s, &cands, |a| sq_error(col, a, bits, true)),
                // Nearest: the offset closest to the channel's own nearest exponent.
                Rounding::Nearest => argmin_exponent(s, &cands, |_| 0.0),
            };
            a - global
        })
        .collect();
    PtfSpec { global, offsets, bits }
}

/// Squared-sum perturbation of a trace under PTF exponents.
pub fn ptf_perturbation(x: &Tensor, spec: &PtfSpec) -> Result<f64> {
    let m = to_mat(x)?;
    if m.cols != spec.offsets.len() {
        return Err(Error::Shape(format!("{} channels vs {} offsets", m.cols, spec.offsets.len())));
    }
    let e = spec.exponents();
    let mut acc = 0.0;
    for c in 0..m.cols {
        let col: Vec<f64> = (0..m.rows).map(|r| m.at(r, c)).collect();
        acc += sq_error(&col, e[c], spec.bits, true);
    }
    Ok(acc.sqrt())
}
