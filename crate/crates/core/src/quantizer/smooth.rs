use super::scale::{pow2, to_mat};
use super::spec::SmoothSpec;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::refmodel::Mat;

/// Per-channel migration exponents from channel maxima.
pub(crate) fn migration_exponents(x_max: &[f64], w_max: &[f64], beta_s: f64) -> Vec<i32> {
    x_max
        .iter()
        .zip(w_max)
        .map(|(&mx, &mw)| {
            if mx == 0.0 || mw == 0.0 {
                0
            } else {
                (beta_s * mx.log2() - (1.0 - beta_s) * mw.log2() + 0.5).floor() as i32
            }
        })
        .collect()
}

pub(crate) fn col_max_abs(m: &Mat) -> Vec<f64> {
    let mut out = vec![0.0f64; m.cols];
    for r in 0..m.rows {
        for (o, v) in out.iter_mut().zip(m.row(r)) {
            *o = o.max(v.abs());
        }
    }
    out
}

pub(crate) fn row_max_abs(m: &Mat) -> Vec<f64> {
    (0..m.rows).map(|r| m.row(r).iter().fold(0.0f64, |a, v| a.max(v.abs()))).collect()
}

/// Scales row `i` of `w` by `2^M_i`.
pub(crate) fn scale_rows(w: &mut Mat, m: &[i32]) {
    for (i, &e) in m.iter().enumerate() {
        let s = pow2(e);
        w.row_mut(i).iter_mut().for_each(|v| *v *= s);
    }
}

/// Divides column `i` of `x` by `2^M_i`.
pub(crate) fn unscale_cols(x: &mut Mat, m: &[i32]) {
    let inv: Vec<f64> = m.iter().map(|&e| pow2(-e)).collect();
    for r in 0..x.rows {
        x.row_mut(r).iter_mut().zip(&inv).for_each(|(v, s)| *v *= s);
    }
}

/// PoT-aware smoothing: returns the migration exponents and `Ŵ = W·2^M`.
pub fn pot_smooth(x_cal: &Tensor, w: &Tensor, beta_s: f64) -> Result<(SmoothSpec, Tensor)> {
    if !(0.0..=1.0).contains(&beta_s) {
        return Err(Error::InvalidArgument(format!("beta_s {beta_s} outside [0, 1]")));
    }
    let (xm, mut wm) = (to_mat(x_cal)?, to_mat(w)?);
    if xm.cols != wm.rows {
        return Err(Error::Shape(format!("x_cal {:?} vs w {:?}", x_cal.shape(), w.shape())));
    }
    let migration = migration_exponents(&col_max_abs(&xm), &row_max_abs(&wm), beta_s);
    scale_rows(&mut wm, &migration);
    let w_hat = Tensor::from_f64(w.shape().to_vec(), &wm.data)?;
    Ok((SmoothSpec { migration, beta_s, fused: Vec::new() }, w_hat))
}

/// `X̂ = X / 2^M`.
pub fn smooth_activations(x: &Tensor, spec: &SmoothSpec) -> Result<Tensor> {
    let mut m = to_mat(x)?;
    if m.cols != spec.migration.len() {
        return Err(Error::Shape(format!("{} channels vs {} migration exponents", m.cols, spec.migration.len())));
    }
    unscale_cols(&mut m, &spec.migration);
    Tensor::from_f64(x.shape().to_vec(), &m.data)
}

/// Fused per-channel activation exponents `M_i + α_x̂`.
pub fn fuse_migration(spec: &SmoothSpec, alpha_xhat: i32) -> Vec<i32> {
    spec.migration.iter().map(|m| m + alpha_xhat).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{matmul, Rng};
    use crate::quantizer::scale::quant_code;

    #[test]
    fn migration_examples() {
        assert_eq!(migration_exponents(&[8.0], &[2.0], 0.5), vec![1]);
        assert_eq!(migration_exponents(&[8.0], &[0.3], 1.0), vec![3]);
        assert_eq!(migration_exponents(&[0.0, 4.0], &[1.0, 0.0], 0.5), vec![0, 0]);
    }

    #[test]
    fn fuse_examples() {
        let s = SmoothSpec { migration: vec![1, 0], beta_s: 0.5, fused: vec![] };
        assert_eq!(fuse_migration(&s, -2), vec![-1, -2]);
        let z = SmoothSpec { migration: vec![0; 3], beta_s: 0.5, fused: vec![] };
        assert_eq!(fuse_migration(&z, 4), vec![4; 3]);
    }

    #[test]
    fn smoothing_preserves_product() {
        let mut rng = Rng::new(5);
        let xv: Vec<f64> = (0..6 * 4).map(|i| rng.normal() * if i % 4 == 0 { 20.0 } else { 1.0 }).collect();
        let wv: Vec<f64> = (0..4 * 3).map(|_| rng.normal()).collect();
        let x = Tensor::from_f64(vec![6, 4], &xv).unwrap();
        let w = Tensor::from_f64(vec![4, 3], &wv).unwrap();
        let (spec, w_hat) = pot_smooth(&x, &w, 0.5).unwrap();
        let x_hat = smooth_activations(&x, &spec).unwrap();
        let (a, b) = (matmul(&x, &w).unwrap(), matmul(&x_hat, &w_hat).unwrap());
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() <= 1e-6 * p.abs().max(1.0));
        }
    }

    #[test]
    fn fused_quantization_equals_two_step() {
        let mut rng = Rng::new(6);
        for _ in 0..50 {
            let spec = SmoothSpec {
                migration: (0..5).map(|_| rng.below(7) as i32 - 3).collect(),
                beta_s: 0.5,
                fused: vec![],
            };
            let a = rng.below(6) as i32 - 6;
            let fused = fuse_migration(&spec, a);
            for _ in 0..20 {
                for c in 0..5 {
                    let x = 8.0 * rng.normal();
                    let direct = quant_code(x, fused[c], 8, true);
                    let two_step = quant_code(x / pow2(spec.migration[c]), a, 8, true);
                    assert_eq!(direct, two_step);
                }
            }
        }
    }
}
