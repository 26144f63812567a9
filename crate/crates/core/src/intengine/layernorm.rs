use super::fixed::{LN_EPS_FX, LN_OUT_FRAC, LN_STAT_FRAC};
use super::kernels::QuantizedTensor;
use crate::error::{Error, Result};
use crate::numerics::{clip, shift_round_i64, IntTensor};
use crate::quantizer::{PtfSpec, QuantSpec};

/// Single-pass statistics of one shifted row, `frac` fraction bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LnStats {
    /// Mean, `Q(frac)`.
    pub mu: i64,
    /// Mean of squares, `Q(frac)`.
    pub m2: i64,
    /// `m2 − mu²`, `Q(2·frac)`, clamped at zero.
    pub var: i64,
}

/// `μ` and `σ² = μ_{x²} − μ²` from one pass of sums.
pub fn ln_stats(xhat: &[i64], frac: u32) -> LnStats {
    let n = xhat.len() as i64;
    let (mut s1, mut s2) = (0i64, 0i64);
    for &v in xhat {
        s1 += v;
        s2 += v * v;
    }
    let mu = (s1 << frac).div_euclid(n);
    let m2 = (s2 << frac).div_euclid(n);
    let var = ((m2 << frac) - mu * mu).max(0);
    LnStats { mu, m2, var }
}

fn isqrt(v: i64) -> i64 {
    if v <= 0 {
        return 0;
    }
    let mut x = (v as f64).sqrt() as i64;
    while x * x > v {
        x -= 1;
    }
    while (x + 1) * (x + 1) <= v {
        x += 1;
    }
    x
}

/// Integer LayerNorm of one row of PTF codes; outputs codes at `out_exps`.
pub(crate) fn int_ln_row(codes: &[i32], offsets: &[i32], gamma: &[i32], beta: &[i32], out_exps: &[i32], bits: u32, out: &mut Vec<i32>) {
    let xhat: Vec<i64> = codes.iter().zip(offsets).map(|(&c, &o)| (c as i64) << o).collect();
    let st = ln_stats(&xhat, LN_STAT_FRAC);
    let std = isqrt((st.var + LN_EPS_FX) << 16);
    let r = (1i64 << 32) / std;
    for (c, &x) in xhat.iter().enumerate() {
        let a = shift_round_i64(gamma[c] as i64 * r, -16);
        let y = ((x << LN_STAT_FRAC) - st.mu) * a + ((beta[c] as i64) << LN_STAT_FRAC);
        out.push(clip(shift_round_i64(y, -(LN_OUT_FRAC + out_exps[c])), bits, true));
    }
}

/// Integer LayerNorm: per-channel PTF shift, single-pass statistics,
/// fixed-point affine, shift re-quantization to `out`.
pub fn int_layernorm(x_q: &QuantizedTensor, ptf: &PtfSpec, gamma: &[i32], beta: &[i32], out: &QuantSpec) -> Result<QuantizedTensor> {
    let (n, c) = x_q.codes.dims2()?;
    if ptf.offsets.len() != c || gamma.len() != c || beta.len() != c {
        return Err(Error::Shape(format!("LN row width {c} vs ptf {} / gamma {} / beta {}", ptf.offsets.len(), gamma.len(), beta.len())));
    }
    let out_exps = match &out.smooth {
        Some(s) if !s.fused.is_empty() => s.fused.clone(),
        _ => out.scale.expand(c)?,
    };
    if out_exps.len() != c {
        return Err(Error::Shape(format!("{} output exponents for width {c}", out_exps.len())));
    }
    let mut codes = Vec::with_capacity(n * c);
    for r in 0..n {
        int_ln_row(&x_q.codes.data()[r * c..(r + 1) * c], &ptf.offsets, gamma, beta, &out_exps, out.bits, &mut codes);
    }
    Ok(QuantizedTensor {
        codes: IntTensor::new(vec![n, c], codes, out.bits, true)?,
        spec: out.clone(),
        name: format!("{}.ln", x_q.name),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intengine::fixed::to_q16;
    use crate::numerics::Rng;
    use crate::quantizer::{ln_row_mirror, pow2, QuantSpec};
    use crate::refmodel::{layer_norm_row, Norm};

    #[test]
    fn stats_example() {
        let st = ln_stats(&[1, 2, 3, 4], 4);
        assert_eq!(st.mu, 40);
        assert_eq!(st.m2, 120);
        assert_eq!(st.var, 20 * 16);
        assert_eq!(st.var as f64 / 256.0, 1.25);
    }

    fn qt(codes: Vec<i32>, c: usize) -> QuantizedTensor {
        let n = codes.len() / c;
        QuantizedTensor { codes: IntTensor::new(vec![n, c], codes, 8, true).unwrap(), spec: QuantSpec::uniform(8, 0), name: "x".into() }
    }

    #[test]
    fn constant_row_outputs_beta() {
        let ptf = PtfSpec { global: -2, offsets: vec![0, 1, 0, 2], bits: 8 };
        let x = qt(vec![8, 4, 8, 2], 4);
        let beta: Vec<i32> = [0.5, -0.25, 1.0, 0.0].iter().map(|&v| to_q16(v).unwrap()).collect();
        let out = QuantSpec::uniform(8, -3);
        let y = int_layernorm(&x, &ptf, &[65536; 4], &beta, &out).unwrap();
        assert_eq!(y.codes.data(), &[4, -2, 8, 0]);
    }

    #[test]
    fn matches_float_layernorm_within_two_steps() {
        let mut rng = Rng::new(17);
        let c = 32;
        for _ in 0..1000 {
            let global = rng.below(4) as i32 - 5;
            let offsets: Vec<i32> = (0..c).map(|_| rng.below(4) as i32).collect();
            let codes: Vec<i32> = (0..c).map(|_| rng.below(256) as i32 - 128).collect();
            let norm = Norm {
                g: (0..c).map(|_| rng.range_f64(0.5, 1.5)).collect(),
                b: (0..c).map(|_| rng.range_f64(-0.5, 0.5)).collect(),
            };
            let g: Vec<i32> = norm.g.iter().map(|&v| to_q16(v).unwrap()).collect();
            let b: Vec<i32> = norm.b.iter().map(|&v| to_q16(v).unwrap()).collect();
            let a_out = -5;
            let mut got = Vec::new();
            int_ln_row(&codes, &offsets, &g, &b, &vec![a_out; c], 8, &mut got);
            let x: Vec<f64> = codes.iter().zip(&offsets).map(|(&q, &o)| q as f64 * pow2(global + o)).collect();
            let mut y = vec![0.0; c];
            layer_norm_row(&x, &norm, &mut y);
            for (q, want) in got.iter().zip(&y) {
                let want_code = (want / pow2(a_out)).clamp(-128.0, 127.0);
                assert!((*q as f64 - want_code).abs() <= 2.0, "{q} vs {want_code}");
            }
        }
    }

    #[test]
    fn shift_invariance_under_common_offset() {
        let mut rng = Rng::new(18);
        let c = 16;
        for _ in 0..200 {
            let codes: Vec<i32> = (0..c).map(|_| rng.below(100) as i32 - 50).collect();
            let shifted: Vec<i32> = codes.iter().map(|v| v + 7).collect();
            let (mut a, mut b) = (Vec::new(), Vec::new());
            let g = vec![65536; c];
            int_ln_row(&codes, &vec![0; c], &g, &vec![0; c], &vec![-5; c], 8, &mut a);
            int_ln_row(&shifted, &vec![0; c], &g, &vec![0; c], &vec![-5; c], 8, &mut b);
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1));
        }
    }

    #[test]
    fn matches_value_domain_mirror() {
        let mut rng = Rng::new(19);
        let c = 24;
        for _ in 0..2000 {
            let global = rng.below(8) as i32 - 8;
            let offsets: Vec<i32> = (0..c).map(|_| rng.below(4) as i32).collect();
            let codes: Vec<i32> = (0..c).map(|_| rng.below(256) as i32 - 128).collect();
            let g: Vec<i32> = (0..c).map(|_| to_q16(rng.range_f64(-2.0, 2.0)).unwrap()).collect();
            let b: Vec<i32> = (0..c).map(|_| to_q16(rng.range_f64(-1.0, 1.0)).unwrap()).collect();
            let out_exps: Vec<i32> = (0..c).map(|_| rng.below(5) as i32 - 7).collect();
            let mut got = Vec::new();
            int_ln_row(&codes, &offsets, &g, &b, &out_exps, 8, &mut got);
            let x: Vec<f64> = codes.iter().zip(&offsets).map(|(&q, &o)| q as f64 * pow2(global + o)).collect();
            let gf: Vec<f64> = g.iter().map(|&v| v as f64).collect();
            let bf: Vec<f64> = b.iter().map(|&v| v as f64).collect();
            let want: Vec<i32> = ln_row_mirror(&x, global, &gf, &bf, &out_exps, 8).into_iter().map(|v| v as i32).collect();
            assert_eq!(got, want);
        }
    }
}
