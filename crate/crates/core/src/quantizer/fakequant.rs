use std::collections::BTreeMap;

use rayon::prelude::*;

use super::calibrate::ln_sites;
use super::log2::log2_code;
use super::scale::{pow2, quant_dequant};
use super::spec::{QParams, QuantKind, QuantSpec};
use super::weights::WeightBank;
use crate::error::{Error, Result};
use crate::intengine::fixed::{
    to_q16, IEXP_A, IEXP_B, IEXP_C, IEXP_LN2, LN_EPS_FX, LN_OUT_FRAC, LN_STAT_FRAC,
};
use crate::numerics::{clip, clip_i64, round_half_up_i64, Tensor};
use crate::refmodel::{gelu_tanh, layer_norm_row, points, FloatModel, Mat, ModelConfig, Norm, Sample};

/// Integer codes recorded at every quantization point of one or more inputs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CodeTrace {
    pub points: BTreeMap<String, Vec<i64>>,
}

impl CodeTrace {
    pub fn push(&mut self, name: &str, codes: impl IntoIterator<Item = i64>) {
        self.points.entry(name.to_string()).or_default().extend(codes);
    }

    /// Points whose codes differ (or exist on one side only), with mismatch counts.
    pub fn mismatches(&self, other: &CodeTrace) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for name in self.points.keys().chain(other.points.keys()) {
            if out.iter().any(|(n, _): &(String, usize)| n == name) {
                continue;
            }
            match (self.points.get(name), other.points.get(name)) {
                (Some(a), Some(b)) if a.len() == b.len() => {
                    let n = a.iter().zip(b).filter(|(x, y)| x != y).count();
                    if n > 0 {
                        out.push((name.clone(), n));
                    }
                }
                (a, b) => out.push((name.clone(), a.map_or(0, Vec::len).max(b.map_or(0, Vec::len)))),
            }
        }
        out
    }

    pub fn total_codes(&self) -> usize {
        self.points.values().map(Vec::len).sum()
    }
}

/// Codes of dequantized values under per-column exponents.
fn codes_of(m: &Mat, exps: &[i32]) -> Vec<i64> {
    let mut out = Vec::with_capacity(m.data.len());
    for r in 0..m.rows {
        for (v, &e) in m.row(r).iter().zip(exps) {
            out.push((v * pow2(-e)).round() as i64);
        }
    }
    out
}

fn quant_tensor(m: &Mat, a: i32, bits: u32) -> Mat {
    Mat::from_vec(m.rows, m.cols, m.data.iter().map(|&v| quant_dequant(v, a, bits, true)).collect())
}

fn quant_cols(m: &Mat, exps: &[i32], bits: u32) -> Mat {
    let mut out = m.clone();
    for r in 0..m.rows {
        for (v, &e) in out.row_mut(r).iter_mut().zip(exps) {
            *v = quant_dequant(*v, e, bits, true);
        }
    }
    out
}

/// `round_half_up(v · 2^k) · 2^-k`: snaps a real onto the `2^-k` grid.
#[inline]
fn grid(v: f64, k: i32) -> f64 {
    round_half_up_i64(v * pow2(k)) as f64 * pow2(-k)
}

/// `floor(a / b)` for exactly representable integers, `b > 0`.
fn div_floor(a: f64, b: f64) -> f64 {
    let mut q = (a / b).floor();
    if q * b > a {
        q -= 1.0;
    } else if (q + 1.0) * b <= a {
        q += 1.0;
    }
    q
}

fn isqrt_f(v: f64) -> f64 {
    let mut s = v.sqrt().floor();
    while s * s > v {
        s -= 1.0;
    }
    while (s + 1.0) * (s + 1.0) <= v {
        s += 1.0;
    }
    s
}

/// Integer-faithful LayerNorm of one row of dequantized values. Returns
/// the codes at the per-channel output exponents.
pub(crate) fn ln_row_mirror(
    x: &[f64],
    global: i32,
    g_fx: &[f64],
    b_fx: &[f64],
    out_exps: &[i32],
    bits: u32,
) -> Vec<i64> {
    let n = x.len() as f64;
    let f = pow2(LN_STAT_FRAC as i32);
    let xh: Vec<f64> = x.iter().map(|v| v * pow2(-global)).collect();
    let s1: f64 = xh.iter().sum();
    let s2: f64 = xh.iter().map(|v| v * v).sum();
    let mu = div_floor(s1 * f, n);
    let m2 = div_floor(s2 * f, n);
    let var = (m2 * f - mu * mu).max(0.0);
    let std = isqrt_f((var + LN_EPS_FX as f64) * 65536.0);
    let r = div_floor(2f64.powi(32), std);
    xh.iter()
        .enumerate()
        .map(|(c, &v)| {
            let a = grid(g_fx[c] * r / 65536.0, 0);
            let y = (v * f - mu) * a + b_fx[c] * f;
            clip(round_half_up_i64(y * pow2(-(LN_OUT_FRAC + out_exps[c]))), bits, true) as i64
        })
        .collect()
}

/// Polynomial exponential of a non-positive real on the Q16 grid.
pub(crate) fn iexp_mirror(d: f64) -> f64 {
    let q = 65536.0;
    let x = grid(d, 16);
    let ln2 = IEXP_LN2 as f64 / q;
    let z = (-x / ln2).floor();
    let p = x + z * ln2;
    let t = p + IEXP_B as f64 / q;
    let sq = grid(t * t, 16);
    let l = grid(IEXP_A as f64 / q * sq, 16) + IEXP_C as f64 / q;
    if z > 200.0 {
        return 0.0;
    }
    grid(l * pow2(-(z as i32)), 16)
}

/// Nearest power of two in linear distance, as an exponent.
pub(crate) fn log2_linear_nearest(v: f64) -> i64 {
    let i = v.log2().floor();
    let i = if pow2(i as i32) > v { i - 1.0 } else { i };
    if v >= 1.5 * pow2(i as i32) {
        i as i64 + 1
    } else {
        i as i64
    }
}

/// Log2 attention codes of one score row (values, exact multiples of `2^e`).
pub(crate) fn lis_row_mirror(s: &[f64], bits: u32) -> Vec<i64> {
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|&v| iexp_mirror(v - max)).collect();
    let sum: f64 = e.iter().sum();
    let top = (1i64 << bits) - 1;
    e.iter()
        .map(|&ek| {
            if ek == 0.0 {
                top
            } else {
                let ratio = (sum / ek + 0.5).floor();
                log2_linear_nearest(ratio).clamp(0, top)
            }
        })
        .collect()
}

struct DeqLayer {
    w: Mat,
    bias: Mat,
    acc_exps: Vec<i32>,
}

impl DeqLayer {
    fn apply(&self, x: &Mat) -> Mat {
        let mut y = x.matmul(&self.w);
        for r in 0..y.rows {
            let b = self.bias.row(if self.bias.rows == 1 { 0 } else { r });
            y.row_mut(r).iter_mut().zip(b).for_each(|(v, b)| *v += b);
        }
        y
    }
}

struct LnParams {
    norm: Norm,
    g_fx: Vec<f64>,
    b_fx: Vec<f64>,
}

/// Quantize→dequantize simulation of the full integer pipeline.
pub struct FakeQuantModel {
    pub qp: QParams,
    pub bank: WeightBank,
    cfg: ModelConfig,
    layers: Vec<BTreeMap<u32, DeqLayer>>,
    lns: Vec<LnParams>,
}

impl FakeQuantModel {
    pub fn new(model: &FloatModel, qp: &QParams) -> Result<Self> {
        qp.validate()?;
        let bank = WeightBank::build(model, qp)?;
        let layers = bank
            .layers
            .iter()
            .map(|m| {
                m.iter()
                    .map(|(&b, l)| {
                        let acc_exps = (0..l.cols).map(|j| l.acc_exp(j)).collect();
                        (b, DeqLayer { w: l.dequant_weights(), bias: l.dequant_bias(), acc_exps })
                    })
                    .collect()
            })
            .collect();
        let w = model.weights()?;
        let mut norms: Vec<Norm> = Vec::new();
        for b in &w.blocks {
            norms.push(b.ln1.clone());
            norms.push(b.ln2.clone());
        }
        norms.push(w.lnf.clone());
        let lns = norms
            .into_iter()
            .map(|norm| {
                let fx = |v: &[f64]| v.iter().map(|&x| Ok(to_q16(x)? as f64)).collect::<Result<Vec<f64>>>();
                Ok(LnParams { g_fx: fx(&norm.g)?, b_fx: fx(&norm.b)?, norm })
            })
            .collect::<Result<_>>()?;
        Ok(Self { qp: qp.clone(), bank, cfg: model.config.clone(), layers, lns })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn layer(&self, idx: usize, bits: u32) -> Result<&DeqLayer> {
        self.layers[idx].get(&bits).ok_or_else(|| Error::MissingSpec(format!("weight layer {idx} at {bits} bits")))
    }

    /// LayerNorm at `site`; returns smoothed activation values `code · 2^α_x̂`.
    fn layer_norm(&self, site: usize, x: &Mat, input: &QuantSpec, output: &QuantSpec, rec: &mut Rec) -> Result<Mat> {
        let ab = self.qp.config.act_bits;
        let ptf = input.ptf.as_ref().ok_or_else(|| Error::MissingSpec("ptf spec".into()))?;
        let smooth = output.smooth.as_ref().ok_or_else(|| Error::MissingSpec("smoothing spec".into()))?;
        let a = output.scale.per_tensor()?;
        let p = &self.lns[site];
        let mut codes = Vec::with_capacity(x.data.len());
        for r in 0..x.rows {
            if self.qp.config.float_nonlinear {
                let mut y = vec![0.0; x.cols];
                layer_norm_row(x.row(r), &p.norm, &mut y);
                for (c, v) in y.iter().enumerate() {
                    let xh = v * pow2(-smooth.migration[c]);
                    codes.push(clip(round_half_up_i64(xh * pow2(-a)), ab, true) as i64);
                }
            } else {
                codes.extend(ln_row_mirror(x.row(r), ptf.global, &p.g_fx, &p.b_fx, &smooth.fused, ab));
            }
        }
        let out = Mat::from_vec(x.rows, x.cols, codes.iter().map(|&c| c as f64 * pow2(a)).collect());
        rec.push(output_name(self, site), codes);
        Ok(out)
    }

    /// Dequantized logits for one input `(tokens, input_dim)`.
    pub fn forward(&self, x: &Mat, bits: &[u32], trace: Option<&mut CodeTrace>) -> Result<Vec<f64>> {
        let cfg = &self.cfg;
        let qp = &self.qp;
        let qc = &qp.config;
        let ab = qc.act_bits;
        if bits.len() != self.layers.len() {
            return Err(Error::Shape(format!("{} bit entries for {} layers", bits.len(), self.layers.len())));
        }
        if x.rows != cfg.tokens || x.cols != cfg.input_dim {
            return Err(Error::Shape(format!("input ({}, {}) vs ({}, {})", x.rows, x.cols, cfg.tokens, cfg.input_dim)));
        }
        let mut rec = Rec(trace);
        let (n, hd) = (cfg.tokens, cfg.head_dim());
        let pt = |name: &str| -> Result<i32> { qp.get(name)?.scale.per_tensor() };

        let a_in = pt(points::INPUT)?;
        let xq = quant_tensor(x, a_in, ab);
        rec.push(points::INPUT, codes_of(&xq, &vec![a_in; x.cols]));

        let res_exps = |k: usize| -> Result<Vec<i32>> { qp.get(&points::res(k))?.scale.expand(cfg.dim) };
        let e0 = res_exps(0)?;
        let mut res = quant_cols(&self.layer(0, bits[0])?.apply(&xq), &e0, ab);
        rec.push(points::res(0), codes_of(&res, &e0));

        for l in 0..cfg.layers {
            let base = 1 + 6 * l;
            let h1 = self.layer_norm(2 * l, &res, qp.get(&points::res(2 * l))?, qp.get(&points::ln1_out(l))?, &mut rec)?;
            let mut qkv = Vec::with_capacity(3);
            for (i, name) in [points::q_out(l), points::k_out(l), points::v_out(l)].iter().enumerate() {
                let a = pt(name)?;
                let m = quant_tensor(&self.layer(base + i, bits[base + i])?.apply(&h1), a, ab);
                rec.push(name, codes_of(&m, &vec![a; cfg.dim]));
                qkv.push((m, a));
            }
            let (q, k, v) = (&qkv[0].0, &qkv[1].0, &qkv[2].0);
            let a_v = qkv[2].1;
            let map_spec = qp.get(&points::attn_map(l))?;
            let mut av = Mat::zeros(n, cfg.dim);
            for h in 0..cfg.heads {
                let (qh, kh, vh) = (q.col_slice(h * hd, hd), k.col_slice(h * hd, hd), v.col_slice(h * hd, hd));
                let s = qh.matmul_t(&kh);
                let out = self.attention_head(&s, &vh, a_v, map_spec, &mut rec, &points::attn_map(l))?;
                av.set_col_slice(h * hd, &out);
            }
            let a_a = pt(&points::attn_out(l))?;
            let av = quant_tensor(&av, a_a, ab);
            rec.push(points::attn_out(l), codes_of(&av, &vec![a_a; cfg.dim]));

            let e1 = res_exps(2 * l + 1)?;
            let mut sum = self.layer(base + 3, bits[base + 3])?.apply(&av);
            sum.add_assign(&res);
            res = quant_cols(&sum, &e1, ab);
            rec.push(points::res(2 * l + 1), codes_of(&res, &e1));

            let h2 = self.layer_norm(2 * l + 1, &res, qp.get(&points::res(2 * l + 1))?, qp.get(&points::ln2_out(l))?, &mut rec)?;
            let a_u = pt(&points::fc1_out(l))?;
            let u = quant_tensor(&self.layer(base + 4, bits[base + 4])?.apply(&h2), a_u, ab);
            rec.push(points::fc1_out(l), codes_of(&u, &vec![a_u; u.cols]));
            let a_g = pt(&points::gelu_out(l))?;
            let g = Mat::from_vec(u.rows, u.cols, u.data.iter().map(|&v| quant_dequant(gelu_tanh(v), a_g, ab, true)).collect());
            rec.push(points::gelu_out(l), codes_of(&g, &vec![a_g; g.cols]));

            let e2 = res_exps(2 * l + 2)?;
            let mut sum = self.layer(base + 5, bits[base + 5])?.apply(&g);
            sum.add_assign(&res);
            res = quant_cols(&sum, &e2, ab);
            rec.push(points::res(2 * l + 2), codes_of(&res, &e2));
        }

        let last = 2 * cfg.layers;
        let row0 = Mat::from_vec(1, cfg.dim, res.row(0).to_vec());
        let f = self.layer_norm(last, &row0, qp.get(&points::res(last))?, qp.get(points::LNF_OUT)?, &mut rec)?;
        let head = self.layer(1 + 6 * cfg.layers, bits[1 + 6 * cfg.layers])?;
        let logits = head.apply(&f);
        rec.push(points::LOGITS, codes_of(&logits, &head.acc_exps));
        Ok(logits.data)
    }

    fn attention_head(&self, s: &Mat, vh: &Mat, a_v: i32, spec: &QuantSpec, rec: &mut Rec, name: &str) -> Result<Mat> {
        let qc = &self.qp.config;
        let (n, hd) = (s.rows, vh.cols);
        let mut out = Mat::zeros(n, hd);
        for i in 0..n {
            let row = s.row(i);
            let codes: Vec<i64> = if !qc.float_nonlinear {
                lis_row_mirror(row, spec.bits)
            } else {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
                let z: f64 = e.iter().sum();
                match spec.kind {
                    QuantKind::Log2 => e.iter().map(|v| log2_code(v / z, spec.bits) as i64).collect(),
                    _ => {
                        let a = spec.scale.per_tensor()?;
                        e.iter().map(|v| clip_i64(round_half_up_i64(v / z * pow2(-a)), spec.bits, false)).collect()
                    }
                }
            };
            let o = out.row_mut(i);
            if spec.kind == QuantKind::Log2 {
                // Per-element shift of V codes, then accumulate.
                for (k, &c) in codes.iter().enumerate() {
                    for (j, acc) in o.iter_mut().enumerate() {
                        let vc = vh.at(k, j) * pow2(-a_v);
                        *acc += round_half_up_i64(vc * pow2(-(c as i32))) as f64 * pow2(a_v);
                    }
                }
            } else {
                let a = spec.scale.per_tensor()?;
                for (k, &c) in codes.iter().enumerate() {
                    let m = c as f64 * pow2(a);
                    for (j, acc) in o.iter_mut().enumerate() {
                        *acc += m * vh.at(k, j);
                    }
                }
            }
            rec.push(name, codes);
        }
        Ok(out)
    }

    /// Forward from an `f32` tensor.
    pub fn forward_tensor(&self, x: &Tensor, bits: &[u32]) -> Result<Tensor> {
        let (r, c) = x.dims2()?;
        let logits = self.forward(&Mat::from_vec(r, c, x.to_f64()), bits, None)?;
        Tensor::from_f64(vec![logits.len()], &logits)
    }

    /// Top-1 accuracy on `samples` under a per-layer bit vector.
    pub fn accuracy(&self, samples: &[Sample], bits: &[u32]) -> Result<f64> {
        if samples.is_empty() {
            return Ok(0.0);
        }
        let hits = samples
            .par_iter()
            .map(|s| Ok((argmax(&self.forward(&s.as_mat(), bits, None)?) == s.label) as usize))
            .collect::<Result<Vec<usize>>>()?;
        Ok(hits.iter().sum::<usize>() as f64 / samples.len() as f64)
    }
}

fn output_name(m: &FakeQuantModel, site: usize) -> String {
    ln_sites(&m.cfg)[site].output.clone()
}

struct Rec<'a>(Option<&'a mut CodeTrace>);

impl Rec<'_> {
    fn push(&mut self, name: impl AsRef<str>, codes: Vec<i64>) {
        if let Some(t) = self.0.as_deref_mut() {
            t.push(name.as_ref(), codes);
        }
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// One-shot fake-quant forward; builds the dequantized weights each call.
pub fn fake_quant_forward(model: &FloatModel, qp: &QParams, bits: &[u32], x: &Tensor) -> Result<Tensor> {
    FakeQuantModel::new(model, qp)?.forward_tensor(x, bits)
}
