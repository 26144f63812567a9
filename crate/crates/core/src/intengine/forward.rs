use rayon::prelude::*;

use super::kernels::{lis_row, psmac_matmul_raw, requant_value, shift_attention_raw, PsMacConfig};
use super::layernorm::int_ln_row;
use super::model::QuantizedModel;
use crate::error::{Error, Result};
use crate::numerics::{clip, shift_round_i64, Tensor};
use crate::quantizer::{argmax, pow2, quant_code, CodeTrace, QuantLayer};
use crate::refmodel::{points, Sample};

/// Logit accumulators and their per-class exponents.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntOutput {
    pub codes: Vec<i32>,
    pub exps: Vec<i32>,
}

impl IntOutput {
    /// Reporting-only conversion to reals.
    pub fn dequantize(&self) -> Vec<f64> {
        self.codes.iter().zip(&self.exps).map(|(&c, &e)| c as f64 * pow2(e)).collect()
    }
}

struct Rec<'a>(Option<&'a mut CodeTrace>);

impl Rec<'_> {
    fn push(&mut self, name: &str, codes: &[i32]) {
        if let Some(t) = self.0.as_deref_mut() {
            t.push(name, codes.iter().map(|&c| c as i64));
        }
    }
}

/// `(rows, k) × layer` accumulators with bias, on the PS-MAC datapath.
fn linear(layer: &QuantLayer, a: &[i32], rows: usize) -> Result<Vec<i32>> {
    let mut out = vec![0i32; rows * layer.cols];
    let bias = Some((layer.bias.as_slice(), layer.bias_rows));
    psmac_matmul_raw(a, &layer.codes, rows, layer.rows, layer.cols, PsMacConfig::for_bits(layer.bits)?, bias, &mut out)?;
    Ok(out)
}

/// Re-quantizes accumulators to a per-tensor output exponent.
fn requant(layer: &QuantLayer, acc: &[i32], out_exp: i32) -> Vec<i32> {
    let shifts: Vec<i32> = (0..layer.cols).map(|j| layer.acc_exp(j) - out_exp).collect();
    acc.iter().enumerate().map(|(i, &a)| requant_value(a as i64, shifts[i % layer.cols], 8)).collect()
}

/// `clip(acc + residual)` at the next residual's per-channel exponents,
/// aligning both operands to the finer exponent first.
fn residual_add(layer: &QuantLayer, acc: &[i32], res: &[i32], res_exps: &[i32], out_exps: &[i32]) -> Vec<i32> {
    let c = layer.cols;
    acc.iter()
        .zip(res)
        .enumerate()
        .map(|(i, (&a, &r))| {
            let j = i % c;
            let (ea, er) = (layer.acc_exp(j), res_exps[j]);
            let e = ea.min(er);
            let sum = shift_round_i64(a as i64, ea - e) + shift_round_i64(r as i64, er - e);
            clip(shift_round_i64(sum, e - out_exps[j]), 8, true)
        })
        .collect()
}

/// Integer-only forward. Floats appear only in input quantization; the
/// returned logits stay as accumulator codes.
pub fn int_forward(qm: &QuantizedModel, x: &Tensor, trace: Option<&mut CodeTrace>) -> Result<IntOutput> {
    let cfg = &qm.config;
    let qp = &qm.qparams;
    let (n, d, hd) = (cfg.tokens, cfg.dim, cfg.head_dim());
    let (r, c) = x.dims2()?;
    if r != n || c != cfg.input_dim {
        return Err(Error::Shape(format!("input ({r}, {c}) vs ({n}, {})", cfg.input_dim)));
    }
    let mut rec = Rec(trace);
    let pt = |name: &str| -> Result<i32> { qp.get(name)?.scale.per_tensor() };
    let res_spec = |k: usize| -> Result<(Vec<i32>, Vec<i32>, i32)> {
        let s = qp.get(&points::res(k))?;
        let p = s.ptf.as_ref().ok_or_else(|| Error::MissingSpec(format!("{} ptf", points::res(k))))?;
        Ok((s.scale.expand(d)?, p.offsets.clone(), p.global))
    };
    let ln = |site: usize, codes: &[i32], rows: usize, res_k: usize, out_name: &str| -> Result<Vec<i32>> {
        let (_, offsets, _) = res_spec(res_k)?;
        let out = qp.get(out_name)?;
        let fused = &out.smooth.as_ref().ok_or_else(|| Error::MissingSpec(format!("{out_name} smoothing")))?.fused;
        let norm = &qm.norms[site];
        let mut y = Vec::with_capacity(rows * d);
        for row in 0..rows {
            int_ln_row(&codes[row * d..(row + 1) * d], &offsets, &norm.gamma, &norm.beta, fused, 8, &mut y);
        }
        Ok(y)
    };

    let a_in = pt(points::INPUT)?;
    let xq: Vec<i32> = x.data().iter().map(|&v| quant_code(v as f64, a_in, 8, true)).collect();
    rec.push(points::INPUT, &xq);

    let embed = &qm.layers[0];
    let (mut res_exps, _, _) = res_spec(0)?;
    let acc = linear(embed, &xq, n)?;
    let mut res: Vec<i32> = acc
        .iter()
        .enumerate()
        .map(|(i, &a)| requant_value(a as i64, embed.acc_exp(i % d) - res_exps[i % d], 8))
        .collect();
    rec.push(&points::res(0), &res);

    for l in 0..cfg.layers {
        let base = 1 + 6 * l;
        let h1 = ln(2 * l, &res, n, 2 * l, &points::ln1_out(l))?;
        rec.push(&points::ln1_out(l), &h1);
        let mut qkv = Vec::with_capacity(3);
        for (i, name) in [points::q_out(l), points::k_out(l), points::v_out(l)].iter().enumerate() {
            let layer = &qm.layers[base + i];
            let out = requant(layer, &linear(layer, &h1, n)?, pt(name)?);
            rec.push(name, &out);
            qkv.push(out);
        }
        let (a_q, a_k, a_v, a_a) = (pt(&points::q_out(l))?, pt(&points::k_out(l))?, pt(&points::v_out(l))?, pt(&points::attn_out(l))?);
        let mut av = vec![0i32; n * d];
        let mut maps = Vec::with_capacity(cfg.heads * n * n);
        for h in 0..cfg.heads {
            let slice = |m: &[i32]| -> Vec<i32> { (0..n).flat_map(|t| m[t * d + h * hd..t * d + (h + 1) * hd].to_vec()).collect() };
            let (qh, kh, vh) = (slice(&qkv[0]), slice(&qkv[1]), slice(&qkv[2]));
            let kt: Vec<i32> = (0..hd).flat_map(|j| (0..n).map(|t| kh[t * hd + j]).collect::<Vec<_>>()).collect();
            let mut s = vec![0i32; n * n];
            psmac_matmul_raw(&qh, &kt, n, hd, n, PsMacConfig::for_bits(8)?, None, &mut s)?;
            let mut m = Vec::with_capacity(n * n);
            for row in s.chunks(n) {
                let row: Vec<i64> = row.iter().map(|&v| v as i64).collect();
                m.extend(lis_row(&row, a_q + a_k, 4));
            }
            let mut o = vec![0i32; n * hd];
            shift_attention_raw(&m, &vh, n, n, hd, &mut o)?;
            for t in 0..n {
                for j in 0..hd {
                    av[t * d + h * hd + j] = requant_value(o[t * hd + j] as i64, a_v - a_a, 8);
                }
            }
            maps.extend(m);
        }
        rec.push(&points::attn_map(l), &maps);
        rec.push(&points::attn_out(l), &av);

        let o = &qm.layers[base + 3];
        let (e1, _, _) = res_spec(2 * l + 1)?;
        res = residual_add(o, &linear(o, &av, n)?, &res, &res_exps, &e1);
        res_exps = e1;
        rec.push(&points::res(2 * l + 1), &res);

        let h2 = ln(2 * l + 1, &res, n, 2 * l + 1, &points::ln2_out(l))?;
        rec.push(&points::ln2_out(l), &h2);
        let fc1 = &qm.layers[base + 4];
        let u = requant(fc1, &linear(fc1, &h2, n)?, pt(&points::fc1_out(l))?);
        rec.push(&points::fc1_out(l), &u);
        let lut = &qm.gelu_luts[l];
        let g: Vec<i32> = u.iter().map(|&c| lut[(c + 128) as usize]).collect();
        rec.push(&points::gelu_out(l), &g);
        let fc2 = &qm.layers[base + 5];
        let (e2, _, _) = res_spec(2 * l + 2)?;
        res = residual_add(fc2, &linear(fc2, &g, n)?, &res, &res_exps, &e2);
        res_exps = e2;
        rec.push(&points::res(2 * l + 2), &res);
    }

    let last = 2 * cfg.layers;
    let f = ln(last, &res[..d], 1, last, points::LNF_OUT)?;
    rec.push(points::LNF_OUT, &f);
    let head = &qm.layers[1 + 6 * cfg.layers];
    let logits = linear(head, &f, 1)?;
    rec.push(points::LOGITS, &logits);
    let exps = (0..head.cols).map(|j| head.acc_exp(j)).collect();
    Ok(IntOutput { codes: logits, exps })
}

/// Top-1 accuracy of the integer engine.
pub fn int_accuracy(qm: &QuantizedModel, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let hits = samples
        .par_iter()
        .map(|s| Ok((argmax(&int_forward(qm, &s.x, None)?.dequantize()) == s.label) as usize))
        .collect::<Result<Vec<usize>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / samples.len() as f64)
}
