use rayon::prelude::*;

use super::ptf::ptf_calibrate_mat;
use super::scale::{act_exponent_slice, pow2, weight_exponents};
use super::smooth::{col_max_abs, migration_exponents, row_max_abs, scale_rows, unscale_cols};
use super::spec::{weight_key, PtfSpec, QParams, QuantConfig, QuantSpec, SmoothSpec};
use crate::error::{Error, Result};
use crate::refmodel::{forward_weights, points, ActivationTrace, FloatModel, Mat, ModelConfig, Sample, Weights};

/// A LayerNorm and the weight layers that read its output.
#[derive(Clone, Debug)]
pub struct LnSite {
    /// Residual point feeding the LayerNorm.
    pub input: String,
    /// LayerNorm output point.
    pub output: String,
    /// Indices into the weight-layer list.
    pub consumers: Vec<usize>,
}

/// All LayerNorm sites in execution order: `ln1`, `ln2` per block, then `lnf`.
pub fn ln_sites(cfg: &ModelConfig) -> Vec<LnSite> {
    let mut v = Vec::new();
    for l in 0..cfg.layers {
        let base = 1 + 6 * l;
        v.push(LnSite { input: points::res(2 * l), output: points::ln1_out(l), consumers: vec![base, base + 1, base + 2] });
        v.push(LnSite { input: points::res(2 * l + 1), output: points::ln2_out(l), consumers: vec![base + 4] });
    }
    v.push(LnSite {
        input: points::res(2 * cfg.layers),
        output: points::LNF_OUT.into(),
        consumers: vec![1 + 6 * cfg.layers],
    });
    v
}

/// Activation point feeding weight layer `idx`.
pub fn layer_input_point(cfg: &ModelConfig, idx: usize) -> String {
    if idx == 0 {
        return points::INPUT.into();
    }
    if idx == 1 + 6 * cfg.layers {
        return points::LNF_OUT.into();
    }
    let (l, part) = ((idx - 1) / 6, (idx - 1) % 6);
    match part {
        0..=2 => points::ln1_out(l),
        3 => points::attn_out(l),
        4 => points::ln2_out(l),
        _ => points::gelu_out(l),
    }
}

/// Per-tensor activation points outside LayerNorm sites.
pub fn tensor_points(cfg: &ModelConfig) -> Vec<String> {
    let mut v = vec![points::INPUT.to_string()];
    for l in 0..cfg.layers {
        v.extend([
            points::q_out(l),
            points::k_out(l),
            points::v_out(l),
            points::attn_out(l),
            points::fc1_out(l),
            points::gelu_out(l),
        ]);
    }
    v
}

/// Folds `1/sqrt(d_i)` into the query projection.
pub(crate) fn fold_attention_scale(cfg: &ModelConfig, w: &mut Weights) {
    let s = 1.0 / (cfg.head_dim() as f64).sqrt();
    for b in &mut w.blocks {
        b.q.w.data.iter_mut().for_each(|v| *v *= s);
        b.q.b.iter_mut().for_each(|v| *v *= s);
    }
}

/// Per-row factors `f` with `prepared[i][j] = f[i] · float[i][j]`, per weight layer.
pub fn weight_row_factors(cfg: &ModelConfig, qp: &QParams) -> Result<Vec<Vec<f64>>> {
    let mut f: Vec<Vec<f64>> = cfg.weight_layer_dims().iter().map(|&(r, _)| vec![1.0; r]).collect();
    let s = 1.0 / (cfg.head_dim() as f64).sqrt();
    for l in 0..cfg.layers {
        f[1 + 6 * l].iter_mut().for_each(|v| *v *= s);
    }
    for site in ln_sites(cfg) {
        let m = &qp.get(&site.output)?.smooth.as_ref().ok_or_else(|| Error::MissingSpec(format!("{} smoothing", site.output)))?.migration;
        for &c in &site.consumers {
            if m.len() != f[c].len() {
                return Err(Error::Shape(format!("{}: {} migration exponents", site.output, m.len())));
            }
            f[c].iter_mut().zip(m).for_each(|(v, &e)| *v *= pow2(e));
        }
    }
    Ok(f)
}

/// Working weights the quantized engines see: attention scale folded into
/// the query projection and migration exponents folded into LN consumers.
pub fn prepare_weights(model: &FloatModel, qp: &QParams) -> Result<Weights> {
    let cfg = &model.config;
    if cfg != &qp.model {
        return Err(Error::Config("model architecture differs from the calibrated one".into()));
    }
    let mut w = model.weights()?;
    fold_attention_scale(cfg, &mut w);
    let mut lins = w.linears_mut();
    for site in ln_sites(cfg) {
        let m = &qp.get(&site.output)?.smooth.as_ref().ok_or_else(|| Error::MissingSpec(format!("{} smoothing", site.output)))?.migration;
        for &c in &site.consumers {
            if m.len() != lins[c].w.rows {
                return Err(Error::Shape(format!("{}: {} migration exponents", site.output, m.len())));
            }
            scale_rows(&mut lins[c].w, m);
        }
    }
    Ok(w)
}

/// Float activation trace over a batch, stacked in sample order.
pub fn collect_trace(cfg: &ModelConfig, w: &Weights, samples: &[Sample]) -> ActivationTrace {
    let parts: Vec<ActivationTrace> = samples
        .par_iter()
        .map(|s| {
            let mut t = ActivationTrace::default();
            forward_weights(cfg, w, &s.as_mat(), Some(&mut t));
            t
        })
        .collect();
    let mut all = ActivationTrace::default();
    for p in &parts {
        all.extend(p);
    }
    all
}

/// Computes every quantization parameter from a calibration batch.
pub fn calibrate(model: &FloatModel, calib: &[Sample], qc: &QuantConfig) -> Result<QParams> {
    qc.validate()?;
    let cfg = model.config.clone();
    cfg.validate()?;
    if calib.is_empty() {
        return Err(Error::InvalidArgument("empty calibration set".into()));
    }
    let mut w = model.weights()?;
    let mut trace = collect_trace(&cfg, &w, calib);
    fold_attention_scale(&cfg, &mut w);
    let s = 1.0 / (cfg.head_dim() as f64).sqrt();
    for l in 0..cfg.layers {
        if let Some(q) = trace.points.get_mut(&points::q_out(l)) {
            q.data.iter_mut().for_each(|v| *v *= s);
        }
    }

    let (ab, mode) = (qc.act_bits, qc.rounding);
    let mut qp = QParams { model: cfg.clone(), config: qc.clone(), points: Default::default() };

    for name in tensor_points(&cfg) {
        let a = act_exponent_slice(&trace.get(&name)?.data, ab, true, mode);
        qp.points.insert(name, QuantSpec::uniform(ab, a));
    }
    for k in 0..=2 * cfg.layers {
        let name = points::res(k);
        let m = trace.get(&name)?;
        let spec = if qc.ptf {
            ptf_calibrate_mat(m, ab, mode)
        } else {
            let g = act_exponent_slice(&m.data, ab, true, mode);
            PtfSpec { global: g, offsets: vec![0; m.cols], bits: ab }
        };
        qp.points.insert(name, QuantSpec::ptf(spec));
    }
    for l in 0..cfg.layers {
        let spec = if qc.attn_log2 {
            QuantSpec::log2(qc.attn_bits)
        } else {
            QuantSpec { signed: false, ..QuantSpec::uniform(qc.attn_bits, -(qc.attn_bits as i32)) }
        };
        qp.points.insert(points::attn_map(l), spec);
    }

    // Smoothing, then the smoothed activation exponent of each LN output.
    let mut layer_inputs: Vec<Option<Mat>> = vec![None; cfg.weight_layers().len()];
    {
        let mut lins = w.linears_mut();
        for site in ln_sites(&cfg) {
            let mut x = trace.get(&site.output)?.clone();
            let migration = if qc.smoothing {
                let mut wmax = vec![0.0f64; x.cols];
                for &c in &site.consumers {
                    for (m, r) in wmax.iter_mut().zip(row_max_abs(&lins[c].w)) {
                        *m = m.max(r);
                    }
                }
                migration_exponents(&col_max_abs(&x), &wmax, qc.beta_s)
            } else {
                vec![0; x.cols]
            };
            for &c in &site.consumers {
                scale_rows(&mut lins[c].w, &migration);
            }
            unscale_cols(&mut x, &migration);
            let a = act_exponent_slice(&x.data, ab, true, mode);
            let fused = migration.iter().map(|m| m + a).collect();
            let mut spec = QuantSpec::uniform(ab, a);
            spec.smooth = Some(SmoothSpec { migration, beta_s: qc.beta_s, fused });
            qp.points.insert(site.output.clone(), spec);
            for &c in &site.consumers {
                layer_inputs[c] = Some(x.clone());
            }
        }
    }

    // Per-feature weight exponents at every candidate width.
    let names = cfg.weight_layers();
    let lins = w.linears();
    let jobs: Vec<(usize, Mat)> = (0..names.len())
        .map(|i| {
            let x = match layer_inputs[i].take() {
                Some(x) => x,
                None => trace.get(&layer_input_point(&cfg, i))?.clone(),
            };
            Ok((i, x.t_matmul(&x)))
        })
        .collect::<Result<_>>()?;
    let specs: Vec<Vec<(String, QuantSpec)>> = jobs
        .par_iter()
        .map(|(i, gram)| {
            qc.weight_bit_choices
                .iter()
                .map(|&b| {
                    let e = weight_exponents(gram, &lins[*i].w, b, mode);
                    (weight_key(&names[*i], b), QuantSpec::per_feature(b, e))
                })
                .collect()
        })
        .collect();
    for (k, s) in specs.into_iter().flatten() {
        qp.points.insert(k, s);
    }
    qp.validate()?;
    Ok(qp)
}
