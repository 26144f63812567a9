use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fixed::to_q16;
use crate::error::{Error, Result};
use crate::mpsearch::BitConfig;
use crate::numerics::{clip, round_half_up_i64};
use crate::quantizer::{ln_sites, pow2, QParams, QuantLayer, WeightBank};
use crate::refmodel::{ckpt_err, gelu_tanh, points, read_manifest_blobs, write_manifest_blobs, FloatModel, ModelConfig};

const BLOB_FILE: &str = "qweights.bin";

/// LayerNorm affine parameters in Q16.16.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QNorm {
    pub gamma: Vec<i32>,
    pub beta: Vec<i32>,
}

/// The fully integer model.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedModel {
    pub config: ModelConfig,
    pub qparams: QParams,
    pub bitconfig: BitConfig,
    /// Weight layers at their assigned widths, in layer order.
    pub layers: Vec<QuantLayer>,
    /// LayerNorms in site order (`ln1`, `ln2` per block, `lnf`).
    pub norms: Vec<QNorm>,
    /// Per block: GELU output code for every 8-bit input code.
    pub gelu_luts: Vec<Vec<i32>>,
}

#[derive(Serialize, Deserialize)]
struct LayerMeta {
    name: String,
    bits: u32,
    exps: Vec<i32>,
    in_exp: i32,
}

impl QuantizedModel {
    pub fn build(model: &FloatModel, qp: &QParams, bitconfig: &BitConfig) -> Result<Self> {
        let bank = WeightBank::build(model, qp)?;
        Self::from_bank(model, qp, &bank, bitconfig)
    }

    /// Assembles the model from a pre-built weight bank.
    pub fn from_bank(model: &FloatModel, qp: &QParams, bank: &WeightBank, bitconfig: &BitConfig) -> Result<Self> {
        if !qp.config.integer_compatible() {
            return Err(Error::Config(
                "integer engine needs 8-bit activations, 4-bit log2 attention, integer nonlinearities and 4/8-bit weights".into(),
            ));
        }
        bank.check_bits(&bitconfig.bits)?;
        let layers = bitconfig.bits.iter().enumerate().map(|(i, &b)| Ok(bank.layer(i, b)?.clone())).collect::<Result<_>>()?;
        let w = model.weights()?;
        let mut raw = Vec::new();
        for b in &w.blocks {
            raw.push(&b.ln1);
            raw.push(&b.ln2);
        }
        raw.push(&w.lnf);
        let norms = raw
            .into_iter()
            .map(|n| {
                Ok(QNorm {
                    gamma: n.g.iter().map(|&v| to_q16(v)).collect::<Result<_>>()?,
                    beta: n.b.iter().map(|&v| to_q16(v)).collect::<Result<_>>()?,
                })
            })
            .collect::<Result<_>>()?;
        let gelu_luts = gelu_tables(qp)?;
        Ok(Self { config: model.config.clone(), qparams: qp.clone(), bitconfig: bitconfig.clone(), layers, norms, gelu_luts })
    }

    /// Writes `manifest.json` + int blobs, `qparams.json`, `bitconfig.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut items = Vec::new();
        let mut meta = Vec::new();
        for l in &self.layers {
            // Weight codes fit int8 at both supported widths.
            let w: Vec<u8> = l.codes.iter().map(|&c| c as i8 as u8).collect();
            items.push((format!("{}.w", l.name), vec![l.rows, l.cols], "i8", w));
            let b = l
                .bias
                .iter()
                .map(|&v| i32::try_from(v).map(i32::to_le_bytes))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Overflow(format!("{} bias exceeds 32 bits", l.name)))?
                .concat();
            items.push((format!("{}.b", l.name), vec![l.bias_rows, l.cols], "i32", b));
            meta.push(LayerMeta { name: l.name.clone(), bits: l.bits, exps: l.exps.clone(), in_exp: l.in_exp });
        }
        for (site, n) in ln_sites(&self.config).iter().zip(&self.norms) {
            let stem = site.output.trim_end_matches("_out");
            items.push((format!("{stem}.gamma"), vec![n.gamma.len()], "i32", n.gamma.iter().flat_map(|v| v.to_le_bytes()).collect()));
            items.push((format!("{stem}.beta"), vec![n.beta.len()], "i32", n.beta.iter().flat_map(|v| v.to_le_bytes()).collect()));
        }
        write_manifest_blobs(dir, BLOB_FILE, items)?;
        self.qparams.save(&dir.join("qparams.json"))?;
        self.bitconfig.save(&dir.join("bitconfig.json"))?;
        fs::write(dir.join("layers.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let qparams = QParams::load(&dir.join("qparams.json"))?;
        let bitconfig = BitConfig::load(&dir.join("bitconfig.json"))?;
        let meta: Vec<LayerMeta> = serde_json::from_str(
            &fs::read_to_string(dir.join("layers.json")).map_err(|e| ckpt_err(dir, format!("missing layers.json: {e}")))?,
        )
        .map_err(|e| ckpt_err(dir, format!("corrupt layers.json: {e}")))?;
        let config = qparams.model.clone();
        let blobs = read_manifest_blobs(dir)?;
        let find = |name: &str, dtype: &str| -> Result<(&Vec<usize>, &Vec<u8>)> {
            let (e, b) = blobs
                .iter()
                .find(|(e, _)| e.name == name)
                .ok_or_else(|| ckpt_err(dir, format!("manifest lacks {name}")))?;
            let n: usize = e.shape.iter().product();
            let width = if dtype == "i8" { 1 } else { 4 };
            if e.dtype != dtype || b.len() != n * width {
                return Err(ckpt_err(dir, format!("{name}: {} bytes of {} for shape {:?}", b.len(), e.dtype, e.shape)));
            }
            Ok((&e.shape, b))
        };
        let i32s = |b: &[u8]| -> Vec<i32> { b.chunks_exact(4).map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect() };

        let names = config.weight_layers();
        let dims = config.weight_layer_dims();
        if meta.len() != names.len() || bitconfig.bits.len() != names.len() {
            return Err(ckpt_err(dir, "layer count disagrees with the architecture"));
        }
        let mut layers = Vec::with_capacity(meta.len());
        for ((m, name), (rows, cols)) in meta.into_iter().zip(&names).zip(dims) {
            if &m.name != name || m.exps.len() != cols {
                return Err(ckpt_err(dir, format!("layer {} does not match {name}", m.name)));
            }
            let (wshape, wb) = find(&format!("{name}.w"), "i8")?;
            let (bshape, bb) = find(&format!("{name}.b"), "i32")?;
            if wshape != &vec![rows, cols] || bshape.len() != 2 || bshape[1] != cols {
                return Err(ckpt_err(dir, format!("{name}: unexpected blob shape")));
            }
            let codes: Vec<i32> = wb.iter().map(|&v| v as i8 as i32).collect();
            let (lo, hi) = (-(1i32 << (m.bits - 1)), (1i32 << (m.bits - 1)) - 1);
            if codes.iter().any(|c| *c < lo || *c > hi) {
                return Err(ckpt_err(dir, format!("{name}: codes exceed {} bits", m.bits)));
            }
            layers.push(QuantLayer {
                name: name.clone(),
                bits: m.bits,
                rows,
                cols,
                codes,
                exps: m.exps,
                in_exp: m.in_exp,
                bias: i32s(bb).into_iter().map(i64::from).collect(),
                bias_rows: bshape[0],
            });
        }
        let mut norms = Vec::new();
        for site in ln_sites(&config) {
            let stem = site.output.trim_end_matches("_out");
            let (_, g) = find(&format!("{stem}.gamma"), "i32")?;
            let (_, b) = find(&format!("{stem}.beta"), "i32")?;
            norms.push(QNorm { gamma: i32s(g), beta: i32s(b) });
        }
        let gelu_luts = gelu_tables(&qparams)?;
        Ok(Self { config, qparams, bitconfig, layers, norms, gelu_luts })
    }
}

/// GELU evaluated offline for every 8-bit input code.
fn gelu_tables(qp: &QParams) -> Result<Vec<Vec<i32>>> {
    (0..qp.model.layers)
        .map(|l| {
            let a_in = qp.get(&points::fc1_out(l))?.scale.per_tensor()?;
            let a_out = qp.get(&points::gelu_out(l))?.scale.per_tensor()?;
            Ok((-128..=127)
                .map(|c: i32| clip(round_half_up_i64(gelu_tanh(c as f64 * pow2(a_in)) * pow2(-a_out)), 8, true))
                .collect())
        })
        .collect()
}
