use std::collections::BTreeMap;

use super::calibrate::{layer_input_point, prepare_weights, weight_row_factors};
use super::scale::{pow2, quant_code};
use super::spec::QParams;
use crate::error::{Error, Result};
use crate::numerics::round_half_up_i64;
use crate::refmodel::{FloatModel, Mat, Weights};

/// One weight layer in integer form.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantLayer {
    pub name: String,
    pub bits: u32,
    pub rows: usize,
    pub cols: usize,
    /// Row-major `(rows, cols)` codes.
    pub codes: Vec<i32>,
    /// Per-output-feature exponents.
    pub exps: Vec<i32>,
    /// Exponent of the activation this layer reads.
    pub in_exp: i32,
    /// Bias codes at the accumulator exponent, `(bias_rows, cols)`.
    pub bias: Vec<i64>,
    pub bias_rows: usize,
}

impl QuantLayer {
    /// Exponent of accumulator column `j`.
    pub fn acc_exp(&self, j: usize) -> i32 {
        self.in_exp + self.exps[j]
    }

    pub fn dequant_weights(&self) -> Mat {
        let mut m = Mat::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m.data[i * self.cols + j] = self.codes[i * self.cols + j] as f64 * pow2(self.exps[j]);
            }
        }
        m
    }

    pub fn dequant_bias(&self) -> Mat {
        let mut m = Mat::zeros(self.bias_rows, self.cols);
        for r in 0..self.bias_rows {
            for j in 0..self.cols {
                m.data[r * self.cols + j] = self.bias[r * self.cols + j] as f64 * pow2(self.acc_exp(j));
            }
        }
        m
    }

    /// Bias row for token `r` (the embedding carries one per token).
    pub fn bias_row(&self, r: usize) -> &[i64] {
        let r = if self.bias_rows == 1 { 0 } else { r };
        &self.bias[r * self.cols..(r + 1) * self.cols]
    }
}

/// Quantizes weight layer `idx` of the prepared weights at `bits`.
fn quantize_layer(qp: &QParams, w: &Weights, idx: usize, bits: u32) -> Result<QuantLayer> {
    let cfg = &qp.model;
    let name = cfg.weight_layers()[idx].clone();
    let lin = w.linears()[idx];
    let exps = qp.weight(&name, bits)?.scale.expand(lin.w.cols)?;
    let in_exp = qp.get(&layer_input_point(cfg, idx))?.scale.per_tensor()?;
    let (rows, cols) = (lin.w.rows, lin.w.cols);
    let mut codes = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            codes.push(quant_code(lin.w.at(i, j), exps[j], bits, true));
        }
    }
    // Position embeddings ride on the embedding bias, one row per token.
    let bias_f: Vec<Vec<f64>> = if idx == 0 {
        (0..w.pos.rows).map(|r| lin.b.iter().zip(w.pos.row(r)).map(|(b, p)| b + p).collect()).collect()
    } else {
        vec![lin.b.clone()]
    };
    let mut bias = Vec::with_capacity(bias_f.len() * cols);
    for row in &bias_f {
        for (j, &b) in row.iter().enumerate() {
            bias.push(round_half_up_i64(b * pow2(-(in_exp + exps[j]))));
        }
    }
    Ok(QuantLayer { name, bits, rows, cols, codes, exps, in_exp, bias, bias_rows: bias_f.len() })
}

/// Every weight layer quantized at every calibrated width.
#[derive(Clone, Debug)]
pub struct WeightBank {
    pub layers: Vec<BTreeMap<u32, QuantLayer>>,
    pub prepared: Weights,
    /// Per-layer row factors from float to prepared weights.
    pub row_factors: Vec<Vec<f64>>,
}

impl WeightBank {
    pub fn build(model: &FloatModel, qp: &QParams) -> Result<Self> {
        let prepared = prepare_weights(model, qp)?;
        let n = qp.model.weight_layers().len();
        let layers = (0..n)
            .map(|i| {
                qp.config
                    .weight_bit_choices
                    .iter()
                    .map(|&b| Ok((b, quantize_layer(qp, &prepared, i, b)?)))
                    .collect::<Result<BTreeMap<_, _>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let row_factors = weight_row_factors(&qp.model, qp)?;
        Ok(Self { layers, prepared, row_factors })
    }

    /// Layer `idx` at `bits`.
    pub fn layer(&self, idx: usize, bits: u32) -> Result<&QuantLayer> {
        self.layers
            .get(idx)
            .and_then(|m| m.get(&bits))
            .ok_or_else(|| Error::MissingSpec(format!("weight layer {idx} at {bits} bits")))
    }

    /// Checks a per-layer bit vector against the calibrated widths.
    pub fn check_bits(&self, bits: &[u32]) -> Result<()> {
        if bits.len() != self.layers.len() {
            return Err(Error::Shape(format!("{} bit entries for {} layers", bits.len(), self.layers.len())));
        }
        for (i, b) in bits.iter().enumerate() {
            self.layer(i, *b)?;
        }
        Ok(())
    }

    /// L2 norm of `W_q − W` for layer `idx` at `bits`, mapped back to the
    /// float model's coordinates so it pairs with float-model curvature.
    pub fn perturbation(&self, idx: usize, bits: u32) -> Result<f64> {
        let q = self.layer(idx, bits)?.dequant_weights();
        let w = &self.prepared.linears()[idx].w;
        let f = &self.row_factors[idx];
        let mut sq = 0.0;
        for i in 0..w.rows {
            for j in 0..w.cols {
                sq += ((q.at(i, j) - w.at(i, j)) / f[i]).powi(2);
            }
        }
        Ok(sq.sqrt())
    }
}
