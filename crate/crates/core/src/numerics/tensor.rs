use serde::{Deserialize, Serialize};

use super::int::code_range;
use crate::error::{Error, Result};

/// Dense row-major `f32` tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite tensor value {bad}")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    /// Build from `f64` values, rounding to `f32`.
    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| v as f32).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// `(rows, cols)` of a rank-2 tensor; a rank-1 tensor is one row.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            [c] => Ok((1, *c)),
            s => Err(Error::Shape(format!("expected rank-2 tensor, got {s:?}"))),
        }
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// Standard matrix product; accumulates in `f64` and rounds once to `f32`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, k) = a.dims2()?;
    let (k2, p) = b.dims2()?;
    if k != k2 {
        return Err(Error::Shape(format!("matmul inner dims {k} vs {k2}")));
    }
    let mut out = vec![0.0f32; n * p];
    let mut acc = vec![0.0f64; p];
    for i in 0..n {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for kk in 0..k {
            let x = a.data[i * k + kk] as f64;
            if x == 0.0 {
                continue;
            }
            let row = &b.data[kk * p..(kk + 1) * p];
            for (s, &w) in acc.iter_mut().zip(row) {
                *s += x * w as f64;
            }
        }
        for (o, s) in out[i * p..(i + 1) * p].iter_mut().zip(&acc) {
            *o = *s as f32;
        }
    }
    Tensor::new(vec![n, p], out)
}

/// Width-tagged integer tensor; every element lies in the code range.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntTensor {
    shape: Vec<usize>,
    data: Vec<i32>,
    bits: u32,
    signed: bool,
}

impl IntTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i32>, bits: u32, signed: bool) -> Result<Self> {
        if !(2..=32).contains(&bits) {
            return Err(Error::InvalidArgument(format!("bit-width {bits} outside 2..=32")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        let (lo, hi) = code_range(bits, signed);
        if let Some(v) = data.iter().find(|&&v| (v as i64) < lo || (v as i64) > hi) {
            return Err(Error::Overflow(format!("code {v} outside {bits}-bit range [{lo}, {hi}]")));
        }
        Ok(Self { shape, data, bits, signed })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn signed(&self) -> bool {
        self.signed
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            [c] => Ok((1, *c)),
            s => Err(Error::Shape(format!("expected rank-2 tensor, got {s:?}"))),
        }
    }

    pub fn into_data(self) -> Vec<i32> {
        self.data
    }
}
