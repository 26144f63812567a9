use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scale::Rounding;
use crate::error::{Error, Result};
use crate::refmodel::ModelConfig;

/// A power-of-two scale `2^α`, per tensor or per channel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PotScale {
    PerTensor { exponent: i32 },
    PerChannel { axis: usize, exponents: Vec<i32> },
}

impl PotScale {
    /// Exponent of channel `c` (the only exponent when per tensor).
    pub fn exponent(&self, c: usize) -> i32 {
        match self {
            PotScale::PerTensor { exponent } => *exponent,
            PotScale::PerChannel { exponents, .. } => exponents[c],
        }
    }

    /// Per-channel exponents expanded to `width`.
    pub fn expand(&self, width: usize) -> Result<Vec<i32>> {
        match self {
            PotScale::PerTensor { exponent } => Ok(vec![*exponent; width]),
            PotScale::PerChannel { exponents, .. } if exponents.len() == width => Ok(exponents.clone()),
            PotScale::PerChannel { exponents, .. } => {
                Err(Error::Shape(format!("{} channel exponents for width {width}", exponents.len())))
            }
        }
    }

    pub fn per_tensor(&self) -> Result<i32> {
        match self {
            PotScale::PerTensor { exponent } => Ok(*exponent),
            PotScale::PerChannel { .. } => Err(Error::InvalidArgument("expected a per-tensor scale".into())),
        }
    }
}

/// Global exponent plus per-channel PoT offsets for LayerNorm inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PtfSpec {
    pub global: i32,
    pub offsets: Vec<i32>,
    pub bits: u32,
}

impl PtfSpec {
    pub fn exponents(&self) -> Vec<i32> {
        self.offsets.iter().map(|o| self.global + o).collect()
    }
}

/// Channel-wise migration exponents moved from activations into weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothSpec {
    pub migration: Vec<i32>,
    pub beta_s: f64,
    /// `M_i + α_x̂`, filled once the smoothed activation exponent is known.
    #[serde(default)]
    pub fused: Vec<i32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantKind {
    Uniform,
    Log2,
    Ptf,
}

/// Quantization parameters of one activation point or weight tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub kind: QuantKind,
    pub bits: u32,
    pub signed: bool,
    #[serde(flatten)]
    pub scale: PotScale,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ptf: Option<PtfSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smooth: Option<SmoothSpec>,
}

impl QuantSpec {
    pub fn uniform(bits: u32, exponent: i32) -> Self {
        Self {
            kind: QuantKind::Uniform,
            bits,
            signed: true,
            scale: PotScale::PerTensor { exponent },
            ptf: None,
            smooth: None,
        }
    }

    pub fn log2(bits: u32) -> Self {
        Self {
            kind: QuantKind::Log2,
            bits,
            signed: false,
            scale: PotScale::PerTensor { exponent: 0 },
            ptf: None,
            smooth: None,
        }
    }

    pub fn ptf(p: PtfSpec) -> Self {
        Self {
            kind: QuantKind::Ptf,
            bits: p.bits,
            signed: true,
            scale: PotScale::PerChannel { axis: 1, exponents: p.exponents() },
            ptf: Some(p),
            smooth: None,
        }
    }

    pub fn per_feature(bits: u32, exponents: Vec<i32>) -> Self {
        Self {
            kind: QuantKind::Uniform,
            bits,
            signed: true,
            scale: PotScale::PerChannel { axis: 1, exponents },
            ptf: None,
            smooth: None,
        }
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        if !(2..=32).contains(&self.bits) {
            return Err(Error::Config(format!("bits {} outside 2..=32", self.bits)));
        }
        if self.kind == QuantKind::Log2 && self.signed {
            return Err(Error::Config("log2 codes are unsigned".into()));
        }
        if self.kind == QuantKind::Ptf {
            let p = self.ptf.as_ref().ok_or_else(|| Error::Config("ptf kind without ptf spec".into()))?;
            if self.scale.expand(p.offsets.len())? != p.exponents() {
                return Err(Error::Config("ptf exponents disagree with global + offsets".into()));
            }
        }
        if let Some(s) = &self.smooth {
            if !(0.0..=1.0).contains(&s.beta_s) {
                return Err(Error::Config(format!("beta_s {} outside [0, 1]", s.beta_s)));
            }
            let a = self.scale.per_tensor()?;
            if !s.fused.is_empty() && s.fused.iter().zip(&s.migration).any(|(f, m)| *f != m + a) {
                return Err(Error::Config("fused exponents disagree with migration + exponent".into()));
            }
        }
        Ok(())
    }
}

/// Calibration settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantConfig {
    pub act_bits: u32,
    pub attn_bits: u32,
    pub weight_bit_choices: Vec<u32>,
    pub rounding: Rounding,
    pub smoothing: bool,
    pub ptf: bool,
    pub beta_s: f64,
    /// Log2-quantized attention map; otherwise uniform unsigned.
    pub attn_log2: bool,
    /// LayerNorm, Softmax and GELU in floating point (reference-only mode).
    pub float_nonlinear: bool,
    pub calib_samples: usize,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            act_bits: 8,
            attn_bits: 4,
            weight_bit_choices: vec![4, 8],
            rounding: Rounding::Adaptive,
            smoothing: true,
            ptf: true,
            beta_s: 0.5,
            attn_log2: true,
            float_nonlinear: false,
            calib_samples: 100,
        }
    }
}

impl QuantConfig {
    pub fn validate(&self) -> Result<()> {
        for b in [self.act_bits, self.attn_bits].iter().chain(&self.weight_bit_choices) {
            if !(2..=32).contains(b) {
                return Err(Error::Config(format!("bit-width {b} outside 2..=32")));
            }
        }
        if self.weight_bit_choices.is_empty() {
            return Err(Error::Config("no weight bit choices".into()));
        }
        if !(0.0..=1.0).contains(&self.beta_s) {
            return Err(Error::Config(format!("beta_s {} outside [0, 1]", self.beta_s)));
        }
        if !self.float_nonlinear && !self.attn_log2 {
            return Err(Error::Config("integer Softmax emits log2 codes; uniform maps need float_nonlinear".into()));
        }
        if self.calib_samples == 0 {
            return Err(Error::Config("calib_samples must be positive".into()));
        }
        Ok(())
    }

    /// True when the integer engine can execute this configuration.
    pub fn integer_compatible(&self) -> bool {
        self.act_bits == 8
            && self.attn_bits == 4
            && self.attn_log2
            && !self.float_nonlinear
            && self.weight_bit_choices.iter().all(|b| *b == 4 || *b == 8)
    }
}

/// Key of the spec for a weight layer at a bit-width.
pub fn weight_key(layer: &str, bits: u32) -> String {
    format!("{layer}.w{bits}")
}

/// Every calibrated spec of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QParams {
    pub model: ModelConfig,
    pub config: QuantConfig,
    pub points: BTreeMap<String, QuantSpec>,
}

impl QParams {
    pub fn get(&self, name: &str) -> Result<&QuantSpec> {
        self.points.get(name).ok_or_else(|| Error::MissingSpec(name.to_string()))
    }

    pub fn weight(&self, layer: &str, bits: u32) -> Result<&QuantSpec> {
        self.get(&weight_key(layer, bits))
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.model.validate()?;
        for (name, s) in &self.points {
            s.validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let q: QParams = serde_json::from_str(&fs::read_to_string(path)?)?;
        q.validate()?;
        Ok(q)
    }
}
