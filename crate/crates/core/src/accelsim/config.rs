use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-operation energies in pJ. Ratios follow the usual 45 nm figures;
/// absolute values are indicative only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitEnergy {
    /// One 8×8-bit multiply-accumulate.
    pub mac8: f64,
    /// One 8×4-bit multiply-accumulate (half a PS-MAC cycle).
    pub mac4: f64,
    pub shift: f64,
    pub add: f64,
    /// 32-bit integer multiply.
    pub mul32: f64,
    pub divide: f64,
    pub fp_mul: f64,
    pub fp_add: f64,
    pub sram_byte: f64,
    pub dram_byte: f64,
}

impl Default for UnitEnergy {
    fn default() -> Self {
        Self {
            mac8: 0.23,
            mac4: 0.12,
            shift: 0.03,
            add: 0.03,
            mul32: 3.1,
            divide: 6.0,
            fp_mul: 3.7,
            fp_add: 0.9,
            sram_byte: 1.25,
            dram_byte: 20.0,
        }
    }
}

impl UnitEnergy {
    fn values(&self) -> [(&'static str, f64); 10] {
        [
            ("mac8", self.mac8),
            ("mac4", self.mac4),
            ("shift", self.shift),
            ("add", self.add),
            ("mul32", self.mul32),
            ("divide", self.divide),
            ("fp_mul", self.fp_mul),
            ("fp_add", self.fp_add),
            ("sram_byte", self.sram_byte),
            ("dram_byte", self.dram_byte),
        ]
    }
}

/// How accumulators are re-quantized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequantMode {
    /// Power-of-two scales: one rounding shift per element.
    #[default]
    Shift,
    /// Floating-point scales: convert, multiply, convert back.
    FloatMultiply,
}

/// On-chip buffer sizes in KB.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferConfig {
    pub q_kb: u32,
    pub k_kb: u32,
    pub v_kb: u32,
    pub input_kb: u32,
    pub output_kb: u32,
    pub weight_kb: u32,
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self { q_kb: 37, k_kb: 37, v_kb: 37, input_kb: 74, output_kb: 74, weight_kb: 144 }
    }
}

impl BufferConfig {
    pub fn total_kb(&self) -> u32 {
        self.q_kb + self.k_kb + self.v_kb + self.input_kb + self.output_kb + self.weight_kb
    }
}

/// The chunk-based accelerator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceleratorConfig {
    pub psmac_rows: u32,
    pub psmac_cols: u32,
    pub shifter_rows: u32,
    pub shifter_cols: u32,
    pub ln_parallelism: u32,
    pub requant_parallelism: u32,
    pub softmax_parallelism: u32,
    pub frequency_mhz: f64,
    pub buffers: BufferConfig,
    /// Off-chip bandwidth used when a layer's weights overflow the weight buffer.
    pub dram_bytes_per_cycle: u32,
    pub requant: RequantMode,
    pub energy: UnitEnergy,
}

impl Default for AcceleratorConfig {
    fn default() -> Self {
        Self {
            psmac_rows: 32,
            psmac_cols: 64,
            shifter_rows: 32,
            shifter_cols: 64,
            ln_parallelism: 64,
            requant_parallelism: 32,
            softmax_parallelism: 64,
            frequency_mhz: 500.0,
            buffers: BufferConfig::default(),
            dram_bytes_per_cycle: 16,
            requant: RequantMode::Shift,
            energy: UnitEnergy::default(),
        }
    }
}

impl AcceleratorConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.psmac_rows,
            self.psmac_cols,
            self.shifter_rows,
            self.shifter_cols,
            self.ln_parallelism,
            self.requant_parallelism,
            self.softmax_parallelism,
            self.dram_bytes_per_cycle,
            self.buffers.weight_kb,
        ];
        if dims.contains(&0) || !(self.frequency_mhz > 0.0) {
            return Err(Error::Config("accelerator dimensions, bandwidth and frequency must be positive".into()));
        }
        if let Some((name, _)) = self.energy.values().iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("unit energy `{name}` must be finite and non-negative")));
        }
        Ok(())
    }

    /// Reads `arch.json`; every unit-energy entry must be present.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let c: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn weight_buffer_bytes(&self) -> u64 {
        self.buffers.weight_kb as u64 * 1024
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_describe_the_reference_design() {
        let c = AcceleratorConfig::default();
        c.validate().unwrap();
        assert_eq!(c.buffers.total_kb(), 403);
        assert_eq!(c.psmac_rows * c.psmac_cols, 2048);
    }

    #[test]
    fn missing_unit_cost_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("arch.json");
        let mut v = serde_json::to_value(AcceleratorConfig::default()).unwrap();
        v["energy"].as_object_mut().unwrap().remove("mac8");
        std::fs::write(&p, v.to_string()).unwrap();
        assert!(matches!(AcceleratorConfig::load(&p), Err(Error::Config(m)) if m.contains("mac8")));
        AcceleratorConfig::default().save(&p).unwrap();
        assert_eq!(AcceleratorConfig::load(&p).unwrap(), AcceleratorConfig::default());
    }
}
