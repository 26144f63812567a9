use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{AcceleratorConfig, RequantMode, UnitEnergy};
use super::sim::{segments, CostReport};
use super::workload::{Chunk, Stage, StageKind, Workload};
use crate::error::{Error, Result};

/// Energy in pJ, split by compute chunk and memory level.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub chunks: BTreeMap<Chunk, f64>,
    pub sram: f64,
    pub dram: f64,
    pub sram_bytes: u64,
    pub dram_bytes: u64,
    pub total: f64,
}

/// Compute energy of one stage.
fn compute_energy(s: &Stage, u: &UnitEnergy, mode: RequantMode) -> f64 {
    let elems = (s.rows * s.cols) as f64;
    let rows = s.rows as f64;
    match s.kind {
        StageKind::Matmul => s.products() as f64 * if s.weight_bits <= 4 { u.mac4 } else { u.mac8 },
        StageKind::ShiftMatmul => s.products() as f64 * (u.shift + u.add),
        // PTF shift; squares and sums on the MAS array; affine multiply-add;
        // one reciprocal square root per row.
        StageKind::Ln => elems * (u.shift + 2.0 * u.mac8 + 2.0 * u.add + u.mul32 + u.add) + rows * 2.0 * u.divide,
        // Polynomial exp, running sum, one division and a leading-one log per element.
        StageKind::Softmax => elems * (2.0 * u.mul32 + 4.0 * u.add + 2.0 * u.shift + u.divide),
        StageKind::Requant => match mode {
            RequantMode::Shift => elems * (u.shift + u.add),
            RequantMode::FloatMultiply => elems * (u.fp_mul + 2.0 * u.fp_add),
        },
    }
}

/// Bytes read and written through the global buffers: `(input, stream, output)`.
fn sram_traffic(s: &Stage) -> (u64, u64, u64) {
    let act_in = match s.kind {
        // Scores arrive as 32-bit accumulators.
        StageKind::Softmax | StageKind::Requant => 4,
        _ => 1,
    };
    let input = s.rows * s.inner * act_in;
    let stream = match s.kind {
        // Row-stationary: each input row sweeps the whole stationary operand.
        StageKind::Matmul => s.rows * (s.inner * s.cols * s.weight_bits as u64).div_ceil(8),
        StageKind::ShiftMatmul => s.rows * s.inner * s.cols,
        _ => 0,
    };
    let output = match s.kind {
        StageKind::Matmul | StageKind::ShiftMatmul => s.rows * s.cols * 4,
        // 4-bit log2 codes.
        StageKind::Softmax => (s.rows * s.cols).div_ceil(2),
        _ => s.rows * s.cols,
    };
    (input, stream, output)
}

/// Fills the energy fields of `report`. Rows handed chunk-to-chunk inside
/// an active chain skip the global buffer.
pub fn energy(w: &Workload, cfg: &AcceleratorConfig, report: &CostReport) -> Result<CostReport> {
    cfg.validate()?;
    if report.stages.len() != w.stages.len() {
        return Err(Error::Simulation("report does not belong to this workload".into()));
    }
    let u = &cfg.energy;
    let mut e = EnergyReport::default();
    for seg in segments(w, report.pipeline) {
        for i in seg.clone() {
            let s = &w.stages[i];
            *e.chunks.entry(s.kind.chunk()).or_default() += compute_energy(s, u, cfg.requant);
            let (mut input, stream, mut output) = sram_traffic(s);
            if i != seg.start {
                input = 0;
            }
            if i + 1 != seg.end {
                output = 0;
            }
            e.sram_bytes += input + stream + output;
            e.dram_bytes += s.weight_bytes();
        }
    }
    e.sram = e.sram_bytes as f64 * u.sram_byte;
    e.dram = e.dram_bytes as f64 * u.dram_byte;
    e.total = e.chunks.values().sum::<f64>() + e.sram + e.dram;
    let mut out = report.clone();
    out.energy = Some(e);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accelsim::sim::{simulate_pipelined, PipelineFlags};
    use crate::accelsim::workload::VitDims;

    fn tiny() -> Workload {
        let d = VitDims { tokens: 17, dim: 32, heads: 2, hidden: 64, layers: 2, input_dim: 16, classes: 4 };
        Workload::vit(&d, &vec![8; d.weight_layers()]).unwrap()
    }

    fn run(cfg: &AcceleratorConfig, flags: PipelineFlags) -> EnergyReport {
        let w = tiny();
        energy(&w, cfg, &simulate_pipelined(&w, cfg, flags).unwrap()).unwrap().energy.unwrap()
    }

    #[test]
    fn zero_units_give_zero_energy() {
        let mut cfg = AcceleratorConfig::default();
        cfg.energy = UnitEnergy {
            mac8: 0.0,
            mac4: 0.0,
            shift: 0.0,
            add: 0.0,
            mul32: 0.0,
            divide: 0.0,
            fp_mul: 0.0,
            fp_add: 0.0,
            sram_byte: 0.0,
            dram_byte: 0.0,
        };
        assert_eq!(run(&cfg, PipelineFlags::ALL).total, 0.0);
    }

    #[test]
    fn doubling_mac_energy_doubles_only_the_mac_chunk() {
        let base = AcceleratorConfig::default();
        let mut dbl = base.clone();
        dbl.energy.mac8 *= 2.0;
        let (a, b) = (run(&base, PipelineFlags::NONE), run(&dbl, PipelineFlags::NONE));
        assert!((b.chunks[&Chunk::Psmac] - 2.0 * a.chunks[&Chunk::Psmac]).abs() < 1e-6 * a.chunks[&Chunk::Psmac]);
        for c in [Chunk::Shifter, Chunk::Softmax, Chunk::Requant] {
            assert_eq!(a.chunks[&c], b.chunks[&c]);
        }
        assert_eq!((a.sram, a.dram), (b.sram, b.dram));
    }

    #[test]
    fn shift_requant_beats_float_requant() {
        let pot = AcceleratorConfig::default();
        let fp = AcceleratorConfig { requant: RequantMode::FloatMultiply, ..Default::default() };
        let (a, b) = (run(&pot, PipelineFlags::NONE), run(&fp, PipelineFlags::NONE));
        assert!(a.chunks[&Chunk::Requant] < b.chunks[&Chunk::Requant]);
        assert!(a.total < b.total);
    }

    #[test]
    fn pipelining_saves_buffer_traffic_not_work() {
        let cfg = AcceleratorConfig::default();
        let (a, b) = (run(&cfg, PipelineFlags::NONE), run(&cfg, PipelineFlags::ALL));
        assert!(b.sram_bytes < a.sram_bytes);
        assert_eq!(a.chunks, b.chunks);
        assert_eq!(a.dram_bytes, b.dram_bytes);
    }
}
