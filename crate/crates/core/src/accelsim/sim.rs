use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::AcceleratorConfig;
use super::energy::EnergyReport;
use super::workload::{Chunk, Group, Stage, StageKind, Workload};
use crate::error::{Error, Result};

/// Which pipelines are enabled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PipelineFlags {
    pub inter: bool,
    pub intra: bool,
}

impl PipelineFlags {
    pub const NONE: Self = Self { inter: false, intra: false };
    pub const ALL: Self = Self { inter: true, intra: true };

    pub fn all_modes() -> [Self; 4] {
        [Self::NONE, Self { inter: true, intra: false }, Self { inter: false, intra: true }, Self::ALL]
    }

    pub(crate) fn enables(&self, stage: &Stage) -> bool {
        match stage.pipe.map(|p| p.kind) {
            Some(super::workload::PipeKind::Inter) => self.inter,
            Some(super::workload::PipeKind::Intra) => self.intra,
            None => false,
        }
    }
}

impl FromStr for PipelineFlags {
    type Err = Error;

    /// `none`, `inter`, `intra`, or `inter,intra`.
    fn from_str(s: &str) -> Result<Self> {
        let mut f = Self::NONE;
        for part in s.split(',').map(str::trim) {
            match part {
                "none" if s.trim() == "none" => {}
                "inter" => f.inter = true,
                "intra" => f.intra = true,
                _ => return Err(Error::Config(format!("pipeline must be none, inter, intra or inter,intra; got `{s}`"))),
            }
        }
        Ok(f)
    }
}

impl fmt::Display for PipelineFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.inter, self.intra) {
            (false, false) => write!(f, "none"),
            (true, false) => write!(f, "inter"),
            (false, true) => write!(f, "intra"),
            (true, true) => write!(f, "inter,intra"),
        }
    }
}

/// Cycles to produce one output row of `stage`.
///
/// Weights that overflow the weight buffer are streamed from DRAM; the
/// load time, spread over the stage's rows, then bounds the row time.
pub fn stage_row_cycles(stage: &Stage, cfg: &AcceleratorConfig) -> u64 {
    let c = |a: u64, b: u32| a.div_ceil(b as u64);
    let compute = match stage.kind {
        StageKind::Matmul => {
            // Two 4-bit products per PS-MAC per cycle.
            let lanes = if stage.weight_bits <= 4 { 2 * cfg.psmac_rows } else { cfg.psmac_rows };
            c(stage.inner, lanes) * c(stage.cols, cfg.psmac_cols)
        }
        StageKind::ShiftMatmul => c(stage.inner, cfg.shifter_rows) * c(stage.cols, cfg.shifter_cols),
        StageKind::Ln => c(stage.cols, cfg.ln_parallelism),
        StageKind::Softmax => c(stage.cols, cfg.softmax_parallelism),
        StageKind::Requant => c(stage.cols, cfg.requant_parallelism),
    };
    let bytes = stage.weight_bytes();
    if bytes > cfg.weight_buffer_bytes() {
        compute.max(c(bytes, cfg.dram_bytes_per_cycle).div_ceil(stage.rows))
    } else {
        compute
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    pub name: String,
    pub kind: StageKind,
    pub group: Group,
    pub rows: u64,
    pub row_cycles: u64,
    /// `rows · row_cycles`: the stage's own busy time.
    pub busy_cycles: u64,
    pub products: u64,
}

/// Timing (and optionally energy) of one workload under one pipeline mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub pipeline: PipelineFlags,
    pub total_cycles: u64,
    pub latency_us: f64,
    pub group_cycles: BTreeMap<Group, u64>,
    pub stages: Vec<StageCost>,
    pub energy: Option<EnergyReport>,
}

impl CostReport {
    pub fn group(&self, g: Group) -> u64 {
        self.group_cycles.get(&g).copied().unwrap_or(0)
    }

    pub fn total_products(&self) -> u64 {
        self.stages.iter().map(|s| s.products).sum()
    }
}

/// Consecutive stage ranges that execute as one unit under `flags`.
pub(crate) fn segments(w: &Workload, flags: PipelineFlags) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < w.stages.len() {
        let s = &w.stages[i];
        let mut j = i + 1;
        if flags.enables(s) {
            while j < w.stages.len() && w.stages[j].pipe == s.pipe {
                j += 1;
            }
        }
        out.push(i..j);
        i = j;
    }
    out
}

/// Fill plus steady state: `Σt + B·(n−1)`, where `B` is the busiest chunk's
/// per-row demand (the largest row time when every stage has its own chunk).
pub fn chain_cycles(row_times: &[(Chunk, u64)], rows: u64) -> u64 {
    let fill: u64 = row_times.iter().map(|(_, t)| t).sum();
    let mut per_chunk: BTreeMap<Chunk, u64> = BTreeMap::new();
    for &(c, t) in row_times {
        *per_chunk.entry(c).or_default() += t;
    }
    let bottleneck = per_chunk.values().copied().max().unwrap_or(0);
    fill + bottleneck * rows.saturating_sub(1)
}

fn simulate(w: &Workload, cfg: &AcceleratorConfig, flags: PipelineFlags) -> Result<CostReport> {
    cfg.validate()?;
    w.validate()?;
    let stages: Vec<StageCost> = w
        .stages
        .iter()
        .map(|s| {
            let t = stage_row_cycles(s, cfg);
            StageCost {
                name: s.name.clone(),
                kind: s.kind,
                group: s.group,
                rows: s.rows,
                row_cycles: t,
                busy_cycles: t * s.rows,
                products: s.products(),
            }
        })
        .collect();
    let mut group_cycles: BTreeMap<Group, u64> = BTreeMap::new();
    for seg in segments(w, flags) {
        let cycles = if seg.len() == 1 {
            stages[seg.start].busy_cycles
        } else {
            let times: Vec<(Chunk, u64)> = seg.clone().map(|i| (w.stages[i].kind.chunk(), stages[i].row_cycles)).collect();
            chain_cycles(&times, w.stages[seg.start].rows)
        };
        *group_cycles.entry(w.stages[seg.start].group).or_default() += cycles;
    }
    let total_cycles = group_cycles.values().sum();
    Ok(CostReport {
        pipeline: flags,
        total_cycles,
        latency_us: total_cycles as f64 / cfg.frequency_mhz,
        group_cycles,
        stages,
        energy: None,
    })
}

/// One stage at a time, each over all its rows.
pub fn simulate_sequential(w: &Workload, cfg: &AcceleratorConfig) -> Result<CostReport> {
    simulate(w, cfg, PipelineFlags::NONE)
}

/// Enabled chains overlap row by row; everything else runs sequentially.
pub fn simulate_pipelined(w: &Workload, cfg: &AcceleratorConfig, flags: PipelineFlags) -> Result<CostReport> {
    simulate(w, cfg, flags)
}
