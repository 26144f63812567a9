use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::sim::{CostReport, PipelineFlags};
use super::workload::Group;
use crate::error::{Error, Result};

/// One pipeline mode against the sequential baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeComparison {
    pub pipeline: PipelineFlags,
    pub total_cycles: u64,
    pub latency_us: f64,
    pub attention_cycles: u64,
    pub mlp_cycles: u64,
    pub speedup_overall: f64,
    pub speedup_attention: f64,
    pub speedup_mlp: f64,
    pub energy_pj: Option<f64>,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

/// Speedups of `pipelined` over `sequential`: overall, attention, MLP.
pub fn speedups(sequential: &CostReport, pipelined: &CostReport) -> (f64, f64, f64) {
    (
        ratio(sequential.total_cycles, pipelined.total_cycles),
        ratio(sequential.group(Group::Attention), pipelined.group(Group::Attention)),
        ratio(sequential.group(Group::Mlp), pipelined.group(Group::Mlp)),
    )
}

/// Every simulated mode plus its comparison to the unpipelined run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub runs: Vec<CostReport>,
    pub comparisons: Vec<ModeComparison>,
}

impl SimReport {
    /// `runs` must contain the unpipelined mode.
    pub fn new(runs: Vec<CostReport>) -> Result<Self> {
        let base = runs
            .iter()
            .find(|r| r.pipeline == PipelineFlags::NONE)
            .ok_or_else(|| Error::InvalidArgument("report needs the unpipelined run as baseline".into()))?;
        let comparisons = runs
            .iter()
            .map(|r| {
                let (o, a, m) = speedups(base, r);
                ModeComparison {
                    pipeline: r.pipeline,
                    total_cycles: r.total_cycles,
                    latency_us: r.latency_us,
                    attention_cycles: r.group(Group::Attention),
                    mlp_cycles: r.group(Group::Mlp),
                    speedup_overall: o,
                    speedup_attention: a,
                    speedup_mlp: m,
                    energy_pj: r.energy.as_ref().map(|e| e.total),
                }
            })
            .collect();
        Ok(Self { runs, comparisons })
    }

    pub fn comparison(&self, flags: PipelineFlags) -> Option<&ModeComparison> {
        self.comparisons.iter().find(|c| c.pipeline == flags)
    }

    /// One row per mode.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "pipeline,total_cycles,latency_us,attention_cycles,mlp_cycles,speedup_overall,speedup_attention,speedup_mlp,energy_pj\n",
        );
        for c in &self.comparisons {
            let e = c.energy_pj.map(|e| format!("{e:.3}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{:.3},{},{},{:.4},{:.4},{:.4},{e}",
                c.pipeline,
                c.total_cycles,
                c.latency_us,
                c.attention_cycles,
                c.mlp_cycles,
                c.speedup_overall,
                c.speedup_attention,
                c.speedup_mlp
            );
        }
        s
    }
}
