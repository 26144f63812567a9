//! Cycle and energy model of the chunk-based accelerator under the
//! row-stationary dataflow.

mod config;
mod energy;
mod event;
mod report;
mod sim;
mod workload;

pub use config::{AcceleratorConfig, BufferConfig, RequantMode, UnitEnergy};
pub use energy::{energy, EnergyReport};
pub use event::{event_driven_oracle, run_tasks, Task};
pub use report::{speedups, ModeComparison, SimReport};
pub use sim::{chain_cycles, simulate_pipelined, simulate_sequential, stage_row_cycles, CostReport, PipelineFlags, StageCost};
pub use workload::{Chunk, Group, Pipe, PipeKind, Stage, StageKind, VitDims, Workload};
