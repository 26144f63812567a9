//! Hessian-aware mixed-precision bit allocation.

mod bitconfig;
mod evo;
mod hessian;
mod omega;

pub use bitconfig::{layer_params, model_size_mb, BitConfig, BIT_CHOICES};
pub use evo::{brute_force_search, evo_search, EvalCache, IterationLog, SearchConfig, SearchResult};
pub use hessian::{
    estimate_traces, finite_difference_trace, hessian_matvec, hutchinson_trace, BlockLoss, Probe, QuadraticLoss, TraceEstimate,
    VitLoss,
};
pub use omega::{pareto_allocate, Allocation, LayerCosts, EXACT_LAYER_LIMIT};
