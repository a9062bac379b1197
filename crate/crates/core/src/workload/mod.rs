//! Model library, decode-graph construction and lowering, DRAM benchmark
//! traces, design-space sweeps and report aggregation.

mod bench;
mod graph;
mod lower;
mod model;
mod report;
mod simulate;
mod sweep;

pub use bench::{stream, BenchResult, BenchTile, DramBench, GemmBench, PagedAttentionBench};
pub use graph::{build_decoding_graph, route_tokens, DecodeGraph, GraphOp, OpKind};
pub use lower::{lower_graph, plan_operator, LowerOptions, Lowered, Lowerer, TunedKernel};
pub use model::{DecodingScenario, FfnKind, ModelError, ModelSpec};
pub use sweep::{rows_to_csv, run_sweep, DecodeWorkload, NamedWorkload, Stage, SweepDimension, SweepError, SweepRow, SweepSpec, Workload};
pub use report::{latency_weighted_average, parse_sweep_csv, summarize, AverageRow, ReportError, ReportRow, Summary};
pub use simulate::{average_power, simulate, simulate_exec, steady_temperatures, SimulateOptions, Simulation};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tiler(#[from] crate::tiler::TilerError),
    #[error(transparent)]
    Kernel(#[from] crate::kerneldsl::KernelError),
    #[error(transparent)]
    Partition(#[from] crate::partition::PartitionError),
    #[error(transparent)]
    Sim(#[from] crate::orchestrator::SimError),
    #[error(transparent)]
    Thermal(#[from] crate::thermal::ThermalError),
}
