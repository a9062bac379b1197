//! Tensor placement, software pipelining and tiling search.

mod autotune;
mod exec;
mod placement;

use thiserror::Error;

use crate::kerneldsl::KernelError;

pub use autotune::{autotune, factor_candidates, tile_space, TileParam, TuneOptions, TuneResult};
pub use exec::{
    double_buffered_sram, generate_execution, pipeline, split_steps, CoreSchedule,
    ExecutionDescription, Iteration, Operator, Pipeline, Step, WorkItem,
};
pub use placement::{apply_placement, infer_placement, PlacedTensor, TensorPlacement};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TilerError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("placement needs {required} B after row alignment, core has {available} B")]
    PlacementCapacity { required: u64, available: u64 },
    #[error("double buffering needs {required} B of SRAM, core has {available} B")]
    DoubleBufferOverflow { required: u64, available: u64 },
    #[error("no tiling fits in SRAM")]
    NoFeasibleTiling,
}
