//! Cycle-level performance simulator for LLM accelerators built from
//! hybrid-bonded 3D-DRAM stacked on a logic die.

pub mod arch;
pub mod dramsim;
pub mod kerneldsl;
pub mod logicsim;
pub mod nocsim;
pub mod orchestrator;
pub mod partition;
pub mod thermal;
pub mod tiler;
pub mod workload;

/// The user guide. Its code samples run as doctests.
pub mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/architecture.md")]
    pub mod architecture {}
    #[doc = include_str!("../../../book/src/dram.md")]
    pub mod dram {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    pub mod kernels {}
    #[doc = include_str!("../../../book/src/partition.md")]
    pub mod partition {}
    #[doc = include_str!("../../../book/src/noc.md")]
    pub mod noc {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    pub mod simulation {}
    #[doc = include_str!("../../../book/src/thermal.md")]
    pub mod thermal {}
    #[doc = include_str!("../../../book/src/sweeps.md")]
    pub mod sweeps {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
