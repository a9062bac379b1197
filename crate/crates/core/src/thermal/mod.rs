//! Transient and steady-state heat flow through the die stack, and the
//! frequency regulation loop that keeps DRAM below its retention limit.

mod grid;
mod regulate;
mod sparse;
mod stack;

pub use grid::{build_matrices, power_map, ThermalError, ThermalGrid, SOLVER_TOLERANCE};
pub use regulate::{regulate, Regulation, FREQUENCY_FLOOR_GHZ, FREQUENCY_STEP_GHZ};
pub use sparse::{pcg, Csr, SolveInfo};
pub use stack::{
    Layer, LayerKind, StackDescription, BOND_CONDUCTIVITY, CLOUD_HTC, DEFAULT_T_MAX_C, EDGE_HTC,
    SILICON_CONDUCTIVITY, SILICON_HEAT_CAPACITY,
};
