//! Analytical latency of the matrix engine, vector engine and SRAM buffer.
//!
//! A work item costs the larger of its compute time and its SRAM traffic
//! time; there is no fill/drain modeling inside an item.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::CoreSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    Int8,
    Fp16,
    Fp32,
}

impl Dtype {
    pub fn bytes(self) -> u64 {
        match self {
            Dtype::Int8 => 1,
            Dtype::Fp16 => 2,
            Dtype::Fp32 => 4,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "int8" => Some(Dtype::Int8),
            "fp16" => Some(Dtype::Fp16),
            "fp32" => Some(Dtype::Fp32),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::Int8 => "int8",
            Dtype::Fp16 => "fp16",
            Dtype::Fp32 => "fp32",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorKind {
    ReduceMax,
    ReduceSum,
    Add,
    Sub,
    Mul,
    Div,
    Exp,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown vector op `{0}`")]
pub struct UnknownVectorOp(pub String);

impl VectorKind {
    pub const ALL: [VectorKind; 7] = [
        VectorKind::ReduceMax,
        VectorKind::ReduceSum,
        VectorKind::Add,
        VectorKind::Sub,
        VectorKind::Mul,
        VectorKind::Div,
        VectorKind::Exp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VectorKind::ReduceMax => "reduce_max",
            VectorKind::ReduceSum => "reduce_sum",
            VectorKind::Add => "add",
            VectorKind::Sub => "sub",
            VectorKind::Mul => "mul",
            VectorKind::Div => "div",
            VectorKind::Exp => "exp",
        }
    }

    pub fn is_reduction(self) -> bool {
        matches!(self, VectorKind::ReduceMax | VectorKind::ReduceSum)
    }

    /// FLOPs charged per element.
    pub fn flops_per_elem(self, core: &CoreSpec) -> u64 {
        match self {
            VectorKind::Exp => u64::from(core.exp_flops_per_elem),
            _ => 1,
        }
    }
}

impl std::str::FromStr for VectorKind {
    type Err = UnknownVectorOp;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VectorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| UnknownVectorOp(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkItemCost {
    pub compute_cycles: u64,
    pub sram_cycles: u64,
    pub latency_cycles: u64,
}

impl WorkItemCost {
    fn new(compute_cycles: u64, sram_cycles: u64) -> Self {
        Self {
            compute_cycles,
            sram_cycles,
            latency_cycles: compute_cycles.max(sram_cycles),
        }
    }
}

fn ceil_div_f(num: f64, rate: f64) -> u64 {
    if num <= 0.0 {
        0
    } else {
        (num / rate).ceil() as u64
    }
}

/// `m×k` by `k×n` on the matrix engine. The FLOP rate does not depend on
/// dtype.
pub fn matrix_cost(m: u64, n: u64, k: u64, dtype: Dtype, core: &CoreSpec) -> WorkItemCost {
    let flops = 2.0 * m as f64 * n as f64 * k as f64;
    let bytes = (m * k + k * n + m * n) * dtype.bytes();
    WorkItemCost::new(
        ceil_div_f(flops, core.matrix_flops_per_cycle()),
        bytes.div_ceil(core.sram_bytes_per_cycle),
    )
}

/// [`matrix_cost`] plus, when accumulating, one extra read of the `m×n`
/// partial-sum tile.
pub fn gemm_cost(m: u64, n: u64, k: u64, dtype: Dtype, accumulate: bool, core: &CoreSpec) -> WorkItemCost {
    let base = matrix_cost(m, n, k, dtype, core);
    if !accumulate {
        return base;
    }
    let bytes = (m * k + k * n + 2 * m * n) * dtype.bytes();
    WorkItemCost::new(base.compute_cycles, bytes.div_ceil(core.sram_bytes_per_cycle))
}

/// Moving `bytes` between two SRAM buffers: one read and one write each.
pub fn sram_copy_cost(bytes: u64, core: &CoreSpec) -> WorkItemCost {
    WorkItemCost::new(0, (2 * bytes).div_ceil(core.sram_bytes_per_cycle))
}

/// Elementwise or reduction op over `elems` elements. SRAM traffic counts one
/// read and one write per element.
pub fn vector_cost(kind: VectorKind, elems: u64, dtype: Dtype, core: &CoreSpec) -> WorkItemCost {
    let flops = (elems * kind.flops_per_elem(core)) as f64;
    let bytes = 2 * elems * dtype.bytes();
    WorkItemCost::new(
        ceil_div_f(flops, core.vector_flops_per_cycle()),
        bytes.div_ceil(core.sram_bytes_per_cycle),
    )
}
