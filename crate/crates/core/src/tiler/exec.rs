use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::placement::{apply_placement, TensorPlacement};
use super::TilerError;
use crate::arch::ArchConfig;
use crate::dramsim::ByteRange;
use crate::kerneldsl::{expand, CheckedProgram, Event, OpTrace};
use crate::logicsim::{Dtype, VectorKind};

/// One hardware work item. DRAM ranges are relative to the tensor base in
/// the operator's placement; peers are physical core ids
/// (`row * cols + col`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum WorkItem {
    DramRead { tensor: String, ranges: Vec<ByteRange> },
    DramWrite { tensor: String, ranges: Vec<ByteRange> },
    Matrix { m: u64, n: u64, k: u64, dtype: Dtype, accumulate: bool },
    Vector { kind: VectorKind, elems: u64, dtype: Dtype },
    SramCopy { bytes: u64 },
    Send { peer: u32, bytes: u64 },
    Recv { peer: u32, bytes: u64 },
}

impl WorkItem {
    pub fn is_load(&self) -> bool {
        matches!(self, WorkItem::DramRead { .. } | WorkItem::Recv { .. })
    }

    pub fn is_store(&self) -> bool {
        matches!(self, WorkItem::DramWrite { .. } | WorkItem::Send { .. })
    }

    pub fn is_compute(&self) -> bool {
        !self.is_load() && !self.is_store()
    }

    pub fn dram_bytes(&self) -> u64 {
        match self {
            WorkItem::DramRead { ranges, .. } | WorkItem::DramWrite { ranges, .. } => {
                ranges.iter().map(|r| r.bytes).sum()
            }
            _ => 0,
        }
    }

    pub fn matrix_flops(&self) -> u64 {
        match self {
            WorkItem::Matrix { m, n, k, .. } => 2 * m * n * k,
            _ => 0,
        }
    }

    pub fn vector_flops(&self, core: &crate::arch::CoreSpec) -> u64 {
        match self {
            WorkItem::Vector { kind, elems, .. } => elems * kind.flops_per_elem(core),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Iteration {
    pub items: Vec<WorkItem>,
}

/// Iterations shared by every core in `cores`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreSchedule {
    pub cores: Vec<u32>,
    pub iterations: Vec<Iteration>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operator {
    pub name: String,
    pub schedules: Vec<CoreSchedule>,
    /// Placement of the tensors named by this operator's DRAM items.
    #[serde(default)]
    pub placement: TensorPlacement,
    /// Bytes each accelerator exchanges with its peers after this operator.
    #[serde(default)]
    pub inter_accel_bytes: u64,
}

impl Operator {
    pub fn items(&self) -> impl Iterator<Item = (&CoreSchedule, &WorkItem)> {
        self.schedules
            .iter()
            .flat_map(|s| s.iterations.iter().flat_map(move |it| it.items.iter().map(move |w| (s, w))))
    }

    /// Total over all cores.
    pub fn matrix_flops(&self) -> u64 {
        self.items()
            .map(|(s, w)| w.matrix_flops() * s.cores.len() as u64)
            .sum()
    }

    pub fn dram_bytes(&self) -> u64 {
        self.items()
            .map(|(s, w)| w.dram_bytes() * s.cores.len() as u64)
            .sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionDescription {
    pub operators: Vec<Operator>,
}

impl ExecutionDescription {
    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("execution description serializes")
    }

    pub fn from_yaml(text: &str) -> Result<Self, serde_yaml::Error> {
        serde_yaml::from_str(text)
    }

    /// Checks the pipeline invariant: every SRAM tile consumed by compute
    /// or a store was loaded in a strictly earlier iteration.
    pub fn check_dependencies(&self) -> Result<(), String> {
        for op in &self.operators {
            for s in &op.schedules {
                for (i, it) in s.iterations.iter().enumerate() {
                    if i == 0 && it.items.iter().any(|w| !w.is_load()) {
                        return Err(format!("{}: first iteration must only load", op.name));
                    }
                    if i + 1 == s.iterations.len() && s.iterations.len() > 1
                        && it.items.iter().any(|w| !w.is_store())
                    {
                        return Err(format!("{}: last iteration must only store", op.name));
                    }
                }
            }
        }
        Ok(())
    }
}

/// How far loads, compute and stores of one step are spread apart.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// Loads of step `i`, compute of step `i-1` and stores of step `i-2`
    /// share one iteration.
    #[default]
    DoubleBuffered,
    /// Each step takes three iterations: load, compute, store.
    Serial,
}

/// One load/compute/store group of an unrolled trace.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Step {
    pub loads: Vec<WorkItem>,
    pub compute: Vec<WorkItem>,
    pub stores: Vec<WorkItem>,
}

fn phase(w: &WorkItem) -> u8 {
    if w.is_load() {
        0
    } else if w.is_compute() {
        1
    } else {
        2
    }
}

fn work_item(e: &Event) -> WorkItem {
    match e {
        Event::DramRead { tensor, ranges, .. } => WorkItem::DramRead {
            tensor: tensor.clone(),
            ranges: ranges.clone(),
        },
        Event::DramWrite { tensor, ranges, .. } => WorkItem::DramWrite {
            tensor: tensor.clone(),
            ranges: ranges.clone(),
        },
        Event::SramCopy { bytes, .. } => WorkItem::SramCopy { bytes: *bytes },
        Event::Matrix {
            m,
            n,
            k,
            dtype,
            accumulate,
            ..
        } => WorkItem::Matrix {
            m: *m,
            n: *n,
            k: *k,
            dtype: *dtype,
            accumulate: *accumulate,
        },
        Event::Vector {
            kind, elems, dtype, ..
        } => WorkItem::Vector {
            kind: *kind,
            elems: *elems,
            dtype: *dtype,
        },
        Event::Send { dst, bytes, .. } => WorkItem::Send {
            peer: *dst,
            bytes: *bytes,
        },
        Event::Recv { src, bytes, .. } => WorkItem::Recv {
            peer: *src,
            bytes: *bytes,
        },
    }
}

/// Splits a trace into steps. A step ends when a load follows compute or a
/// store, or compute follows a store.
pub fn split_steps(trace: &OpTrace) -> Vec<Step> {
    let mut steps: Vec<Step> = Vec::new();
    let mut cur = Step::default();
    let mut at = 0u8;
    for e in &trace.events {
        let w = work_item(e);
        let p = phase(&w);
        if p < at {
            steps.push(std::mem::take(&mut cur));
        }
        at = p;
        match p {
            0 => cur.loads.push(w),
            1 => cur.compute.push(w),
            _ => cur.stores.push(w),
        }
    }
    if cur != Step::default() {
        steps.push(cur);
    }
    steps
}

/// Arranges steps into iterations.
pub fn pipeline(steps: &[Step], kind: Pipeline) -> Vec<Iteration> {
    if steps.is_empty() {
        return Vec::new();
    }
    let n = steps.len();
    match kind {
        Pipeline::DoubleBuffered => (0..n + 2)
            .map(|i| {
                let mut items = Vec::new();
                if i < n {
                    items.extend(steps[i].loads.iter().cloned());
                }
                if (1..=n).contains(&i) {
                    items.extend(steps[i - 1].compute.iter().cloned());
                }
                if i >= 2 {
                    items.extend(steps[i - 2].stores.iter().cloned());
                }
                Iteration { items }
            })
            .collect(),
        Pipeline::Serial => steps
            .iter()
            .flat_map(|s| {
                [&s.loads, &s.compute, &s.stores].map(|v| Iteration { items: v.clone() })
            })
            .collect(),
    }
}

/// SRAM needed when load and store buffers are double-buffered.
pub fn double_buffered_sram(prog: &CheckedProgram, trace: &OpTrace) -> u64 {
    let mut doubled = BTreeSet::new();
    for e in &trace.events {
        match e {
            Event::DramRead { buffer, .. } | Event::DramWrite { buffer, .. } => {
                doubled.insert(buffer.as_str());
            }
            Event::Recv { buffer, .. } | Event::Send { buffer, .. } => {
                doubled.insert(buffer.as_str());
            }
            _ => {}
        }
    }
    prog.buffers
        .iter()
        .filter(|(_, b)| b.residence == crate::kerneldsl::Residence::Sram)
        .map(|(name, b)| {
            let bytes = b.elems() * b.dtype.bytes();
            if doubled.contains(name.as_str()) {
                2 * bytes
            } else {
                bytes
            }
        })
        .sum()
}

/// Builds the single-core execution description of a checked kernel.
pub fn generate_execution(
    prog: &CheckedProgram,
    cfg: &ArchConfig,
    placement: &TensorPlacement,
    kind: Pipeline,
) -> Result<Operator, TilerError> {
    let mut prog = prog.clone();
    apply_placement(&mut prog, placement);
    let trace = expand(&prog)?;
    let steps = split_steps(&trace);
    if kind == Pipeline::DoubleBuffered && steps.len() > 1 {
        let required = double_buffered_sram(&prog, &trace);
        if required > cfg.core.sram_bytes {
            return Err(TilerError::DoubleBufferOverflow {
                required,
                available: cfg.core.sram_bytes,
            });
        }
    }
    let me = prog
        .program
        .core_id_param
        .as_ref()
        .and_then(|c| prog.bindings.get(c))
        .map_or(0, |&c| c as u32);
    Ok(Operator {
        name: prog.program.name.clone(),
        schedules: vec![CoreSchedule {
            cores: vec![me],
            iterations: pipeline(&steps, kind),
        }],
        placement: placement.clone(),
        inter_accel_bytes: 0,
    })
}
