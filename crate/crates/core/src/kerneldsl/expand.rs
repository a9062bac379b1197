use serde::{Deserialize, Serialize};

use super::check::{initial_env, CheckedProgram, Interp, KernelError, Residence};
use crate::dramsim::ByteRange;
use crate::logicsim::{Dtype, VectorKind};

/// One concrete event of an unrolled kernel. DRAM ranges are byte offsets
/// relative to the tensor's base address.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    DramRead {
        tensor: String,
        buffer: String,
        ranges: Vec<ByteRange>,
    },
    DramWrite {
        tensor: String,
        buffer: String,
        ranges: Vec<ByteRange>,
    },
    SramCopy {
        src: String,
        dst: String,
        bytes: u64,
    },
    Matrix {
        m: u64,
        n: u64,
        k: u64,
        dtype: Dtype,
        accumulate: bool,
        out: String,
    },
    Vector {
        kind: VectorKind,
        elems: u64,
        dtype: Dtype,
        out: String,
    },
    Send {
        src: u32,
        dst: u32,
        bytes: u64,
        buffer: String,
    },
    Recv {
        src: u32,
        dst: u32,
        bytes: u64,
        buffer: String,
    },
}

impl Event {
    pub fn dram_bytes(&self) -> u64 {
        match self {
            Event::DramRead { ranges, .. } | Event::DramWrite { ranges, .. } => {
                ranges.iter().map(|r| r.bytes).sum()
            }
            _ => 0,
        }
    }

    pub fn flops(&self) -> u64 {
        match self {
            Event::Matrix { m, n, k, .. } => 2 * m * n * k,
            Event::Vector { elems, .. } => *elems,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpTrace {
    pub events: Vec<Event>,
}

impl OpTrace {
    pub fn dram_read_bytes(&self) -> u64 {
        self.events
            .iter()
            .filter(|e| matches!(e, Event::DramRead { .. }))
            .map(Event::dram_bytes)
            .sum()
    }

    pub fn dram_write_bytes(&self) -> u64 {
        self.events
            .iter()
            .filter(|e| matches!(e, Event::DramWrite { .. }))
            .map(Event::dram_bytes)
            .sum()
    }

    pub fn matrix_flops(&self) -> u64 {
        self.events
            .iter()
            .filter(|e| matches!(e, Event::Matrix { .. }))
            .map(Event::flops)
            .sum()
    }
}

/// Unrolls every loop and evaluates every tile reference.
pub fn expand(prog: &CheckedProgram) -> Result<OpTrace, KernelError> {
    let mut env = initial_env(&prog.program, &prog.bindings)?;
    let mut it = Interp::new(false, true);
    it.strides = prog
        .buffers
        .iter()
        .filter(|(_, b)| b.residence == Residence::Dram)
        .map(|(n, b)| (n.clone(), b.strides.clone()))
        .collect();
    it.run(&prog.program.body, &mut env)?;
    Ok(OpTrace { events: it.events })
}
