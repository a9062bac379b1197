use serde::{Deserialize, Serialize};

use super::TilerError;
use crate::arch::ArchConfig;
use crate::kerneldsl::{CheckedProgram, Expr, Layout, Residence, Stmt, StmtKind};
use crate::logicsim::Dtype;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacedTensor {
    pub name: String,
    pub base: u64,
    pub shape: Vec<u64>,
    /// Bytes per index step of each dimension.
    pub strides: Vec<u64>,
    pub layout: Layout,
    pub dtype: Dtype,
    pub bytes: u64,
}

impl PlacedTensor {
    pub fn end(&self) -> u64 {
        self.base + self.bytes
    }
}

/// Where each DRAM tensor of a kernel lives in one core's address space.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorPlacement {
    pub alignment: u64,
    pub tensors: Vec<PlacedTensor>,
}

impl TensorPlacement {
    pub fn get(&self, name: &str) -> Option<&PlacedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn total_bytes(&self) -> u64 {
        self.tensors.iter().map(PlacedTensor::end).max().unwrap_or(0)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("placement serializes")
    }

    pub fn from_yaml(text: &str) -> Result<Self, serde_yaml::Error> {
        serde_yaml::from_str(text)
    }
}

/// Element strides placing dimension `inner` innermost and the others in
/// row-major order.
fn strides_with_inner(shape: &[u64], inner: usize) -> Vec<u64> {
    let mut order: Vec<usize> = (0..shape.len()).filter(|&d| d != inner).collect();
    order.push(inner);
    let mut strides = vec![0; shape.len()];
    let mut s = 1;
    for &d in order.iter().rev() {
        strides[d] = s;
        s *= shape[d];
    }
    strides
}

fn mentions(e: &Expr, var: &str) -> bool {
    let mut vs = Vec::new();
    e.vars(&mut vs);
    vs.iter().any(|v| v == var)
}

/// For each copy of a tensor, the dimension indexed by the innermost loop
/// variable that moves its slice. The first copy found decides.
fn traversed_dims(body: &[Stmt], loops: &mut Vec<String>, out: &mut Vec<(String, usize)>) {
    for s in body {
        match &s.kind {
            StmtKind::For { var, body, .. } => {
                loops.push(var.clone());
                traversed_dims(body, loops, out);
                loops.pop();
            }
            StmtKind::Copy { src, dst } => {
                for r in [src, dst] {
                    let Some(slices) = &r.slices else { continue };
                    if out.iter().any(|(n, _)| *n == r.name) {
                        continue;
                    }
                    let hit = loops.iter().rev().find_map(|v| {
                        slices
                            .iter()
                            .rposition(|sl| sl.lo.as_ref().is_some_and(|e| mentions(e, v)))
                    });
                    if let Some(d) = hit {
                        out.push((r.name.clone(), d));
                    }
                }
            }
            _ => {}
        }
    }
}

/// Packs the kernel's DRAM tensors in declaration order, each base rounded
/// up to a logical row. Tensors without a declared stride or layout are
/// laid out so the dimension walked by the innermost loop is contiguous.
pub fn infer_placement(prog: &CheckedProgram, cfg: &ArchConfig) -> Result<TensorPlacement, TilerError> {
    let align = cfg.logical_row_bytes();
    let mut walked = Vec::new();
    traversed_dims(&prog.program.body, &mut Vec::new(), &mut walked);
    let mut tensors = Vec::new();
    let mut next = 0u64;
    for s in prog.program.walk() {
        let StmtKind::Tensor {
            name,
            stride,
            layout,
            ..
        } = &s.kind
        else {
            continue;
        };
        let buf = &prog.buffers[name];
        debug_assert_eq!(buf.residence, Residence::Dram);
        let dt = buf.dtype.bytes();
        let elem_strides = if stride.is_some() || layout.is_some() {
            buf.strides.clone()
        } else {
            let inner = walked
                .iter()
                .find(|(n, _)| n == name)
                .map_or(buf.shape.len() - 1, |&(_, d)| d);
            strides_with_inner(&buf.shape, inner)
        };
        let layout = match layout {
            Some(l) => *l,
            None if buf.shape.len() > 1 && elem_strides[0] == 1 && elem_strides[1] != 1 => Layout::Col,
            None => Layout::Row,
        };
        let probe = crate::kerneldsl::Buffer {
            strides: elem_strides.clone(),
            ..buf.clone()
        };
        let bytes = probe.span_bytes();
        let base = next.div_ceil(align) * align;
        next = base + bytes;
        tensors.push(PlacedTensor {
            name: name.clone(),
            base,
            shape: buf.shape.clone(),
            strides: elem_strides.iter().map(|s| s * dt).collect(),
            layout,
            dtype: buf.dtype,
            bytes,
        });
    }
    let capacity = cfg.core_capacity_bytes();
    if next > capacity {
        return Err(TilerError::PlacementCapacity {
            required: next,
            available: capacity,
        });
    }
    Ok(TensorPlacement {
        alignment: align,
        tensors,
    })
}

/// Rewrites the program's tensor strides to match `placement`.
pub fn apply_placement(prog: &mut CheckedProgram, placement: &TensorPlacement) {
    for t in &placement.tensors {
        if let Some(b) = prog.buffers.get_mut(&t.name) {
            let dt = t.dtype.bytes();
            b.strides = t.strides.iter().map(|s| s / dt).collect();
        }
    }
}
