use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ast::*;
use super::expand::Event;
use crate::arch::ArchConfig;
use crate::dramsim::ByteRange;
use crate::logicsim::Dtype;
use crate::partition::GemmMapping;

pub type Bindings = BTreeMap<String, i64>;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("{pos}: `{name}` is not declared")]
    Undeclared { pos: Pos, name: String },
    #[error("parameter `{0}` is not bound")]
    Unbound(String),
    #[error("{pos}: shape mismatch: {message}")]
    Shape { pos: Pos, message: String },
    #[error("{pos}: index out of bounds: {message}")]
    OutOfBounds { pos: Pos, message: String },
    #[error("SRAM over capacity: allocs need {used} B, core has {capacity} B")]
    SramOverCapacity { used: u64, capacity: u64 },
    #[error("DRAM tensors need {used} B, core has {capacity} B")]
    DramOverCapacity { used: u64, capacity: u64 },
    #[error("{pos}: {message}")]
    Invalid { pos: Pos, message: String },
}

fn invalid(pos: Pos, message: impl Into<String>) -> KernelError {
    KernelError::Invalid {
        pos,
        message: message.into(),
    }
}

fn shape_err(pos: Pos, message: impl Into<String>) -> KernelError {
    KernelError::Shape {
        pos,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Residence {
    Dram,
    Sram,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Buffer {
    pub residence: Residence,
    pub shape: Vec<u64>,
    /// Element strides; only meaningful for DRAM tensors.
    pub strides: Vec<u64>,
    pub dtype: Dtype,
}

impl Buffer {
    pub fn elems(&self) -> u64 {
        self.shape.iter().product()
    }

    /// Bytes spanned in memory, including stride gaps.
    pub fn span_bytes(&self) -> u64 {
        if self.shape.contains(&0) {
            return 0;
        }
        let last: u64 = self
            .shape
            .iter()
            .zip(&self.strides)
            .map(|(d, s)| (d - 1) * s)
            .sum();
        (last + 1) * self.dtype.bytes()
    }
}

/// Evaluated directive arguments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectiveValue {
    pub name: String,
    pub args: Vec<(Option<String>, Vec<i64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckedProgram {
    pub program: KernelProgram,
    pub bindings: Bindings,
    pub buffers: BTreeMap<String, Buffer>,
    pub sram_bytes: u64,
    pub dram_bytes: u64,
    pub directives: Vec<DirectiveValue>,
}

impl CheckedProgram {
    pub fn core_array(&self) -> Option<Vec<usize>> {
        self.directive("core_array")
            .map(|d| d.args.iter().flat_map(|(_, v)| v.iter().map(|&x| x as usize)).collect())
    }

    pub fn gemm_mapping(&self) -> Option<GemmMapping> {
        let d = self.directive("split_gemm")?;
        let mut m = GemmMapping::default();
        for (key, vals) in &d.args {
            let axes: Vec<usize> = vals.iter().map(|&v| v as usize).collect();
            match key.as_deref() {
                Some("m") => m.m = axes,
                Some("k") => m.k = axes,
                Some("n") => m.n = axes,
                _ => {}
            }
        }
        Some(m)
    }

    pub fn directive(&self, name: &str) -> Option<&DirectiveValue> {
        self.directives.iter().find(|d| d.name == name)
    }
}

/// Evaluates `e` under `env`.
pub fn eval(e: &Expr, env: &Bindings, pos: Pos) -> Result<i64, KernelError> {
    Ok(match e {
        Expr::Int { value } => *value,
        Expr::Var { name } => *env.get(name).ok_or_else(|| KernelError::Undeclared {
            pos,
            name: name.clone(),
        })?,
        Expr::Neg { arg } => -eval(arg, env, pos)?,
        Expr::Bin { op, lhs, rhs } => {
            let (a, b) = (eval(lhs, env, pos)?, eval(rhs, env, pos)?);
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div | BinOp::Mod if b == 0 => return Err(invalid(pos, "division by zero")),
                BinOp::Div => a.div_euclid(b),
                BinOp::Mod => a.rem_euclid(b),
            }
        }
        Expr::Min { args } => args
            .iter()
            .map(|a| eval(a, env, pos))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .min()
            .unwrap_or(0),
        Expr::Max { args } => args
            .iter()
            .map(|a| eval(a, env, pos))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .max()
            .unwrap_or(0),
    })
}

fn eval_dims(dims: &[Expr], env: &Bindings, pos: Pos) -> Result<Vec<u64>, KernelError> {
    dims.iter()
        .map(|d| {
            let v = eval(d, env, pos)?;
            u64::try_from(v)
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| invalid(pos, format!("dimension `{d}` evaluates to {v}")))
        })
        .collect()
}

fn row_major(shape: &[u64]) -> Vec<u64> {
    let mut strides = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

fn col_major(shape: &[u64]) -> Vec<u64> {
    let mut strides = vec![1; shape.len()];
    for d in 1..shape.len() {
        strides[d] = strides[d - 1] * shape[d - 1];
    }
    strides
}

/// Tensor-relative byte ranges covered by a box, merged where adjacent.
pub fn box_ranges(buf: &Buffer, lo: &[u64], ext: &[u64]) -> Vec<ByteRange> {
    let dt = buf.dtype.bytes();
    let n = buf.shape.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&d| std::cmp::Reverse(buf.strides[d]));
    let (outer, run) = match order.last() {
        Some(&inner) if buf.strides[inner] == 1 => (&order[..n - 1], ext[inner] * dt),
        _ => (&order[..], dt),
    };
    let base: u64 = (0..n).map(|d| lo[d] * buf.strides[d]).sum::<u64>() * dt;
    let mut out: Vec<ByteRange> = Vec::new();
    let mut idx = vec![0u64; outer.len()];
    loop {
        let off = base
            + outer
                .iter()
                .zip(&idx)
                .map(|(&d, &i)| i * buf.strides[d] * dt)
                .sum::<u64>();
        match out.last_mut() {
            Some(last) if last.end() == off => last.bytes += run,
            _ => out.push(ByteRange::new(off, run)),
        }
        let mut d = outer.len();
        loop {
            if d == 0 {
                return out;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < ext[outer[d]] {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// A resolved operand: buffer name, box origin and extents.
struct View {
    name: String,
    lo: Vec<u64>,
    ext: Vec<u64>,
    whole: bool,
}

pub(crate) struct Interp {
    pub buffers: BTreeMap<String, Buffer>,
    /// Valid extents of each SRAM buffer after the last write to it.
    live: BTreeMap<String, Vec<u64>>,
    pub directives: Vec<DirectiveValue>,
    pub events: Vec<Event>,
    /// DRAM strides fixed by a placement, by tensor name.
    pub strides: BTreeMap<String, Vec<u64>>,
    /// Check mode runs every loop body once at its lower bound.
    once: bool,
    emit: bool,
}

impl Interp {
    pub fn new(once: bool, emit: bool) -> Self {
        Self {
            buffers: BTreeMap::new(),
            live: BTreeMap::new(),
            directives: Vec::new(),
            events: Vec::new(),
            strides: BTreeMap::new(),
            once,
            emit,
        }
    }

    fn push(&mut self, e: Event) {
        if self.emit {
            self.events.push(e);
        }
    }

    fn buffer(&self, r: &TileRef) -> Result<&Buffer, KernelError> {
        self.buffers.get(&r.name).ok_or_else(|| KernelError::Undeclared {
            pos: r.pos,
            name: r.name.clone(),
        })
    }

    fn view(&self, r: &TileRef, env: &Bindings) -> Result<View, KernelError> {
        let buf = self.buffer(r)?;
        let Some(slices) = &r.slices else {
            let ext = match buf.residence {
                Residence::Sram => self.live[&r.name].clone(),
                Residence::Dram => buf.shape.clone(),
            };
            return Ok(View {
                name: r.name.clone(),
                lo: vec![0; ext.len()],
                ext,
                whole: true,
            });
        };
        if slices.len() != buf.shape.len() {
            return Err(shape_err(
                r.pos,
                format!(
                    "`{}` has {} dimensions, indexed with {}",
                    r.name,
                    buf.shape.len(),
                    slices.len()
                ),
            ));
        }
        let mut lo = Vec::new();
        let mut ext = Vec::new();
        let bounds = match buf.residence {
            Residence::Sram => &self.live[&r.name],
            Residence::Dram => &buf.shape,
        };
        for (d, (s, &dim)) in slices.iter().zip(bounds).enumerate() {
            let a = s.lo.as_ref().map(|e| eval(e, env, r.pos)).transpose()?.unwrap_or(0);
            let b = s
                .hi
                .as_ref()
                .map(|e| eval(e, env, r.pos))
                .transpose()?
                .unwrap_or(dim as i64);
            if a < 0 || a >= dim as i64 || b <= a {
                return Err(KernelError::OutOfBounds {
                    pos: r.pos,
                    message: format!("`{}` dim {d}: [{a}, {b}) against extent {dim}", r.name),
                });
            }
            // edge tiles are clipped to the remainder
            let b = b.min(dim as i64);
            lo.push(a as u64);
            ext.push((b - a) as u64);
        }
        Ok(View {
            name: r.name.clone(),
            lo,
            ext,
            whole: false,
        })
    }

    /// Records that `ext` was written into the `out` view.
    fn write(&mut self, out: &View, ext: &[u64], pos: Pos) -> Result<(), KernelError> {
        let buf = &self.buffers[&out.name];
        if buf.residence != Residence::Sram {
            return Err(invalid(pos, format!("`{}` must be an SRAM alloc", out.name)));
        }
        if out.whole {
            if ext.len() != buf.shape.len() || ext.iter().zip(&buf.shape).any(|(e, s)| e > s) {
                return Err(shape_err(
                    pos,
                    format!("{ext:?} does not fit `{}` of shape {:?}", out.name, buf.shape),
                ));
            }
            self.live.insert(out.name.clone(), ext.to_vec());
        } else if out.ext != ext {
            return Err(shape_err(
                pos,
                format!("{ext:?} written into slice of extents {:?}", out.ext),
            ));
        }
        Ok(())
    }

    fn sram_operand(&self, r: &TileRef, env: &Bindings) -> Result<(View, Dtype), KernelError> {
        let buf = self.buffer(r)?;
        if buf.residence != Residence::Sram {
            return Err(invalid(
                r.pos,
                format!("`{}` is a DRAM tensor; compute operands must be SRAM allocs", r.name),
            ));
        }
        let dt = buf.dtype;
        Ok((self.view(r, env)?, dt))
    }

    pub fn run(&mut self, body: &[Stmt], env: &mut Bindings) -> Result<(), KernelError> {
        for s in body {
            self.stmt(s, env)?;
        }
        Ok(())
    }

    fn declare(&mut self, pos: Pos, name: &str, buf: Buffer, env: &Bindings) -> Result<(), KernelError> {
        if self.buffers.contains_key(name) || env.contains_key(name) {
            return Err(invalid(pos, format!("`{name}` is already declared")));
        }
        if buf.residence == Residence::Sram {
            self.live.insert(name.to_string(), buf.shape.clone());
        }
        self.buffers.insert(name.to_string(), buf);
        Ok(())
    }

    fn stmt(&mut self, s: &Stmt, env: &mut Bindings) -> Result<(), KernelError> {
        let pos = s.pos;
        match &s.kind {
            StmtKind::Tensor {
                name,
                shape,
                dtype,
                stride,
                layout,
            } => {
                let shape = eval_dims(shape, env, pos)?;
                let strides = match (stride, layout) {
                    (Some(st), _) => {
                        let st = eval_dims(st, env, pos)?;
                        if st.len() != shape.len() {
                            return Err(shape_err(pos, "stride rank differs from shape rank"));
                        }
                        st
                    }
                    _ if self.strides.contains_key(name) => self.strides[name].clone(),
                    (None, Some(Layout::Col)) => col_major(&shape),
                    (None, _) => row_major(&shape),
                };
                let buf = Buffer {
                    residence: Residence::Dram,
                    shape,
                    strides,
                    dtype: *dtype,
                };
                self.declare(pos, name, buf, env)
            }
            StmtKind::Alloc { name, shape, dtype } => {
                let shape = eval_dims(shape, env, pos)?;
                let buf = Buffer {
                    residence: Residence::Sram,
                    strides: row_major(&shape),
                    shape,
                    dtype: *dtype,
                };
                self.declare(pos, name, buf, env)
            }
            StmtKind::Copy { src, dst } => {
                let (sb, db) = (self.buffer(src)?.clone(), self.buffer(dst)?.clone());
                if sb.dtype != db.dtype {
                    return Err(shape_err(pos, "copy between different dtypes"));
                }
                let sv = self.view(src, env)?;
                let dv = self.view(dst, env)?;
                match (sb.residence, db.residence) {
                    (Residence::Dram, Residence::Dram) => {
                        Err(invalid(pos, "copy between two DRAM tensors"))
                    }
                    (Residence::Dram, Residence::Sram) => {
                        self.write(&dv, &sv.ext, pos)?;
                        let ranges = box_ranges(&sb, &sv.lo, &sv.ext);
                        self.push(Event::DramRead {
                            tensor: sv.name,
                            buffer: dv.name,
                            ranges,
                        });
                        Ok(())
                    }
                    (Residence::Sram, Residence::Dram) => {
                        if sv.ext != dv.ext {
                            return Err(shape_err(
                                pos,
                                format!("writing {:?} into slice of extents {:?}", sv.ext, dv.ext),
                            ));
                        }
                        let ranges = box_ranges(&db, &dv.lo, &dv.ext);
                        self.push(Event::DramWrite {
                            tensor: dv.name,
                            buffer: sv.name,
                            ranges,
                        });
                        Ok(())
                    }
                    (Residence::Sram, Residence::Sram) => {
                        self.write(&dv, &sv.ext, pos)?;
                        let bytes = sv.ext.iter().product::<u64>() * sb.dtype.bytes();
                        self.push(Event::SramCopy {
                            src: sv.name,
                            dst: dv.name,
                            bytes,
                        });
                        Ok(())
                    }
                }
            }
            StmtKind::Gemm {
                a,
                b,
                out,
                accumulate,
            } => {
                let (av, dt) = self.sram_operand(a, env)?;
                let (bv, _) = self.sram_operand(b, env)?;
                let (ov, _) = self.sram_operand(out, env)?;
                if av.ext.len() != 2 || bv.ext.len() != 2 {
                    return Err(shape_err(pos, "gemm operands must be 2-D"));
                }
                let (m, k, k2, n) = (av.ext[0], av.ext[1], bv.ext[0], bv.ext[1]);
                if k != k2 {
                    return Err(shape_err(
                        pos,
                        format!("gemm inner dimensions differ: ({m}, {k}) x ({k2}, {n})"),
                    ));
                }
                self.write(&ov, &[m, n], pos)?;
                self.push(Event::Matrix {
                    m,
                    n,
                    k,
                    dtype: dt,
                    accumulate: *accumulate,
                    out: ov.name,
                });
                Ok(())
            }
            StmtKind::Vector { op, operands, out } => {
                let mut views = Vec::new();
                let mut dt = None;
                for r in operands {
                    let (v, d) = self.sram_operand(r, env)?;
                    dt.get_or_insert(d);
                    views.push(v);
                }
                let dt = dt.expect("arity checked by parser");
                let (ov, _) = self.sram_operand(out, env)?;
                let (result, elems) = if op.is_reduction() {
                    let mut shape = views[0].ext.clone();
                    let elems = shape.iter().product();
                    if let Some(last) = shape.last_mut() {
                        *last = 1;
                    }
                    (shape, elems)
                } else {
                    let shape = broadcast(&views, pos)?;
                    let elems = shape.iter().product();
                    (shape, elems)
                };
                self.write(&ov, &result, pos)?;
                self.push(Event::Vector {
                    kind: *op,
                    elems,
                    dtype: dt,
                    out: ov.name,
                });
                Ok(())
            }
            StmtKind::Send {
                src_core,
                dst_core,
                data,
            }
            | StmtKind::Recv {
                src_core,
                dst_core,
                data,
            } => {
                let (v, dt) = self.sram_operand(data, env)?;
                let core = |e: &Expr| -> Result<u32, KernelError> {
                    let c = eval(e, env, pos)?;
                    u32::try_from(c).map_err(|_| invalid(pos, format!("core id {c} is negative")))
                };
                let (src, dst) = (core(src_core)?, core(dst_core)?);
                let bytes = v.ext.iter().product::<u64>() * dt.bytes();
                if matches!(s.kind, StmtKind::Send { .. }) {
                    self.push(Event::Send {
                        src,
                        dst,
                        bytes,
                        buffer: v.name,
                    });
                } else {
                    self.write(&v, &v.ext.clone(), pos)?;
                    self.push(Event::Recv {
                        src,
                        dst,
                        bytes,
                        buffer: v.name,
                    });
                }
                Ok(())
            }
            StmtKind::For {
                var,
                lo,
                hi,
                step,
                body,
            } => {
                if self.buffers.contains_key(var) || env.contains_key(var) {
                    return Err(invalid(pos, format!("loop variable `{var}` shadows a name")));
                }
                let (lo, hi, step) = (eval(lo, env, pos)?, eval(hi, env, pos)?, eval(step, env, pos)?);
                if step <= 0 {
                    return Err(invalid(pos, format!("loop step {step} must be positive")));
                }
                let mut i = lo;
                while i < hi {
                    env.insert(var.clone(), i);
                    let r = self.run(body, env);
                    env.remove(var);
                    r?;
                    if self.once {
                        break;
                    }
                    i += step;
                }
                Ok(())
            }
            StmtKind::Directive { name, args } => {
                if self.directives.iter().any(|d| &d.name == name) {
                    if self.once {
                        return Err(invalid(pos, format!("duplicate `{name}` directive")));
                    }
                    return Ok(());
                }
                let args = args
                    .iter()
                    .map(|a| {
                        let vals = a
                            .values
                            .iter()
                            .map(|e| eval(e, env, pos))
                            .collect::<Result<Vec<_>, _>>()?;
                        Ok((a.key.clone(), vals))
                    })
                    .collect::<Result<Vec<_>, KernelError>>()?;
                self.directives.push(DirectiveValue {
                    name: name.clone(),
                    args,
                });
                Ok(())
            }
        }
    }
}

fn broadcast(views: &[View], pos: Pos) -> Result<Vec<u64>, KernelError> {
    let rank = views.iter().map(|v| v.ext.len()).max().unwrap_or(0);
    let mut out = vec![1u64; rank];
    for v in views {
        let off = rank - v.ext.len();
        for (d, &e) in v.ext.iter().enumerate() {
            let o = &mut out[off + d];
            if *o == 1 {
                *o = e;
            } else if e != 1 && e != *o {
                let shapes: Vec<_> = views.iter().map(|v| format!("{:?}", v.ext)).collect();
                return Err(shape_err(
                    pos,
                    format!("cannot broadcast {}", shapes.join(" with ")),
                ));
            }
        }
    }
    Ok(out)
}

pub(crate) fn initial_env(prog: &KernelProgram, bindings: &Bindings) -> Result<Bindings, KernelError> {
    let mut env = Bindings::new();
    for p in prog.params.iter().chain(&prog.core_id_param) {
        let v = bindings.get(p).ok_or_else(|| KernelError::Unbound(p.clone()))?;
        env.insert(p.clone(), *v);
    }
    Ok(env)
}

/// Verifies shapes, declarations and capacities under `bindings`.
///
/// Loop bodies are checked once at their lower bound; edge tiles are
/// revisited by [`super::expand`].
pub fn typecheck(
    prog: &KernelProgram,
    cfg: &ArchConfig,
    bindings: &Bindings,
) -> Result<CheckedProgram, KernelError> {
    let mut env = initial_env(prog, bindings)?;
    let mut it = Interp::new(true, false);
    it.run(&prog.body, &mut env)?;
    let (mut sram, mut dram) = (0, 0);
    for b in it.buffers.values() {
        match b.residence {
            Residence::Sram => sram += b.elems() * b.dtype.bytes(),
            Residence::Dram => dram += b.span_bytes(),
        }
    }
    if sram > cfg.core.sram_bytes {
        return Err(KernelError::SramOverCapacity {
            used: sram,
            capacity: cfg.core.sram_bytes,
        });
    }
    if dram > cfg.core_capacity_bytes() {
        return Err(KernelError::DramOverCapacity {
            used: dram,
            capacity: cfg.core_capacity_bytes(),
        });
    }
    Ok(CheckedProgram {
        program: prog.clone(),
        bindings: env,
        buffers: it.buffers,
        sram_bytes: sram,
        dram_bytes: dram,
        directives: it.directives,
    })
}
