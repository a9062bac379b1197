//! Global manager: runs an execution description operator by operator.
//!
//! Every core starts an operator at the same cycle and the next operator
//! starts when the slowest core finishes. Inside an operator a core runs
//! its iterations back to back; an iteration issues all of its DRAM
//! requests, NoC sends and its compute chain at once and ends when the
//! last of them completes. Time is counted in core cycles.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ArchConfig, EnergySpec, InterAccelSpec};
use crate::dramsim::{AccessKind, AddressError, ByteRange, MemorySystem, Scheduling};
use crate::logicsim::{gemm_cost, sram_copy_cost, vector_cost};
use crate::nocsim::{Mesh, Packet};
use crate::tiler::{CoreSchedule, ExecutionDescription, Iteration, Operator, TensorPlacement, WorkItem};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("operator {operator}: tensor `{tensor}` has no placement")]
    UnknownTensor { operator: String, tensor: String },
    #[error("operator {operator}: {source}")]
    Address {
        operator: String,
        source: AddressError,
    },
    #[error("operator {operator}: core {core} is outside the {cores}-core array")]
    CoreOutOfRange { operator: String, core: u32, cores: u32 },
    #[error("operator {operator}: communication deadlock")]
    Deadlock { operator: String },
}

/// `link_latency + bytes / bandwidth`, in seconds.
pub fn inter_accel_latency(bytes: u64, link: &InterAccelSpec) -> f64 {
    link.link_latency_s + bytes as f64 / (link.bandwidth_gbps * 1e9)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Energy {
    pub dram_j: f64,
    pub compute_j: f64,
    pub noc_j: f64,
}

impl Energy {
    pub fn new(dram_bytes: u64, flops: u64, byte_hops: u64, e: &EnergySpec) -> Self {
        Self {
            dram_j: dram_bytes as f64 * 8.0 * e.dram_pj_per_bit * 1e-12,
            compute_j: flops as f64 * e.flop_pj * 1e-12,
            noc_j: byte_hops as f64 * e.noc_pj_per_byte_hop * 1e-12,
        }
    }

    pub fn total(&self) -> f64 {
        self.dram_j + self.compute_j + self.noc_j
    }

    pub fn add(&mut self, o: &Energy) {
        self.dram_j += o.dram_j;
        self.compute_j += o.compute_j;
        self.noc_j += o.noc_j;
    }
}

/// Lower bounds on an operator's latency, in core cycles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Roofline {
    pub compute_cycles: f64,
    pub dram_cycles: f64,
    pub noc_cycles: f64,
}

impl Roofline {
    pub fn bound(&self) -> f64 {
        self.compute_cycles.max(self.dram_cycles).max(self.noc_cycles)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorReport {
    pub name: String,
    pub start_cycle: u64,
    pub cycles: u64,
    pub seconds: f64,
    pub flops: u64,
    pub dram_bytes: u64,
    pub noc_bytes: u64,
    pub roofline: Roofline,
    /// Roofline bound over simulated latency.
    pub utilization: f64,
    /// Achieved over peak DRAM bandwidth of the cores that touch DRAM.
    pub dram_utilization: f64,
    /// Per-channel busy fraction on the slowest core.
    pub channel_utilization: Vec<f64>,
    pub noc_makespan: u64,
    pub inter_accel_seconds: f64,
    pub energy: Energy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub frequency_ghz: f64,
    pub operators: Vec<OperatorReport>,
    pub total_cycles: u64,
    pub inter_accel_seconds: f64,
    pub end_to_end_seconds: f64,
    pub energy: Energy,
    #[serde(default)]
    pub peak_temperature_c: Option<f64>,
}

impl SimReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "operator",
            "start_cycle",
            "cycles",
            "seconds",
            "flops",
            "dram_bytes",
            "noc_bytes",
            "bound_cycles",
            "utilization",
            "dram_utilization",
            "noc_makespan",
            "inter_accel_seconds",
            "energy_j",
            "frequency_ghz",
            "peak_temperature_c",
        ])
        .expect("in-memory write");
        for o in &self.operators {
            w.write_record([
                o.name.clone(),
                o.start_cycle.to_string(),
                o.cycles.to_string(),
                format!("{:.9e}", o.seconds),
                o.flops.to_string(),
                o.dram_bytes.to_string(),
                o.noc_bytes.to_string(),
                format!("{:.3}", o.roofline.bound()),
                format!("{:.6}", o.utilization),
                format!("{:.6}", o.dram_utilization),
                o.noc_makespan.to_string(),
                format!("{:.9e}", o.inter_accel_seconds),
                format!("{:.9e}", o.energy.total()),
                String::new(),
                String::new(),
            ])
            .expect("in-memory write");
        }
        w.write_record([
            "total".to_string(),
            "0".into(),
            self.total_cycles.to_string(),
            format!("{:.9e}", self.end_to_end_seconds),
            self.operators.iter().map(|o| o.flops).sum::<u64>().to_string(),
            self.operators.iter().map(|o| o.dram_bytes).sum::<u64>().to_string(),
            self.operators.iter().map(|o| o.noc_bytes).sum::<u64>().to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            format!("{:.9e}", self.inter_accel_seconds),
            format!("{:.9e}", self.energy.total()),
            format!("{}", self.frequency_ghz),
            self.peak_temperature_c.map_or(String::new(), |t| format!("{t:.4}")),
        ])
        .expect("in-memory write");
        String::from_utf8(w.into_inner().expect("flush")).expect("csv is utf-8")
    }
}

/// Converts between core and DRAM cycles.
#[derive(Debug, Clone, Copy)]
struct Clocks {
    ratio: f64,
}

impl Clocks {
    fn new(cfg: &ArchConfig) -> Self {
        Self {
            ratio: cfg.dram_clock_ghz() / cfg.core.frequency_ghz,
        }
    }

    fn to_dram(self, t: u64) -> u64 {
        (t as f64 * self.ratio - 1e-9).ceil().max(0.0) as u64
    }

    fn to_core(self, d: u64) -> u64 {
        (d as f64 / self.ratio - 1e-9).ceil().max(0.0) as u64
    }
}

/// Resolved DRAM requests of one iteration.
fn dram_tile(
    op: &Operator,
    it: &Iteration,
) -> Result<Vec<(AccessKind, ByteRange)>, SimError> {
    let mut tile = Vec::new();
    for w in &it.items {
        let (kind, tensor, ranges) = match w {
            WorkItem::DramRead { tensor, ranges } => (AccessKind::Read, tensor, ranges),
            WorkItem::DramWrite { tensor, ranges } => (AccessKind::Write, tensor, ranges),
            _ => continue,
        };
        let base = base_of(&op.placement, tensor).ok_or_else(|| SimError::UnknownTensor {
            operator: op.name.clone(),
            tensor: tensor.clone(),
        })?;
        tile.extend(ranges.iter().map(|r| (kind, ByteRange::new(base + r.addr, r.bytes))));
    }
    Ok(tile)
}

fn base_of(p: &TensorPlacement, tensor: &str) -> Option<u64> {
    p.get(tensor).map(|t| t.base)
}

/// Latency of the dependent compute chain of one iteration.
fn compute_chain(it: &Iteration, cfg: &ArchConfig) -> u64 {
    let core = &cfg.core;
    it.items
        .iter()
        .map(|w| match w {
            WorkItem::Matrix {
                m,
                n,
                k,
                dtype,
                accumulate,
            } => gemm_cost(*m, *n, *k, *dtype, *accumulate, core).latency_cycles,
            WorkItem::Vector { kind, elems, dtype } => {
                vector_cost(*kind, *elems, *dtype, core).latency_cycles
            }
            WorkItem::SramCopy { bytes } => sram_copy_cost(*bytes, core).latency_cycles,
            _ => 0,
        })
        .sum()
}

fn has_noc(s: &CoreSchedule) -> bool {
    s.iterations
        .iter()
        .any(|it| it.items.iter().any(|w| matches!(w, WorkItem::Send { .. } | WorkItem::Recv { .. })))
}

/// Result of one core's run through an operator.
#[derive(Debug, Clone, Default)]
struct CoreRun {
    done: u64,
    dram_bytes: u64,
    /// `(busy DRAM cycles, channel)` per channel.
    channel_busy: Vec<u64>,
}

struct CoreState<'a> {
    sched: &'a CoreSchedule,
    mem: MemorySystem,
    iter: usize,
    local_done: u64,
    sends_pending: usize,
    /// Expected receives of the current iteration, by source core.
    recv_pending: BTreeMap<u32, usize>,
    /// Packets that arrived before the iteration expecting them.
    mailbox: BTreeMap<u32, usize>,
    noc_done: u64,
    /// Delivery of the latest own send. Sends do not hold back the next
    /// iteration, only the end of the operator.
    send_done: u64,
    finished: bool,
}

impl<'a> CoreState<'a> {
    fn new(sched: &'a CoreSchedule, cfg: &ArchConfig) -> Self {
        Self {
            sched,
            mem: MemorySystem::new(cfg),
            iter: 0,
            local_done: 0,
            sends_pending: 0,
            recv_pending: BTreeMap::new(),
            mailbox: BTreeMap::new(),
            noc_done: 0,
            send_done: 0,
            finished: sched.iterations.is_empty(),
        }
    }

    fn ready(&self) -> bool {
        !self.finished && self.recv_pending.is_empty()
    }

    fn done_at(&self) -> u64 {
        self.local_done.max(self.noc_done)
    }
}

struct OperatorSim<'a> {
    cfg: &'a ArchConfig,
    op: &'a Operator,
    clocks: Clocks,
}

impl<'a> OperatorSim<'a> {
    /// Starts the current iteration of `st` at cycle `t`. Sends are pushed
    /// into `mesh` when one is given.
    fn begin(
        &self,
        me: u32,
        st: &mut CoreState,
        t: u64,
        mesh: Option<&mut Mesh>,
        tag: &mut u64,
        owners: &mut HashMap<u64, u32>,
    ) -> Result<(), SimError> {
        let it = &st.sched.iterations[st.iter];
        let tile = dram_tile(self.op, it)?;
        let mut dram_done = t;
        if !tile.is_empty() {
            let ready = self.clocks.to_dram(t);
            st.mem
                .issue_tile(ready, &tile, Scheduling::RowGrouped)
                .map_err(|source| SimError::Address {
                    operator: self.op.name.clone(),
                    source,
                })?;
            dram_done = self.clocks.to_core(st.mem.drain());
        }
        st.local_done = dram_done.max(t + compute_chain(it, self.cfg));
        st.noc_done = t;
        st.recv_pending.clear();
        let cols = self.cfg.noc.cols;
        let mut mesh = mesh;
        for w in &it.items {
            match w {
                WorkItem::Send { peer, bytes } => {
                    let m = mesh.as_deref_mut().expect("networked core has a mesh");
                    *tag += 1;
                    owners.insert(*tag, me);
                    m.inject(
                        Packet {
                            src: (me / cols, me % cols),
                            dst: (peer / cols, peer % cols),
                            bytes: *bytes,
                            tag: *tag,
                        },
                        t,
                    );
                    st.sends_pending += 1;
                }
                WorkItem::Recv { peer, .. } => {
                    let have = st.mailbox.entry(*peer).or_default();
                    if *have > 0 {
                        *have -= 1;
                    } else {
                        *st.recv_pending.entry(*peer).or_default() += 1;
                    }
                }
                _ => {}
            }
        }
        st.mailbox.retain(|_, v| *v > 0);
        Ok(())
    }

    fn finish(&self, st: &CoreState) -> CoreRun {
        CoreRun {
            done: st.done_at().max(st.send_done),
            dram_bytes: st.mem.stats().bytes,
            channel_busy: st.mem.channels().iter().map(|c| c.stats.busy_cycles).collect(),
        }
    }

    /// Runs one schedule that does not touch the NoC.
    fn run_local(&self, sched: &CoreSchedule, start: u64) -> Result<CoreRun, SimError> {
        let mut st = CoreState::new(sched, self.cfg);
        let mut t = start;
        let (mut tag, mut owners) = (0, HashMap::new());
        while st.iter < sched.iterations.len() {
            self.begin(0, &mut st, t, None, &mut tag, &mut owners)?;
            t = st.done_at();
            st.iter += 1;
        }
        st.local_done = t;
        st.noc_done = t;
        Ok(self.finish(&st))
    }

    /// Co-simulates cores that exchange packets.
    fn run_networked(
        &self,
        cores: &[(u32, &'a CoreSchedule)],
        start: u64,
        mesh: &mut Mesh,
    ) -> Result<Vec<CoreRun>, SimError> {
        let mut states: Vec<CoreState> = cores.iter().map(|(_, s)| CoreState::new(s, self.cfg)).collect();
        let index: HashMap<u32, usize> = cores.iter().enumerate().map(|(i, (c, _))| (*c, i)).collect();
        let mut tag = 0u64;
        let mut owners = HashMap::new();
        mesh.advance_idle(start);
        for (i, st) in states.iter_mut().enumerate() {
            if !st.finished {
                self.begin(cores[i].0, st, start, Some(mesh), &mut tag, &mut owners)?;
            }
        }
        let cols = self.cfg.noc.cols;
        loop {
            let next_core = states.iter().filter(|s| s.ready()).map(|s| s.done_at()).min();
            let next_mesh = if mesh.busy() { mesh.next_activity() } else { None };
            match (next_core, next_mesh) {
                (_, Some(m)) if next_core.is_none_or(|c| m < c) => {
                    if m > mesh.now() {
                        mesh.advance_to(m);
                    }
                    mesh.tick();
                    for (i, (core, _)) in cores.iter().enumerate() {
                        for a in mesh.arrivals((core / cols, core % cols)) {
                            let src = a.src.0 * cols + a.src.1;
                            let st = &mut states[i];
                            match st.recv_pending.get_mut(&src) {
                                Some(n) => {
                                    *n -= 1;
                                    if *n == 0 {
                                        st.recv_pending.remove(&src);
                                    }
                                    st.noc_done = st.noc_done.max(a.cycle);
                                }
                                None => *st.mailbox.entry(src).or_default() += 1,
                            }
                            if let Some(owner) = owners.remove(&a.tag) {
                                if let Some(&j) = index.get(&owner) {
                                    let s = &mut states[j];
                                    s.sends_pending -= 1;
                                    s.send_done = s.send_done.max(a.cycle);
                                }
                            }
                        }
                    }
                }
                (Some(t), _) => {
                    for (i, st) in states.iter_mut().enumerate() {
                        if st.ready() && st.done_at() == t {
                            st.iter += 1;
                            if st.iter == st.sched.iterations.len() {
                                st.finished = true;
                                st.local_done = t;
                                st.noc_done = t;
                            } else {
                                self.begin(cores[i].0, st, t, Some(mesh), &mut tag, &mut owners)?;
                            }
                        }
                    }
                }
                (None, _) => {
                    if states.iter().all(|s| s.finished) {
                        break;
                    }
                    return Err(SimError::Deadlock {
                        operator: self.op.name.clone(),
                    });
                }
            }
        }
        Ok(states.iter().map(|s| self.finish(s)).collect())
    }
}

/// Per-core traffic totals used by the roofline.
fn roofline(op: &Operator, cfg: &ArchConfig) -> Roofline {
    let mut r = Roofline::default();
    let mpeak = cfg.core.matrix_flops_per_cycle();
    let vpeak = cfg.core.vector_flops_per_cycle();
    let dpeak = cfg.dram_peak_bytes_per_core_cycle();
    let noc = &cfg.noc;
    let flit = u64::from(noc.flit_bytes());
    let k = noc.cycles_per_flit();
    let n = (noc.rows * noc.cols) as usize;
    // flits per directed link, keyed by (router, direction)
    let mut link: HashMap<(u32, u8), u64> = HashMap::new();
    let mut inj = vec![0u64; n];
    let mut ej = vec![0u64; n];
    for s in &op.schedules {
        let (mut mf, mut vf, mut db) = (0u64, 0u64, 0u64);
        for it in &s.iterations {
            for w in &it.items {
                mf += w.matrix_flops();
                vf += w.vector_flops(&cfg.core);
                db += w.dram_bytes();
            }
        }
        r.compute_cycles = r.compute_cycles.max(mf as f64 / mpeak + vf as f64 / vpeak);
        r.dram_cycles = r.dram_cycles.max(db as f64 / dpeak);
        for &core in &s.cores {
            for it in &s.iterations {
                for w in &it.items {
                    let WorkItem::Send { peer, bytes } = w else { continue };
                    if *peer == core || *bytes == 0 {
                        continue;
                    }
                    let flits = bytes.div_ceil(flit);
                    inj[core as usize % n] += flits;
                    ej[*peer as usize % n] += flits;
                    let (mut r0, mut c0) = (core / noc.cols, core % noc.cols);
                    let (r1, c1) = (peer / noc.cols, peer % noc.cols);
                    while c0 != c1 {
                        let dir = if c1 > c0 { 0 } else { 1 };
                        *link.entry((r0 * noc.cols + c0, dir)).or_default() += flits;
                        c0 = if c1 > c0 { c0 + 1 } else { c0 - 1 };
                    }
                    while r0 != r1 {
                        let dir = if r1 > r0 { 2 } else { 3 };
                        *link.entry((r0 * noc.cols + c0, dir)).or_default() += flits;
                        r0 = if r1 > r0 { r0 + 1 } else { r0 - 1 };
                    }
                }
            }
        }
    }
    let link_max = link.values().copied().max().unwrap_or(0) * k;
    let port_max = inj.iter().chain(&ej).copied().max().unwrap_or(0);
    r.noc_cycles = link_max.max(port_max) as f64;
    r
}

/// Runs `exec` on `cfg`. Operators are serialized; cores within an operator
/// that share a NoC-free schedule are simulated once.
pub fn run(exec: &ExecutionDescription, cfg: &ArchConfig) -> Result<SimReport, SimError> {
    let clocks = Clocks::new(cfg);
    let cores = cfg.noc.rows * cfg.noc.cols;
    let freq = cfg.core.frequency_ghz;
    let mut t = 0u64;
    let mut reports = Vec::new();
    let mut energy = Energy::default();
    let mut inter_total = 0.0;
    for op in &exec.operators {
        for s in &op.schedules {
            if let Some(&c) = s.cores.iter().find(|&&c| c >= cores) {
                return Err(SimError::CoreOutOfRange {
                    operator: op.name.clone(),
                    core: c,
                    cores,
                });
            }
        }
        let sim = OperatorSim { cfg, op, clocks };
        let local: Vec<&CoreSchedule> = op.schedules.iter().filter(|s| !has_noc(s)).collect();
        let local_runs: Vec<CoreRun> = local
            .par_iter()
            .map(|s| sim.run_local(s, t))
            .collect::<Result<_, _>>()?;
        let networked: Vec<(u32, &CoreSchedule)> = op
            .schedules
            .iter()
            .filter(|s| has_noc(s))
            .flat_map(|s| s.cores.iter().map(move |&c| (c, s)))
            .collect();
        let mut mesh = Mesh::new(&cfg.noc);
        let net_runs = if networked.is_empty() {
            Vec::new()
        } else {
            sim.run_networked(&networked, t, &mut mesh)?
        };
        let noc_stats = mesh.stats();
        let mut end = t;
        let mut slowest: Option<&CoreRun> = None;
        let mut dram_bytes = 0;
        let mut dram_cores = 0u64;
        for (s, r) in local.iter().zip(&local_runs) {
            end = end.max(r.done);
            dram_bytes += r.dram_bytes * s.cores.len() as u64;
            if r.dram_bytes > 0 {
                dram_cores += s.cores.len() as u64;
            }
            if slowest.is_none_or(|x| r.done > x.done) {
                slowest = Some(r);
            }
        }
        for r in &net_runs {
            end = end.max(r.done);
            dram_bytes += r.dram_bytes;
            dram_cores += u64::from(r.dram_bytes > 0);
            if slowest.is_none_or(|x| r.done > x.done) {
                slowest = Some(r);
            }
        }
        let cycles = end - t;
        let roof = roofline(op, cfg);
        let flops: u64 = op
            .items()
            .map(|(s, w)| (w.matrix_flops() + w.vector_flops(&cfg.core)) * s.cores.len() as u64)
            .sum();
        let dram_cycles = clocks.to_dram(cycles).max(1) as f64;
        let channel_utilization = slowest
            .map(|r| {
                r.channel_busy
                    .iter()
                    .map(|&b| (b as f64 / dram_cycles).min(1.0))
                    .collect()
            })
            .unwrap_or_default();
        let dram_utilization = if cycles == 0 || dram_cores == 0 {
            0.0
        } else {
            dram_bytes as f64 / (cycles as f64 * cfg.dram_peak_bytes_per_core_cycle() * dram_cores as f64)
        };
        let utilization = if cycles == 0 {
            0.0
        } else {
            (roof.bound() / cycles as f64).min(1.0)
        };
        let inter = if op.inter_accel_bytes > 0 && cfg.inter.accelerator_count > 1 {
            inter_accel_latency(op.inter_accel_bytes, &cfg.inter)
        } else {
            0.0
        };
        let e = Energy::new(dram_bytes, flops, noc_stats.byte_hops, &cfg.energy);
        energy.add(&e);
        inter_total += inter;
        reports.push(OperatorReport {
            name: op.name.clone(),
            start_cycle: t,
            cycles,
            seconds: cycles as f64 / (freq * 1e9),
            flops,
            dram_bytes,
            noc_bytes: noc_stats.bytes,
            roofline: roof,
            utilization,
            dram_utilization,
            channel_utilization,
            noc_makespan: if networked.is_empty() { 0 } else { cycles },
            inter_accel_seconds: inter,
            energy: e,
        });
        t = end;
    }
    Ok(SimReport {
        frequency_ghz: freq,
        operators: reports,
        total_cycles: t,
        inter_accel_seconds: inter_total,
        end_to_end_seconds: t as f64 / (freq * 1e9) + inter_total,
        energy,
        peak_temperature_c: None,
    })
}

/// Convenience for the autotuner: latency of a single operator.
pub fn operator_latency(op: &Operator, cfg: &ArchConfig) -> u64 {
    let exec = ExecutionDescription {
        operators: vec![op.clone()],
    };
    run(&exec, cfg).map_or(u64::MAX, |r| r.total_cycles)
}
