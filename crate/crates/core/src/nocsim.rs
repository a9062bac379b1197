//! Flit-level 2D mesh: XY dimension-order routing, wormhole switching,
//! credit-based flow control and round-robin output arbitration.
//!
//! Timing of one hop: a flit that reaches a router input at cycle `a` may
//! leave at `a + router_delay`; it then occupies the output link for `k`
//! cycles (`k` = link cycles per flit) and reaches the next router input
//! `link_delay + k − 1` cycles after leaving. Ejection at the destination
//! router costs one more `router_delay`. With `H` hops and `F` flits the
//! zero-load latency is
//!
//! ```text
//! (H + 1)·router_delay + H·(link_delay + k − 1) + (F − 1)·k
//! ```

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::arch::NocSpec;
use crate::partition::CommPlan;

pub type PacketId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub src: (u32, u32),
    pub dst: (u32, u32),
    pub bytes: u64,
    pub tag: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arrival {
    pub id: PacketId,
    pub tag: u64,
    pub src: (u32, u32),
    pub bytes: u64,
    pub injected: u64,
    pub cycle: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NocStats {
    pub injected_flits: u64,
    pub ejected_flits: u64,
    pub bytes: u64,
    pub byte_hops: u64,
}

const LOCAL: usize = 0;
const NORTH: usize = 1;
const SOUTH: usize = 2;
const EAST: usize = 3;
const WEST: usize = 4;
const PORTS: usize = 5;

fn opposite(p: usize) -> usize {
    match p {
        NORTH => SOUTH,
        SOUTH => NORTH,
        EAST => WEST,
        WEST => EAST,
        _ => LOCAL,
    }
}

#[derive(Debug, Clone, Copy)]
struct Flit {
    pkt: u32,
    head: bool,
    tail: bool,
    ready: u64,
}

#[derive(Debug, Clone, Default)]
struct InPort {
    buf: VecDeque<Flit>,
    /// Output chosen by the packet currently at the head of `buf`.
    route: Option<usize>,
}

#[derive(Debug, Clone)]
struct OutPort {
    owner: Option<usize>,
    next_free: u64,
    credits: u32,
    rr: usize,
}

#[derive(Debug, Clone)]
struct Router {
    inp: [InPort; PORTS],
    out: [OutPort; PORTS],
}

#[derive(Debug, Clone)]
struct PacketState {
    pkt: Packet,
    flits: u32,
    injected_at: u64,
    /// Flits already pushed into the source router.
    sent: u32,
    hops: u64,
}

/// One link traversal of a flit, or one credit return.
#[derive(Debug, Clone, Copy)]
enum Event {
    Flit { router: usize, port: usize, flit: Flit },
    Credit { router: usize, port: usize },
}

#[derive(Debug, Clone)]
pub struct Mesh {
    rows: u32,
    cols: u32,
    flit_bytes: u64,
    k: u64,
    router_delay: u64,
    link_delay: u64,
    depth: u32,
    routers: Vec<Router>,
    packets: Vec<PacketState>,
    /// Per source node: packets waiting to enter the local input port.
    nic: Vec<VecDeque<PacketId>>,
    /// Events bucketed by delivery cycle; kept sorted by cycle.
    events: VecDeque<(u64, Vec<Event>)>,
    arrivals: Vec<Vec<Arrival>>,
    now: u64,
    stats: NocStats,
    link_log: Option<Vec<(u64, usize, usize)>>,
}

impl Mesh {
    pub fn new(spec: &NocSpec) -> Self {
        let n = (spec.rows * spec.cols) as usize;
        let depth = spec.input_queue_flits;
        let port = OutPort {
            owner: None,
            next_free: 0,
            credits: depth,
            rr: 0,
        };
        let router = Router {
            inp: Default::default(),
            out: std::array::from_fn(|_| port.clone()),
        };
        Self {
            rows: spec.rows,
            cols: spec.cols,
            flit_bytes: u64::from(spec.flit_bytes()),
            k: spec.cycles_per_flit(),
            router_delay: u64::from(spec.router_delay_cycles),
            link_delay: u64::from(spec.link_delay_cycles),
            depth,
            routers: vec![router; n],
            packets: Vec::new(),
            nic: vec![VecDeque::new(); n],
            events: VecDeque::new(),
            arrivals: vec![Vec::new(); n],
            now: 0,
            stats: NocStats::default(),
            link_log: None,
        }
    }

    /// Records `(cycle, router, output port)` for every flit sent over a link.
    pub fn enable_link_log(&mut self) {
        self.link_log = Some(Vec::new());
    }

    pub fn link_log(&self) -> Option<&[(u64, usize, usize)]> {
        self.link_log.as_deref()
    }

    pub fn stats(&self) -> NocStats {
        self.stats
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn flit_count(&self, bytes: u64) -> u64 {
        bytes.div_ceil(self.flit_bytes)
    }

    fn node(&self, (m, n): (u32, u32)) -> usize {
        (m * self.cols + n) as usize
    }

    /// Zero-load latency predicted by the hop formula.
    pub fn zero_load_latency(&self, src: (u32, u32), dst: (u32, u32), bytes: u64) -> u64 {
        if src == dst || bytes == 0 {
            return 0;
        }
        let h = u64::from(src.0.abs_diff(dst.0) + src.1.abs_diff(dst.1));
        (h + 1) * self.router_delay
            + h * (self.link_delay + self.k - 1)
            + (self.flit_count(bytes) - 1) * self.k
    }

    /// Queues `pkt` at its source for injection no earlier than `cycle`.
    /// Self-sends and empty packets complete at `cycle`.
    pub fn inject(&mut self, pkt: Packet, cycle: u64) -> PacketId {
        assert!(pkt.src.0 < self.rows && pkt.src.1 < self.cols, "source outside mesh");
        assert!(pkt.dst.0 < self.rows && pkt.dst.1 < self.cols, "destination outside mesh");
        let id = self.packets.len();
        let flits = self.flit_count(pkt.bytes) as u32;
        let hops = u64::from(pkt.src.0.abs_diff(pkt.dst.0) + pkt.src.1.abs_diff(pkt.dst.1));
        let at = cycle.max(self.now);
        self.packets.push(PacketState {
            pkt,
            flits,
            injected_at: at,
            sent: 0,
            hops,
        });
        if pkt.src == pkt.dst || flits == 0 {
            let dst = self.node(pkt.dst);
            self.stats.bytes += pkt.bytes;
            self.arrivals[dst].push(Arrival {
                id,
                tag: pkt.tag,
                src: pkt.src,
                bytes: pkt.bytes,
                injected: at,
                cycle: at,
            });
        } else {
            let src = self.node(pkt.src);
            self.nic[src].push_back(id);
        }
        id
    }

    /// Takes the packets delivered to `(m, n)` so far.
    pub fn arrivals(&mut self, core: (u32, u32)) -> Vec<Arrival> {
        let n = self.node(core);
        std::mem::take(&mut self.arrivals[n])
    }

    fn route(&self, here: usize, dst: (u32, u32)) -> usize {
        let (m, n) = (here as u32 / self.cols, here as u32 % self.cols);
        if dst.1 > n {
            EAST
        } else if dst.1 < n {
            WEST
        } else if dst.0 > m {
            SOUTH
        } else if dst.0 < m {
            NORTH
        } else {
            LOCAL
        }
    }

    fn neighbor(&self, here: usize, port: usize) -> usize {
        let c = self.cols as usize;
        match port {
            NORTH => here - c,
            SOUTH => here + c,
            EAST => here + 1,
            WEST => here - 1,
            _ => here,
        }
    }

    fn schedule(&mut self, at: u64, e: Event) {
        let pos = self.events.partition_point(|(c, _)| *c < at);
        match self.events.get_mut(pos) {
            Some((c, v)) if *c == at => v.push(e),
            _ => self.events.insert(pos, (at, vec![e])),
        }
    }

    pub(crate) fn busy(&self) -> bool {
        !self.events.is_empty()
            || self.nic.iter().any(|q| !q.is_empty())
            || self.routers.iter().any(|r| r.inp.iter().any(|p| !p.buf.is_empty()))
    }

    /// Advances one cycle.
    pub fn tick(&mut self) {
        let t = self.now;
        while self.events.front().is_some_and(|(c, _)| *c <= t) {
            let (_, evs) = self.events.pop_front().unwrap();
            for e in evs {
                match e {
                    Event::Flit { router, port, mut flit } => {
                        flit.ready = t + self.router_delay;
                        self.routers[router].inp[port].buf.push_back(flit);
                    }
                    Event::Credit { router, port } => self.routers[router].out[port].credits += 1,
                }
            }
        }

        // Network interfaces push one flit per cycle into the local port.
        for node in 0..self.nic.len() {
            let Some(&id) = self.nic[node].front() else { continue };
            let ps = &mut self.packets[id];
            if ps.injected_at > t || self.routers[node].inp[LOCAL].buf.len() >= self.depth as usize {
                continue;
            }
            let flit = Flit {
                pkt: id as u32,
                head: ps.sent == 0,
                tail: ps.sent + 1 == ps.flits,
                ready: t + self.router_delay,
            };
            ps.sent += 1;
            if flit.tail {
                self.nic[node].pop_front();
            }
            self.stats.injected_flits += 1;
            self.routers[node].inp[LOCAL].buf.push_back(flit);
        }

        for r in 0..self.routers.len() {
            for ip in 0..PORTS {
                if self.routers[r].inp[ip].route.is_none() {
                    if let Some(f) = self.routers[r].inp[ip].buf.front() {
                        debug_assert!(f.head);
                        let dst = self.packets[f.pkt as usize].pkt.dst;
                        self.routers[r].inp[ip].route = Some(self.route(r, dst));
                    }
                }
            }
            for op in 0..PORTS {
                self.switch(r, op, t);
            }
        }
        self.now += 1;
    }

    fn switch(&mut self, r: usize, op: usize, t: u64) {
        let router = &self.routers[r];
        let out = &router.out[op];
        if out.next_free > t || (op != LOCAL && out.credits == 0) {
            return;
        }
        let wants = |ip: usize| {
            let p = &router.inp[ip];
            p.route == Some(op) && p.buf.front().is_some_and(|f| f.ready <= t)
        };
        let ip = match out.owner {
            Some(ip) if wants(ip) => ip,
            Some(_) => return,
            None => {
                let Some(ip) = (0..PORTS)
                    .map(|i| (out.rr + i) % PORTS)
                    .find(|&i| wants(i) && router.inp[i].buf.front().unwrap().head)
                else {
                    return;
                };
                ip
            }
        };
        let router = &mut self.routers[r];
        let flit = router.inp[ip].buf.pop_front().unwrap();
        let out = &mut router.out[op];
        out.owner = (!flit.tail).then_some(ip);
        if flit.head {
            out.rr = (ip + 1) % PORTS;
        }
        out.next_free = t + self.k;
        if flit.tail {
            router.inp[ip].route = None;
        }
        if ip != LOCAL {
            let up = self.neighbor(r, ip);
            self.schedule(
                t + self.link_delay,
                Event::Credit {
                    router: up,
                    port: opposite(ip),
                },
            );
        }
        if op == LOCAL {
            self.stats.ejected_flits += 1;
            if flit.tail {
                let ps = &self.packets[flit.pkt as usize];
                self.stats.bytes += ps.pkt.bytes;
                self.stats.byte_hops += ps.pkt.bytes * ps.hops;
                self.arrivals[r].push(Arrival {
                    id: flit.pkt as usize,
                    tag: ps.pkt.tag,
                    src: ps.pkt.src,
                    bytes: ps.pkt.bytes,
                    injected: ps.injected_at,
                    cycle: t,
                });
            }
        } else {
            self.routers[r].out[op].credits -= 1;
            if let Some(log) = &mut self.link_log {
                log.push((t, r, op));
            }
            let next = self.neighbor(r, op);
            self.schedule(
                t + self.link_delay + self.k - 1,
                Event::Flit {
                    router: next,
                    port: opposite(op),
                    flit,
                },
            );
        }
    }

    /// Earliest cycle at which something can change, if anything is pending.
    pub(crate) fn next_activity(&self) -> Option<u64> {
        if self.routers.iter().any(|r| r.inp.iter().any(|p| !p.buf.is_empty())) {
            return Some(self.now);
        }
        let ev = self.events.front().map(|(c, _)| *c);
        let nic = self
            .nic
            .iter()
            .filter_map(|q| q.front().map(|&id| self.packets[id].injected_at))
            .min();
        match (ev, nic) {
            (Some(a), Some(b)) => Some(a.min(b).max(self.now)),
            (a, b) => a.or(b).map(|c| c.max(self.now)),
        }
    }

    /// Ticks (skipping idle stretches) until every queued packet is delivered
    /// or `limit` is reached. Returns the current cycle.
    pub fn run_until(&mut self, limit: u64) -> u64 {
        while self.busy() && self.now <= limit {
            match self.next_activity() {
                Some(c) if c > self.now => self.now = c.min(limit + 1),
                _ => {}
            }
            if self.now > limit {
                break;
            }
            self.tick();
        }
        self.now
    }

    pub fn run_to_idle(&mut self) -> u64 {
        self.run_until(u64::MAX - 1)
    }

    /// Jumps to `cycle`; callers guarantee nothing is due before it.
    pub(crate) fn advance_to(&mut self, cycle: u64) {
        self.now = self.now.max(cycle);
    }

    /// Skips ahead to `cycle` when the network is idle.
    pub fn advance_idle(&mut self, cycle: u64) {
        if !self.busy() {
            self.now = self.now.max(cycle);
        }
    }
}

/// Outcome of replaying a communication plan on the mesh.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanRun {
    /// Per logical core: cycle of its last send or receive completion.
    pub core_done: Vec<u64>,
    pub makespan: u64,
    pub injected_bytes: u64,
    pub byte_hops: u64,
}

/// Replays `plan` starting at `start`: a core injects its step-`s` sends as
/// soon as everything it receives in earlier steps has arrived.
pub fn run_plan(plan: &CommPlan, spec: &NocSpec, start: u64) -> PlanRun {
    let mut mesh = Mesh::new(spec);
    mesh.advance_idle(start);
    run_plan_on(&mut mesh, plan, start)
}

pub(crate) fn run_plan_on(mesh: &mut Mesh, plan: &CommPlan, start: u64) -> PlanRun {
    let arr = &plan.array;
    let n = arr.size() as usize;
    let t = &plan.transfers;
    // Per core: remaining receive count of each step.
    let steps = plan.steps() as usize;
    let mut pending_recv = vec![vec![0u32; steps]; n];
    for tr in t {
        pending_recv[tr.dst as usize][tr.step as usize] += 1;
    }
    let mut ready_at = vec![start; n];
    let mut core_done = vec![start; n];
    let mut injected = vec![false; t.len()];
    let mut outstanding = 0usize;
    let mut remaining = t.len();
    let mut injected_bytes = 0;
    let byte_hops_before = mesh.stats().byte_hops;
    let blocked = |core: usize, step: u32, pending: &Vec<Vec<u32>>| {
        pending[core][..step as usize].iter().any(|&c| c > 0)
    };
    let mut rescan = true;
    while remaining > 0 {
        if rescan {
            for (i, tr) in t.iter().enumerate() {
                let c = tr.src as usize;
                if injected[i] || blocked(c, tr.step, &pending_recv) {
                    continue;
                }
                injected[i] = true;
                injected_bytes += tr.bytes;
                mesh.inject(
                    Packet {
                        src: arr.physical_of(tr.src),
                        dst: arr.physical_of(tr.dst),
                        bytes: tr.bytes,
                        tag: i as u64,
                    },
                    ready_at[c],
                );
                outstanding += 1;
            }
            rescan = false;
        }
        assert!(outstanding > 0, "plan stalled; run CommPlan::validate first");
        if let Some(c) = mesh.next_activity() {
            mesh.now = mesh.now.max(c);
        }
        if mesh.busy() {
            mesh.tick();
        }
        for core in 0..n {
            for a in mesh.arrivals(arr.physical_of(core as u32)) {
                let tr = t[a.tag as usize];
                pending_recv[tr.dst as usize][tr.step as usize] -= 1;
                ready_at[core] = ready_at[core].max(a.cycle + 1);
                core_done[core] = core_done[core].max(a.cycle);
                core_done[tr.src as usize] = core_done[tr.src as usize].max(a.cycle);
                outstanding -= 1;
                remaining -= 1;
                rescan = true;
            }
        }
    }
    PlanRun {
        makespan: core_done.iter().copied().max().unwrap_or(start),
        core_done,
        injected_bytes,
        byte_hops: mesh.stats().byte_hops - byte_hops_before,
    }
}
