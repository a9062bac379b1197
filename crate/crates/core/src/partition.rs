//! Logical core arrays, GEMM and attention sharding, and collective
//! communication plans.
//!
//! Cores of one accelerator are viewed as an N-dimensional array whose
//! row-major linearization is laid onto the physical mesh row by row.
//!
//! ```
//! use stacksim::partition::CoreArray;
//!
//! let arr = CoreArray::new(&[16], (4, 4)).unwrap();
//! assert_eq!(arr.logical_to_physical(&[13]).unwrap(), (3, 1));
//! ```

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PartitionError {
    #[error("core array {shape:?} has {logical} cores but the mesh has {physical}")]
    SizeMismatch {
        shape: Vec<u32>,
        logical: u64,
        physical: u64,
    },
    #[error("coordinate {0:?} outside the core array")]
    CoordOutOfRange(Vec<u32>),
    #[error("axis {0} does not exist")]
    AxisOutOfRange(usize),
    #[error("axis {0} mapped to more than one dimension")]
    AxisReused(usize),
    #[error("duplicate slot {slot} on core {coord:?}")]
    DuplicateSlot { coord: Vec<u32>, slot: u32 },
    #[error("{tokens} tokens but only {slots} slots")]
    NotEnoughSlots { tokens: u64, slots: u64 },
    #[error("collective needs at least 2 participants, got {0}")]
    TooFewParticipants(u32),
    #[error("2D all-reduce needs a 2D core array, got {0} dimensions")]
    NotTwoDimensional(usize),
    #[error("unknown collective `{0}`")]
    UnknownCollective(String),
    #[error("plan line {line}: {message}")]
    PlanSyntax { line: usize, message: String },
    #[error("unmatched transfer {src:?} -> {dst:?}: {detail}")]
    Unmatched {
        src: Vec<u32>,
        dst: Vec<u32>,
        detail: String,
    },
    #[error("plan has a dependency cycle")]
    Deadlock,
}

/// N-dimensional logical view of the cores of one accelerator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreArray {
    pub shape: Vec<u32>,
    /// Physical mesh rows and columns.
    pub physical: (u32, u32),
}

impl CoreArray {
    pub fn new(shape: &[u32], physical: (u32, u32)) -> Result<Self, PartitionError> {
        let logical: u64 = shape.iter().map(|&x| u64::from(x)).product();
        let phys = u64::from(physical.0) * u64::from(physical.1);
        if logical != phys || shape.is_empty() || shape.contains(&0) {
            return Err(PartitionError::SizeMismatch {
                shape: shape.to_vec(),
                logical,
                physical: phys,
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            physical,
        })
    }

    /// A flat array over a `rows × cols` mesh.
    pub fn flat(rows: u32, cols: u32) -> Self {
        Self {
            shape: vec![rows * cols],
            physical: (rows, cols),
        }
    }

    pub fn size(&self) -> u32 {
        self.shape.iter().product()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Row-major (last axis fastest) linear index.
    pub fn linearize(&self, coord: &[u32]) -> Result<u32, PartitionError> {
        if coord.len() != self.shape.len() || coord.iter().zip(&self.shape).any(|(c, x)| c >= x) {
            return Err(PartitionError::CoordOutOfRange(coord.to_vec()));
        }
        Ok(coord.iter().zip(&self.shape).fold(0, |acc, (c, x)| acc * x + c))
    }

    pub fn delinearize(&self, mut c: u32) -> Vec<u32> {
        let mut out = vec![0; self.shape.len()];
        for (slot, x) in out.iter_mut().zip(&self.shape).rev() {
            *slot = c % x;
            c /= x;
        }
        out
    }

    pub fn logical_to_physical(&self, coord: &[u32]) -> Result<(u32, u32), PartitionError> {
        let c = self.linearize(coord)?;
        Ok(self.physical_of(c))
    }

    pub fn physical_of(&self, linear: u32) -> (u32, u32) {
        (linear / self.physical.1, linear % self.physical.1)
    }

    pub fn coords(&self) -> impl Iterator<Item = Vec<u32>> + '_ {
        (0..self.size()).map(|c| self.delinearize(c))
    }
}

/// Half-open index interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: u64,
    pub end: u64,
}

impl Span {
    pub fn new(start: u64, end: u64) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// `index`-th of `parts` contiguous pieces of `0..extent`. Pieces have
/// `ceil(extent/parts)` elements; the last non-empty one takes the remainder.
pub fn shard_span(extent: u64, parts: u64, index: u64) -> Span {
    let size = extent.div_ceil(parts.max(1));
    Span::new((index * size).min(extent), ((index + 1) * size).min(extent))
}

/// Which core-array axes split each GEMM dimension. Axes listed for one
/// dimension are ordered `i_0 … i_{t-1}`; consecutive shards are laid
/// along `i_{t-1}` first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmMapping {
    #[serde(default)]
    pub m: Vec<usize>,
    #[serde(default)]
    pub k: Vec<usize>,
    #[serde(default)]
    pub n: Vec<usize>,
}

/// A 2D block: `(rows, cols)`.
pub type Block = (Span, Span);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmShard {
    pub coord: Vec<u32>,
    pub a: Block,
    pub b: Block,
    pub out: Block,
    /// Cores holding the same A block.
    pub a_replicas: Vec<Vec<u32>>,
    /// Cores holding the same B block.
    pub b_replicas: Vec<Vec<u32>>,
    /// Cores whose outputs are partial sums of this core's output block.
    pub reduction_group: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmPartition {
    pub m: u64,
    pub k: u64,
    pub n: u64,
    pub mapping: GemmMapping,
    pub shards: Vec<GemmShard>,
}

impl GemmPartition {
    pub fn shard(&self, coord: &[u32]) -> Option<&GemmShard> {
        self.shards.iter().find(|s| s.coord == coord)
    }
}

fn shard_index(coord: &[u32], shape: &[u32], axes: &[usize]) -> (u64, u64) {
    axes.iter().fold((0, 1), |(idx, parts), &a| {
        (idx * u64::from(shape[a]) + u64::from(coord[a]), parts * u64::from(shape[a]))
    })
}

/// Shards an `(M,K)×(K,N)` GEMM over `arr`. Splitting M shards A and
/// replicates B; splitting K or N shards B, and A is then sharded along the
/// same K split and replicated elsewhere.
pub fn split_gemm(
    arr: &CoreArray,
    m: u64,
    k: u64,
    n: u64,
    mapping: &GemmMapping,
) -> Result<GemmPartition, PartitionError> {
    let mut used = HashSet::new();
    for &a in mapping.m.iter().chain(&mapping.k).chain(&mapping.n) {
        if a >= arr.ndim() {
            return Err(PartitionError::AxisOutOfRange(a));
        }
        if !used.insert(a) {
            return Err(PartitionError::AxisReused(a));
        }
    }
    let blocks: Vec<_> = arr
        .coords()
        .map(|c| {
            let (mi, mp) = shard_index(&c, &arr.shape, &mapping.m);
            let (ki, kp) = shard_index(&c, &arr.shape, &mapping.k);
            let (ni, np) = shard_index(&c, &arr.shape, &mapping.n);
            let ms = shard_span(m, mp, mi);
            let ks = shard_span(k, kp, ki);
            let ns = shard_span(n, np, ni);
            (c, (ms, ks), (ks, ns), (ms, ns))
        })
        .collect();
    let group = |pick: &dyn Fn(&(Vec<u32>, Block, Block, Block)) -> Block, me: Block| {
        blocks
            .iter()
            .filter(|b| pick(b) == me)
            .map(|b| b.0.clone())
            .collect::<Vec<_>>()
    };
    let shards = blocks
        .iter()
        .map(|(c, a, b, out)| {
            let reduction_group = blocks
                .iter()
                .filter(|o| {
                    o.3 == *out
                        && (0..arr.ndim()).all(|ax| mapping.k.contains(&ax) || o.0[ax] == c[ax])
                })
                .map(|o| o.0.clone())
                .collect();
            GemmShard {
                coord: c.clone(),
                a: *a,
                b: *b,
                out: *out,
                a_replicas: group(&|x| x.1, *a),
                b_replicas: group(&|x| x.2, *b),
                reduction_group,
            }
        })
        .collect();
    Ok(GemmPartition {
        m,
        k,
        n,
        mapping: mapping.clone(),
        shards,
    })
}

/// One entry of a `split_attention` directive: a core and the KV-cache slot
/// ids it offers, in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotItem {
    pub coord: Vec<u32>,
    pub slots: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionPartition {
    pub tokens: u64,
    /// Per core (in item order): `(token, slot)` pairs.
    pub assignment: Vec<(Vec<u32>, Vec<(u64, u32)>)>,
}

impl AttentionPartition {
    /// Tokens held by `coord`.
    pub fn context_len(&self, coord: &[u32]) -> u64 {
        self.assignment
            .iter()
            .filter(|(c, _)| c == coord)
            .map(|(_, v)| v.len() as u64)
            .sum()
    }
}

/// Lays the tokens of one request onto the listed slots in item order.
pub fn split_attention(
    arr: &CoreArray,
    items: &[SlotItem],
    tokens: u64,
) -> Result<AttentionPartition, PartitionError> {
    let mut used: BTreeMap<Vec<u32>, HashSet<u32>> = BTreeMap::new();
    let mut total = 0u64;
    for it in items {
        arr.linearize(&it.coord)?;
        let set = used.entry(it.coord.clone()).or_default();
        for &s in &it.slots {
            if !set.insert(s) {
                return Err(PartitionError::DuplicateSlot {
                    coord: it.coord.clone(),
                    slot: s,
                });
            }
        }
        total += it.slots.len() as u64;
    }
    if tokens > total {
        return Err(PartitionError::NotEnoughSlots {
            tokens,
            slots: total,
        });
    }
    let mut next = 0u64;
    let mut assignment = Vec::new();
    for it in items {
        let take = (tokens - next).min(it.slots.len() as u64);
        let pairs = (0..take).map(|i| (next + i, it.slots[i as usize])).collect();
        next += take;
        assignment.push((it.coord.clone(), pairs));
    }
    Ok(AttentionPartition { tokens, assignment })
}

/// Items that spread `tokens` as evenly as possible over every core, in
/// linear order, with slots numbered from 0 on each core.
pub fn even_slot_items(arr: &CoreArray, tokens: u64) -> Vec<SlotItem> {
    let p = u64::from(arr.size());
    (0..arr.size())
        .map(|c| {
            let n = tokens / p + u64::from(u64::from(c) < tokens % p);
            SlotItem {
                coord: arr.delinearize(c),
                slots: (0..n as u32).collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectiveKind {
    RingReduceScatter,
    RingAllGather,
    AllReduce1d,
    AllReduce2d,
}

impl CollectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            CollectiveKind::RingReduceScatter => "ring_reduce_scatter",
            CollectiveKind::RingAllGather => "ring_all_gather",
            CollectiveKind::AllReduce1d => "all_reduce_1d",
            CollectiveKind::AllReduce2d => "all_reduce_2d",
        }
    }
}

impl std::str::FromStr for CollectiveKind {
    type Err = PartitionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            CollectiveKind::RingReduceScatter,
            CollectiveKind::RingAllGather,
            CollectiveKind::AllReduce1d,
            CollectiveKind::AllReduce2d,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| PartitionError::UnknownCollective(s.to_string()))
    }
}

/// One point-to-point transfer. Cores are logical linear indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transfer {
    pub step: u32,
    pub src: u32,
    pub dst: u32,
    pub bytes: u64,
}

/// Ordered point-to-point transfers. A core may start its step-`s` sends
/// once every transfer it receives in earlier steps has arrived.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommPlan {
    pub array: CoreArray,
    pub transfers: Vec<Transfer>,
}

/// Sizes of `parts` nearly equal chunks of `bytes`, larger ones first.
fn chunks(bytes: u64, parts: u32) -> Vec<u64> {
    let p = u64::from(parts);
    (0..p).map(|i| bytes / p + u64::from(i < bytes % p)).collect()
}

fn ring_phase(
    out: &mut Vec<Transfer>,
    first_step: u32,
    ring: &[u32],
    bytes: u64,
    gather: bool,
) -> u32 {
    let p = ring.len() as u32;
    let sizes = chunks(bytes, p);
    for s in 0..p - 1 {
        for (i, &c) in ring.iter().enumerate() {
            let i = i as u32;
            // Reduce-scatter forwards chunk (i - s); all-gather forwards the
            // chunk it finished reducing, (i + 1 - s).
            let chunk = (i + p - s + u32::from(gather)) % p;
            out.push(Transfer {
                step: first_step + s,
                src: c,
                dst: ring[((i + 1) % p) as usize],
                bytes: sizes[chunk as usize],
            });
        }
    }
    first_step + p - 1
}

/// Cores that differ from `linear` only along `axis`, in axis order.
fn axis_ring(arr: &CoreArray, linear: u32, axis: usize) -> Vec<u32> {
    let mut coord = arr.delinearize(linear);
    (0..arr.shape[axis])
        .map(|x| {
            coord[axis] = x;
            arr.linearize(&coord).expect("in range")
        })
        .collect()
}

fn rings_along(arr: &CoreArray, axis: usize) -> Vec<Vec<u32>> {
    (0..arr.size())
        .filter(|&c| arr.delinearize(c)[axis] == 0)
        .map(|c| axis_ring(arr, c, axis))
        .collect()
}

/// Builds a collective over every core of `arr`, each contributing
/// `bytes_per_core`.
///
/// The 1D variants use one ring in linear order. The 2D all-reduce on an
/// `(X0, X1)` array reduce-scatters along rows, then along columns on the
/// row-reduced chunk, then all-gathers in reverse order.
pub fn build_collective(
    arr: &CoreArray,
    kind: CollectiveKind,
    bytes_per_core: u64,
) -> Result<CommPlan, PartitionError> {
    let p = arr.size();
    let mut t = Vec::new();
    let all: Vec<u32> = (0..p).collect();
    match kind {
        CollectiveKind::AllReduce1d | CollectiveKind::AllReduce2d if p == 1 => {}
        CollectiveKind::RingReduceScatter | CollectiveKind::RingAllGather if p < 2 => {
            return Err(PartitionError::TooFewParticipants(p));
        }
        CollectiveKind::RingReduceScatter => {
            ring_phase(&mut t, 0, &all, bytes_per_core, false);
        }
        CollectiveKind::RingAllGather => {
            ring_phase(&mut t, 0, &all, bytes_per_core, true);
        }
        CollectiveKind::AllReduce1d => {
            let s = ring_phase(&mut t, 0, &all, bytes_per_core, false);
            ring_phase(&mut t, s, &all, bytes_per_core, true);
        }
        CollectiveKind::AllReduce2d => {
            if arr.ndim() != 2 {
                return Err(PartitionError::NotTwoDimensional(arr.ndim()));
            }
            let (x0, x1) = (arr.shape[0], arr.shape[1]);
            let row_chunks = chunks(bytes_per_core, x1);
            let mut step = 0;
            let phase = |t: &mut Vec<Transfer>, step: u32, axis: usize, gather: bool| {
                let mut end = step;
                for ring in rings_along(arr, axis) {
                    if ring.len() < 2 {
                        continue;
                    }
                    let bytes = if axis == 1 {
                        bytes_per_core
                    } else {
                        // Column rings carry the chunk each row position owns.
                        row_chunks[((arr.delinearize(ring[0])[1] + 1) % x1) as usize]
                    };
                    end = end.max(ring_phase(t, step, &ring, bytes, gather));
                }
                end
            };
            if x1 > 1 {
                step = phase(&mut t, step, 1, false);
            }
            if x0 > 1 {
                step = phase(&mut t, step, 0, false);
                step = phase(&mut t, step, 0, true);
            }
            if x1 > 1 {
                phase(&mut t, step, 1, true);
            }
        }
    }
    Ok(CommPlan {
        array: arr.clone(),
        transfers: t,
    })
}

impl CommPlan {
    pub fn steps(&self) -> u32 {
        self.transfers.iter().map(|t| t.step + 1).max().unwrap_or(0)
    }

    pub fn sent_by(&self, core: u32) -> u64 {
        self.transfers.iter().filter(|t| t.src == core).map(|t| t.bytes).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.transfers.iter().map(|t| t.bytes).sum()
    }

    /// Per-core ordered send and receive sequences: `(step, peer, bytes)`.
    pub fn per_core(&self) -> Vec<(Vec<(u32, u32, u64)>, Vec<(u32, u32, u64)>)> {
        let mut out = vec![(Vec::new(), Vec::new()); self.array.size() as usize];
        for t in &self.transfers {
            out[t.src as usize].0.push((t.step, t.dst, t.bytes));
            out[t.dst as usize].1.push((t.step, t.src, t.bytes));
        }
        out
    }

    /// Checks that every send pairs with exactly one receive of equal size
    /// in per-pair order, and that the step dependencies form a DAG.
    pub fn validate(&self) -> Result<(), PartitionError> {
        let n = self.array.size();
        for t in &self.transfers {
            if t.src >= n || t.dst >= n {
                return Err(PartitionError::CoordOutOfRange(vec![t.src.max(t.dst)]));
            }
        }
        let seq = self.per_core();
        let mut sends: BTreeMap<(u32, u32), Vec<u64>> = BTreeMap::new();
        let mut recvs: BTreeMap<(u32, u32), Vec<u64>> = BTreeMap::new();
        for (core, (s, r)) in seq.iter().enumerate() {
            for &(_, peer, b) in s {
                sends.entry((core as u32, peer)).or_default().push(b);
            }
            for &(_, peer, b) in r {
                recvs.entry((peer, core as u32)).or_default().push(b);
            }
        }
        for (pair, s) in &sends {
            let r = recvs.get(pair).map(Vec::as_slice).unwrap_or(&[]);
            if s.as_slice() != r {
                return Err(PartitionError::Unmatched {
                    src: self.array.delinearize(pair.0),
                    dst: self.array.delinearize(pair.1),
                    detail: format!("sent {s:?}, received {r:?}"),
                });
            }
        }
        // Edges: a transfer depends on every receive of its source in an
        // earlier step and on the previous transfer of the same pair.
        let m = self.transfers.len();
        let mut indeg = vec![0usize; m];
        let mut adj = vec![Vec::new(); m];
        let mut last_of_pair: BTreeMap<(u32, u32), usize> = BTreeMap::new();
        for (j, tj) in self.transfers.iter().enumerate() {
            for (i, ti) in self.transfers.iter().enumerate() {
                if ti.dst == tj.src && ti.step < tj.step {
                    adj[i].push(j);
                    indeg[j] += 1;
                }
            }
            if let Some(&i) = last_of_pair.get(&(tj.src, tj.dst)) {
                adj[i].push(j);
                indeg[j] += 1;
            }
            last_of_pair.insert((tj.src, tj.dst), j);
        }
        let mut queue: VecDeque<_> = (0..m).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(i) = queue.pop_front() {
            seen += 1;
            for &j in &adj[i] {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    queue.push_back(j);
                }
            }
        }
        if seen != m {
            return Err(PartitionError::Deadlock);
        }
        Ok(())
    }

    /// Line-oriented text form:
    ///
    /// ```text
    /// shape 2x4 mesh 2x4
    /// 0 (0,0) -> (0,1) 512
    /// ```
    pub fn to_text(&self) -> String {
        let dims = |v: &[u32]| v.iter().map(u32::to_string).collect::<Vec<_>>().join("x");
        let mut s = format!(
            "shape {} mesh {}x{}\n",
            dims(&self.array.shape),
            self.array.physical.0,
            self.array.physical.1
        );
        for t in &self.transfers {
            writeln!(
                s,
                "{} {} -> {} {}",
                t.step,
                Coord(&self.array.delinearize(t.src)),
                Coord(&self.array.delinearize(t.dst)),
                t.bytes
            )
            .unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, PartitionError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let err = |line: usize, m: &str| PartitionError::PlanSyntax {
            line: line + 1,
            message: m.to_string(),
        };
        let dims = |s: &str| -> Option<Vec<u32>> { s.split('x').map(|d| d.parse().ok()).collect() };
        let (hl, header) = lines.next().ok_or_else(|| err(0, "missing header"))?;
        let h: Vec<_> = header.split_whitespace().collect();
        let (shape, mesh) = match h[..] {
            ["shape", s, "mesh", m] => (dims(s), dims(m)),
            _ => (None, None),
        };
        let (Some(shape), Some(mesh)) = (shape, mesh) else {
            return Err(err(hl, "expected `shape AxB mesh RxC`"));
        };
        if mesh.len() != 2 {
            return Err(err(hl, "mesh must be 2D"));
        }
        let array = CoreArray::new(&shape, (mesh[0], mesh[1]))?;
        let coord = |s: &str| -> Option<Vec<u32>> {
            s.strip_prefix('(')?
                .strip_suffix(')')?
                .split(',')
                .map(|d| d.trim().parse().ok())
                .collect()
        };
        let mut transfers = Vec::new();
        for (ln, line) in lines {
            let f: Vec<_> = line.split_whitespace().collect();
            let parsed = match f[..] {
                [step, src, "->", dst, bytes] => (|| {
                    Some((step.parse().ok()?, coord(src)?, coord(dst)?, bytes.parse().ok()?))
                })(),
                _ => None,
            };
            let (step, src, dst, bytes) =
                parsed.ok_or_else(|| err(ln, "expected `step (src) -> (dst) bytes`"))?;
            transfers.push(Transfer {
                step,
                src: array.linearize(&src)?,
                dst: array.linearize(&dst)?,
                bytes,
            });
        }
        Ok(Self { array, transfers })
    }
}

struct Coord<'a>(&'a [u32]);

impl fmt::Display for Coord<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({})",
            self.0.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linearization_examples() {
        let arr = CoreArray::new(&[2, 4], (2, 4)).unwrap();
        assert_eq!(arr.linearize(&[1, 2]).unwrap(), 6);
        assert_eq!(arr.logical_to_physical(&[1, 2]).unwrap(), (1, 2));
        assert_eq!(arr.logical_to_physical(&[0, 0]).unwrap(), (0, 0));
        let flat = CoreArray::new(&[16], (4, 4)).unwrap();
        assert_eq!(flat.logical_to_physical(&[13]).unwrap(), (3, 1));
        assert!(arr.logical_to_physical(&[2, 0]).is_err());
    }

    #[test]
    fn shape_must_match_mesh() {
        assert!(CoreArray::new(&[3, 3], (4, 4)).is_err());
    }

    #[test]
    fn figure_style_k_and_n_split() {
        let arr = CoreArray::new(&[2, 4], (2, 4)).unwrap();
        let map = GemmMapping {
            m: vec![],
            k: vec![0],
            n: vec![1],
        };
        let p = split_gemm(&arr, 64, 128, 256, &map).unwrap();
        let a_blocks: HashSet<_> = p.shards.iter().map(|s| s.a).collect();
        let b_blocks: HashSet<_> = p.shards.iter().map(|s| s.b).collect();
        let outs: HashSet<_> = p.shards.iter().map(|s| s.out).collect();
        assert_eq!(a_blocks.len(), 2);
        assert!(p.shards.iter().all(|s| s.a_replicas.len() == 4));
        assert_eq!(b_blocks.len(), 8);
        assert_eq!(outs.len(), 4);
        assert!(p.shards.iter().all(|s| s.reduction_group.len() == 2));
    }

    #[test]
    fn single_core_holds_everything() {
        let arr = CoreArray::new(&[1], (1, 1)).unwrap();
        let p = split_gemm(&arr, 5, 6, 7, &GemmMapping { k: vec![0], ..Default::default() }).unwrap();
        let s = &p.shards[0];
        assert_eq!(s.a, (Span::new(0, 5), Span::new(0, 6)));
        assert_eq!(s.b, (Span::new(0, 6), Span::new(0, 7)));
        assert_eq!(s.reduction_group.len(), 1);
    }

    #[test]
    fn m_split_shards_a_and_replicates_b() {
        let arr = CoreArray::new(&[2, 2], (2, 2)).unwrap();
        let p = split_gemm(&arr, 4, 8, 8, &GemmMapping { m: vec![0], ..Default::default() }).unwrap();
        for s in &p.shards {
            let rows = if s.coord[0] == 0 { Span::new(0, 2) } else { Span::new(2, 4) };
            assert_eq!(s.a.0, rows);
            assert_eq!(s.b, (Span::new(0, 8), Span::new(0, 8)));
            assert_eq!(s.b_replicas.len(), 4);
        }
    }

    #[test]
    fn reused_or_missing_axis_rejected() {
        let arr = CoreArray::new(&[2, 2], (2, 2)).unwrap();
        let reuse = GemmMapping {
            m: vec![0],
            n: vec![0],
            ..Default::default()
        };
        assert_eq!(split_gemm(&arr, 4, 4, 4, &reuse), Err(PartitionError::AxisReused(0)));
        let bad = GemmMapping { k: vec![2], ..Default::default() };
        assert_eq!(split_gemm(&arr, 4, 4, 4, &bad), Err(PartitionError::AxisOutOfRange(2)));
    }

    #[test]
    fn contiguous_assignment_along_last_listed_axis() {
        let arr = CoreArray::new(&[2, 2], (2, 2)).unwrap();
        let map = GemmMapping { n: vec![0, 1], ..Default::default() };
        let p = split_gemm(&arr, 1, 1, 8, &map).unwrap();
        let col = |c: &[u32]| p.shard(c).unwrap().out.1.start;
        assert_eq!(col(&[0, 0]), 0);
        assert_eq!(col(&[0, 1]), 2);
        assert_eq!(col(&[1, 0]), 4);
        assert_eq!(col(&[1, 1]), 6);
    }

    #[test]
    fn uneven_split_clips_last_shard() {
        assert_eq!(shard_span(10, 4, 3), Span::new(9, 10));
        assert_eq!(shard_span(10, 4, 0), Span::new(0, 3));
        assert!(shard_span(3, 4, 3).is_empty());
    }

    #[test]
    fn tokens_follow_item_order() {
        let arr = CoreArray::new(&[1, 2], (1, 2)).unwrap();
        let items = vec![
            SlotItem {
                coord: vec![0, 0],
                slots: (0..5).collect(),
            },
            SlotItem {
                coord: vec![0, 1],
                slots: (0..5).collect(),
            },
        ];
        let p = split_attention(&arr, &items, 10).unwrap();
        let toks = |i: usize| p.assignment[i].1.iter().map(|x| x.0).collect::<Vec<_>>();
        assert_eq!(toks(0), (0..5).collect::<Vec<_>>());
        assert_eq!(toks(1), (5..10).collect::<Vec<_>>());
    }

    #[test]
    fn single_token_single_item() {
        let arr = CoreArray::new(&[1], (1, 1)).unwrap();
        let items = vec![SlotItem {
            coord: vec![0],
            slots: vec![7],
        }];
        let p = split_attention(&arr, &items, 1).unwrap();
        assert_eq!(p.assignment[0].1, vec![(0, 7)]);
    }

    #[test]
    fn duplicate_slot_and_unknown_core_rejected() {
        let arr = CoreArray::new(&[2], (1, 2)).unwrap();
        let dup = vec![SlotItem {
            coord: vec![0],
            slots: vec![1, 1],
        }];
        assert!(matches!(split_attention(&arr, &dup, 1), Err(PartitionError::DuplicateSlot { .. })));
        let unknown = vec![SlotItem {
            coord: vec![5],
            slots: vec![0],
        }];
        assert!(split_attention(&arr, &unknown, 1).is_err());
    }

    #[test]
    fn even_split_of_1024_over_16() {
        let arr = CoreArray::flat(4, 4);
        let p = split_attention(&arr, &even_slot_items(&arr, 1024), 1024).unwrap();
        for c in arr.coords() {
            assert_eq!(p.context_len(&c), 64);
        }
    }

    #[test]
    fn ring_reduce_scatter_volume() {
        let arr = CoreArray::flat(2, 2);
        let plan = build_collective(&arr, CollectiveKind::RingReduceScatter, 4 << 20).unwrap();
        assert_eq!(plan.steps(), 3);
        for c in 0..4 {
            assert_eq!(plan.sent_by(c), 3 << 20);
            assert!(plan.transfers.iter().filter(|t| t.src == c).all(|t| t.bytes == 1 << 20));
        }
        plan.validate().unwrap();
    }

    #[test]
    fn single_core_all_reduce_is_empty() {
        let arr = CoreArray::flat(1, 1);
        let plan = build_collective(&arr, CollectiveKind::AllReduce1d, 100).unwrap();
        assert!(plan.transfers.is_empty());
        assert!(build_collective(&arr, CollectiveKind::RingReduceScatter, 100).is_err());
    }

    #[test]
    fn ring_neighbors_follow_linear_order() {
        let arr = CoreArray::new(&[2, 4], (2, 4)).unwrap();
        let plan = build_collective(&arr, CollectiveKind::RingReduceScatter, 800).unwrap();
        for t in &plan.transfers {
            assert_eq!(t.dst, (t.src + 1) % 8);
        }
    }

    #[test]
    fn two_d_all_reduce_volume_and_validity() {
        let arr = CoreArray::new(&[4, 4], (4, 4)).unwrap();
        let s = 1 << 16;
        let plan = build_collective(&arr, CollectiveKind::AllReduce2d, s).unwrap();
        plan.validate().unwrap();
        for c in 0..16 {
            assert_eq!(plan.sent_by(c), 2 * 15 * s / 16);
        }
        // Every transfer stays inside a row or a column.
        for t in &plan.transfers {
            let (a, b) = (arr.delinearize(t.src), arr.delinearize(t.dst));
            assert!(a[0] == b[0] || a[1] == b[1]);
        }
    }

    #[test]
    fn text_round_trip_and_validation() {
        let arr = CoreArray::new(&[2, 4], (2, 4)).unwrap();
        let plan = build_collective(&arr, CollectiveKind::AllReduce1d, 4096).unwrap();
        let text = plan.to_text();
        assert!(text.starts_with("shape 2x4 mesh 2x4\n0 (0,0) -> (0,1) 512\n"));
        assert_eq!(CommPlan::from_text(&text).unwrap(), plan);
        let broken = "shape 2 mesh 1x2\n0 (0) -> (1) 5\n";
        CommPlan::from_text(broken).unwrap().validate().unwrap();
        // (1)->(0) at step 2 must precede its step-0 twin, which (0) waits on
        // before its step-1 send, which (1) waits on before step 2.
        let cyc = "shape 2 mesh 1x2\n2 (1) -> (0) 5\n0 (1) -> (0) 5\n1 (0) -> (1) 5\n";
        assert_eq!(CommPlan::from_text(cyc).unwrap().validate(), Err(PartitionError::Deadlock));
        assert!(CommPlan::from_text("shape 2 mesh 1x2\n0 (0) => (1) 5").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn reduction_groups_share_output_blocks(
                x0 in 1u32..=4, x1 in 1u32..=4,
                m in 1u64..40, k in 1u64..40, n in 1u64..40,
                assign in proptest::collection::vec(0usize..4, 2),
            ) {
                let arr = CoreArray::new(&[x0, x1], (x0, x1)).unwrap();
                let mut map = GemmMapping::default();
                for (axis, &dim) in assign.iter().enumerate() {
                    match dim { 0 => map.m.push(axis), 1 => map.k.push(axis), 2 => map.n.push(axis), _ => {} }
                }
                let p = split_gemm(&arr, m, k, n, &map).unwrap();
                for s in &p.shards {
                    for other in &s.reduction_group {
                        prop_assert_eq!(p.shard(other).unwrap().out, s.out);
                    }
                }
            }

            #[test]
            fn collectives_validate(p0 in 1u32..=4, p1 in 1u32..=4, bytes in 0u64..10_000, kind in 0usize..4) {
                let arr = CoreArray::new(&[p0, p1], (p0, p1)).unwrap();
                let kind = [
                    CollectiveKind::RingReduceScatter,
                    CollectiveKind::RingAllGather,
                    CollectiveKind::AllReduce1d,
                    CollectiveKind::AllReduce2d,
                ][kind];
                if let Ok(plan) = build_collective(&arr, kind, bytes) {
                    prop_assert!(plan.validate().is_ok());
                }
            }
        }
    }
}
