use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::ArchConfig;
use crate::dramsim::trace::TraceRecord;
use crate::dramsim::{AccessKind, AddressError, ByteRange, DramStats, MemorySystem, Scheduling};

/// One work item of a benchmark: the requests issued together.
pub type BenchTile = Vec<TraceRecord>;

/// Streaming `(m, k) × (k, n)` with output-stationary tiles. `A` and `C`
/// are row-major, `B` is column-major; every output tile reads its `A` and
/// `B` tiles for each step along `k` and then writes `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GemmBench {
    pub m: u64,
    pub k: u64,
    pub n: u64,
    pub tm: u64,
    pub tk: u64,
    pub tn: u64,
    pub dtype_bytes: u64,
}

impl Default for GemmBench {
    fn default() -> Self {
        Self {
            m: 64,
            k: 8192,
            n: 8192,
            tm: 64,
            tk: 256,
            tn: 128,
            dtype_bytes: 2,
        }
    }
}

fn read(addr: u64, bytes: u64) -> TraceRecord {
    TraceRecord {
        ready: 0,
        kind: AccessKind::Read,
        addr,
        bytes,
    }
}

impl GemmBench {
    pub fn footprint(&self) -> u64 {
        (self.m * self.k + self.k * self.n + self.m * self.n) * self.dtype_bytes
    }

    pub fn tiles(&self) -> Vec<BenchTile> {
        let dt = self.dtype_bytes;
        let a0 = 0;
        let b0 = self.m * self.k * dt;
        let c0 = b0 + self.k * self.n * dt;
        let mut out = Vec::new();
        for i in (0..self.m).step_by(self.tm as usize) {
            let rows = self.tm.min(self.m - i);
            for j in (0..self.n).step_by(self.tn as usize) {
                let cols = self.tn.min(self.n - j);
                for kk in (0..self.k).step_by(self.tk as usize) {
                    let depth = self.tk.min(self.k - kk);
                    let mut t = Vec::with_capacity((rows + cols) as usize);
                    for r in i..i + rows {
                        t.push(read(a0 + (r * self.k + kk) * dt, depth * dt));
                    }
                    for c in j..j + cols {
                        t.push(read(b0 + (c * self.k + kk) * dt, depth * dt));
                    }
                    out.push(t);
                }
                out.push(
                    (i..i + rows)
                        .map(|r| TraceRecord {
                            ready: 0,
                            kind: AccessKind::Write,
                            addr: c0 + (r * self.n + j) * dt,
                            bytes: cols * dt,
                        })
                        .collect(),
                );
            }
        }
        out
    }
}

/// Paged KV reads: each request's context lives in `block_size`-slot blocks
/// drawn at random from a shared pool, one KV vector per slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PagedAttentionBench {
    pub requests: u64,
    pub context: u64,
    pub block_size: u64,
    /// Elements per KV vector.
    pub kv_len: u64,
    pub dtype_bytes: u64,
    /// Pool size as a multiple of the blocks actually used.
    pub pool_factor: u64,
    pub runs: u32,
    pub seed: u64,
}

impl Default for PagedAttentionBench {
    fn default() -> Self {
        Self {
            requests: 16,
            context: 1024,
            block_size: 16,
            kv_len: 256,
            dtype_bytes: 2,
            pool_factor: 4,
            runs: 10,
            seed: 0,
        }
    }
}

impl PagedAttentionBench {
    pub fn block_bytes(&self) -> u64 {
        self.block_size * self.kv_len * self.dtype_bytes
    }

    pub fn blocks_per_request(&self) -> u64 {
        self.context.div_ceil(self.block_size)
    }

    pub fn pool_blocks(&self) -> u64 {
        self.requests * self.blocks_per_request() * self.pool_factor.max(1)
    }

    /// Block-id sequence of every request for one run; ids never repeat
    /// across requests.
    pub fn block_sequences(&self, run: u32) -> Vec<Vec<u64>> {
        let per = self.blocks_per_request() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(u64::from(run)));
        let ids = sample(&mut rng, self.pool_blocks() as usize, self.requests as usize * per);
        let ids: Vec<u64> = ids.into_iter().map(|i| i as u64).collect();
        ids.chunks(per.max(1)).map(<[u64]>::to_vec).collect()
    }

    /// One tile per block, requests in turn; the last block of a request
    /// only reads the slots that hold context.
    pub fn tiles(&self, run: u32) -> Vec<BenchTile> {
        let slot = self.kv_len * self.dtype_bytes;
        let mut out = Vec::new();
        for seq in self.block_sequences(run) {
            let mut left = self.context;
            for id in seq {
                let used = left.min(self.block_size);
                left -= used;
                out.push(vec![read(id * self.block_bytes(), used * slot)]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DramBench {
    GemmTile(GemmBench),
    PagedAttention(PagedAttentionBench),
}

impl DramBench {
    /// Tiles of every run; GEMM has a single run.
    pub fn runs(&self) -> Vec<Vec<BenchTile>> {
        match self {
            DramBench::GemmTile(g) => vec![g.tiles()],
            DramBench::PagedAttention(p) => (0..p.runs.max(1)).map(|r| p.tiles(r)).collect(),
        }
    }

    /// Flat trace of the first run.
    pub fn trace(&self) -> Vec<TraceRecord> {
        self.runs().swap_remove(0).into_iter().flatten().collect()
    }

    /// Utilization, elapsed time and bytes averaged over the runs.
    pub fn measure(&self, cfg: &ArchConfig) -> Result<BenchResult, AddressError> {
        let runs = self.runs();
        let n = runs.len() as f64;
        let mut out = BenchResult::default();
        for tiles in &runs {
            let s = stream(cfg, tiles)?;
            out.utilization += s.utilization / n;
            out.elapsed_cycles += s.elapsed_cycles as f64 / n;
            out.bytes += s.bytes as f64 / n;
        }
        out.seconds = out.elapsed_cycles / (cfg.dram_clock_ghz() * 1e9);
        Ok(out)
    }

    pub fn utilization(&self, cfg: &ArchConfig) -> Result<f64, AddressError> {
        Ok(self.measure(cfg)?.utilization)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub utilization: f64,
    /// DRAM cycles.
    pub elapsed_cycles: f64,
    pub seconds: f64,
    pub bytes: f64,
}

/// Issues every tile at its ready cycle with tile-level row grouping and
/// drains the channels.
pub fn stream(cfg: &ArchConfig, tiles: &[BenchTile]) -> Result<DramStats, AddressError> {
    let mut mem = MemorySystem::new(cfg);
    for t in tiles {
        let Some(ready) = t.iter().map(|r| r.ready).min() else {
            continue;
        };
        let reqs: Vec<_> = t.iter().map(|r| (r.kind, ByteRange::new(r.addr, r.bytes))).collect();
        mem.issue_tile(ready, &reqs, Scheduling::RowGrouped)?;
    }
    mem.drain();
    Ok(mem.stats())
}
