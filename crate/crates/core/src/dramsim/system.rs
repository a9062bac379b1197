use serde::{Deserialize, Serialize};

use super::address::{AddressError, AddressMap};
use super::channel::{AccessKind, Burst, Channel};
use super::DramTiming;
use crate::arch::ArchConfig;

/// A contiguous byte range in core DRAM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ByteRange {
    pub addr: u64,
    pub bytes: u64,
}

impl ByteRange {
    pub fn new(addr: u64, bytes: u64) -> Self {
        Self { addr, bytes }
    }

    pub fn end(&self) -> u64 {
        self.addr + self.bytes
    }
}

/// How bursts of one tile are ordered before entering the channel queues.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduling {
    /// Arrival order.
    Fcfs,
    /// Tile-level open-row batching, see [`super::schedule_tile`].
    #[default]
    RowGrouped,
}

pub type RequestId = usize;

#[derive(Debug, Clone, Copy)]
struct RequestState {
    ready: u64,
    outstanding: u32,
    done: u64,
}

/// Summary of a drained simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DramStats {
    pub bytes: u64,
    pub bursts: u64,
    pub acts: u64,
    pub row_hits: u64,
    pub row_misses: u64,
    pub elapsed_cycles: u64,
    pub achieved_gbps: f64,
    pub utilization: f64,
    pub row_hit_rate: f64,
    /// Request latency histogram: `(upper bound in cycles, count)` with
    /// power-of-two buckets.
    pub latency_histogram: Vec<(u64, u64)>,
}

/// The channel set of one core plus the request front-end that splits byte
/// ranges into bursts.
#[derive(Debug, Clone)]
pub struct MemorySystem {
    map: AddressMap,
    burst_bytes: u64,
    timing: DramTiming,
    clock_ghz: f64,
    channels: Vec<Channel>,
    requests: Vec<RequestState>,
    now: u64,
    first_ready: Option<u64>,
}

impl MemorySystem {
    pub fn new(cfg: &ArchConfig) -> Self {
        let map = AddressMap::new(cfg);
        Self {
            map,
            burst_bytes: cfg.channel.burst_bytes(),
            timing: cfg.dram_timing,
            clock_ghz: cfg.dram_clock_ghz(),
            channels: (0..map.channels).map(|_| Channel::new(cfg.dram_timing)).collect(),
            requests: Vec::new(),
            now: 0,
            first_ready: None,
        }
    }

    pub fn map(&self) -> &AddressMap {
        &self.map
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// Peak bytes per DRAM cycle over all channels.
    pub fn peak_bytes_per_cycle(&self) -> f64 {
        self.channels.len() as f64 * self.burst_bytes as f64 / f64::from(self.timing.t_burst)
    }

    fn check(&self, r: &ByteRange) -> Result<(), AddressError> {
        if r.bytes > 0 && r.end() > self.map.capacity() {
            return Err(AddressError {
                addr: r.end() - 1,
                capacity: self.map.capacity(),
            });
        }
        Ok(())
    }

    fn bursts_of(&self, r: &ByteRange) -> impl Iterator<Item = (usize, u64)> + '_ {
        let bl = self.burst_bytes;
        let (first, last) = if r.bytes == 0 {
            (1, 0)
        } else {
            (r.addr / bl, (r.end() - 1) / bl)
        };
        (first..=last).map(move |b| self.map.channel_row(b * bl))
    }

    fn open_request(&mut self, ready: u64) -> RequestId {
        self.first_ready = Some(self.first_ready.map_or(ready, |f| f.min(ready)));
        self.requests.push(RequestState {
            ready,
            outstanding: 0,
            done: ready,
        });
        self.requests.len() - 1
    }

    /// Queues one request made of `ranges`, all becoming ready at `ready`.
    /// The request completes when its last burst does.
    pub fn issue(
        &mut self,
        ready: u64,
        kind: AccessKind,
        ranges: &[ByteRange],
    ) -> Result<RequestId, AddressError> {
        for r in ranges {
            self.check(r)?;
        }
        let id = self.open_request(ready);
        let tag = id as u32;
        let mut n = 0;
        for r in ranges {
            let bursts: Vec<_> = self.bursts_of(r).collect();
            for (ch, row) in bursts {
                self.channels[ch].push(Burst {
                    tag,
                    row,
                    kind,
                    ready,
                });
                n += 1;
            }
        }
        self.requests[id].outstanding = n;
        Ok(id)
    }

    /// Queues all requests of one work item at once, ordered by `policy`.
    /// Returns one id per input request.
    pub fn issue_tile(
        &mut self,
        ready: u64,
        tile: &[(AccessKind, ByteRange)],
        policy: Scheduling,
    ) -> Result<Vec<RequestId>, AddressError> {
        for (_, r) in tile {
            self.check(r)?;
        }
        let ids: Vec<_> = tile.iter().map(|_| self.open_request(ready)).collect();
        let mut per_channel: Vec<Vec<Burst>> = vec![Vec::new(); self.channels.len()];
        for ((kind, r), &id) in tile.iter().zip(&ids) {
            let mut n = 0;
            for (ch, row) in self.bursts_of(r) {
                per_channel[ch].push(Burst {
                    tag: id as u32,
                    row,
                    kind: *kind,
                    ready,
                });
                n += 1;
            }
            self.requests[id].outstanding = n;
        }
        for (ch, bursts) in per_channel.into_iter().enumerate() {
            if bursts.is_empty() {
                continue;
            }
            let order = match policy {
                Scheduling::Fcfs => bursts,
                Scheduling::RowGrouped => super::schedule::best_order(&self.channels[ch], bursts),
            };
            for b in order {
                self.channels[ch].push(b);
            }
        }
        Ok(ids)
    }

    fn collect(&mut self) {
        for ch in &mut self.channels {
            for (tag, at) in ch.take_completions() {
                let r = &mut self.requests[tag as usize];
                r.outstanding -= 1;
                r.done = r.done.max(at);
            }
        }
    }

    /// Advances one DRAM cycle.
    pub fn tick(&mut self) {
        for ch in &mut self.channels {
            ch.tick(self.now);
        }
        self.now += 1;
        self.collect();
    }

    /// Runs every queued burst to completion and returns the cycle at which
    /// the last one finished (or the current cycle if nothing was pending).
    pub fn drain(&mut self) -> u64 {
        for ch in &mut self.channels {
            ch.drain();
        }
        self.collect();
        let last = self.channels.iter().map(|c| c.stats.last_done).max().unwrap_or(0);
        self.now = self.now.max(last);
        self.now
    }

    pub fn completion(&self, id: RequestId) -> Option<u64> {
        let r = self.requests.get(id)?;
        (r.outstanding == 0).then_some(r.done)
    }

    pub fn request_count(&self) -> usize {
        self.requests.len()
    }

    /// Statistics over the window from the first request's ready cycle to the
    /// last completion.
    pub fn stats(&self) -> DramStats {
        let mut bytes = 0;
        let mut bursts = 0;
        let mut acts = 0;
        let mut hits = 0;
        let mut misses = 0;
        let mut last = 0;
        for ch in &self.channels {
            bursts += ch.stats.bursts;
            acts += ch.stats.acts;
            hits += ch.stats.row_hits;
            misses += ch.stats.row_misses;
            last = last.max(ch.stats.last_done);
        }
        bytes += bursts * self.burst_bytes;
        let elapsed = match self.first_ready {
            Some(f) if last > f => last - f,
            _ => 0,
        };
        let utilization = if elapsed == 0 {
            0.0
        } else {
            bytes as f64 / (elapsed as f64 * self.peak_bytes_per_cycle())
        };
        let achieved_gbps = if elapsed == 0 {
            0.0
        } else {
            bytes as f64 / elapsed as f64 * self.clock_ghz
        };
        let mut hist: Vec<(u64, u64)> = Vec::new();
        for r in self.requests.iter().filter(|r| r.outstanding == 0) {
            let bound = (r.done - r.ready).max(1).next_power_of_two();
            match hist.binary_search_by_key(&bound, |&(b, _)| b) {
                Ok(i) => hist[i].1 += 1,
                Err(i) => hist.insert(i, (bound, 1)),
            }
        }
        DramStats {
            bytes,
            bursts,
            acts,
            row_hits: hits,
            row_misses: misses,
            elapsed_cycles: elapsed,
            achieved_gbps,
            utilization,
            row_hit_rate: if bursts == 0 { 0.0 } else { hits as f64 / bursts as f64 },
            latency_histogram: hist,
        }
    }
}
