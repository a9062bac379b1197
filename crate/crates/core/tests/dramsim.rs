mod common;

use common::dram_ref::{random_trace, reference_completions, tiny_config};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stacksim::arch::ArchConfig;
use stacksim::dramsim::trace::{parse_trace, replay, write_trace, TraceRecord};
use stacksim::dramsim::{AccessKind, ByteRange, MemorySystem, Scheduling};

#[test]
fn matches_reference_on_random_traces() {
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let mut mem = MemorySystem::new(&cfg);
        let trace = random_trace(&mut rng, mem.map().capacity(), 200);
        let ids = replay(&mut mem, &trace).unwrap();
        let got: Vec<_> = ids.iter().map(|&id| mem.completion(id).unwrap()).collect();
        assert_eq!(got, reference_completions(&cfg, &trace));
    }
}

#[test]
fn matches_reference_with_shallow_queue_and_odd_timing() {
    let mut cfg = tiny_config();
    cfg.dram_timing.queue_depth = 3;
    cfg.dram_timing.t_ccd = 6;
    cfg.dram_timing.t_ras = 20;
    cfg.dram_timing.t_rtw = 1;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let mut mem = MemorySystem::new(&cfg);
        let trace = random_trace(&mut rng, mem.map().capacity(), 120);
        let ids = replay(&mut mem, &trace).unwrap();
        let got: Vec<_> = ids.iter().map(|&id| mem.completion(id).unwrap()).collect();
        assert_eq!(got, reference_completions(&cfg, &trace));
    }
}

#[test]
fn trace_file_round_trip_replays_identically() {
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut probe = MemorySystem::new(&cfg);
    let trace = random_trace(&mut rng, probe.map().capacity(), 50);
    let reparsed = parse_trace(&write_trace(&trace)).unwrap();
    assert_eq!(reparsed, trace);
    let a = replay(&mut probe, &trace).unwrap();
    let mut other = MemorySystem::new(&cfg);
    let b = replay(&mut other, &reparsed).unwrap();
    for (x, y) in a.into_iter().zip(b) {
        assert_eq!(probe.completion(x), other.completion(y));
    }
}

fn one_channel() -> ArchConfig {
    let mut cfg = tiny_config();
    cfg.core.channels = 1;
    cfg
}

#[test]
fn random_row_bursts_reach_closed_form_utilization() {
    // tRAS = tRCD + tBURST so a PRE can follow the burst immediately.
    let mut cfg = one_channel();
    cfg.dram_timing.t_ras = cfg.dram_timing.t_rcd + cfg.dram_timing.t_burst;
    let t = cfg.dram_timing;
    let mut mem = MemorySystem::new(&cfg);
    let row = cfg.logical_row_bytes();
    let n = 2000;
    let trace: Vec<_> = (0..n)
        .map(|i| TraceRecord {
            ready: 0,
            kind: AccessKind::Read,
            addr: (i % 2) * row,
            bytes: 32,
        })
        .collect();
    replay(&mut mem, &trace).unwrap();
    let s = mem.stats();
    let expect = f64::from(t.t_burst) / f64::from(t.t_rp + t.t_rcd + t.t_burst);
    assert!((s.utilization - expect).abs() < 1e-3, "{} vs {expect}", s.utilization);
    assert_eq!(s.row_hits, 0);
}

#[test]
fn peak_bandwidth_is_never_exceeded() {
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let mut mem = MemorySystem::new(&cfg);
        let trace = random_trace(&mut rng, mem.map().capacity(), 200);
        replay(&mut mem, &trace).unwrap();
        let s = mem.stats();
        assert!(s.utilization <= 1.0 + 1e-12);
        // every channel moves at most one burst per tBURST
        for ch in mem.channels() {
            assert!(ch.stats.busy_cycles <= ch.stats.last_done);
        }
    }
}

#[test]
fn row_grouped_tiles_never_lose_to_fcfs() {
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let probe = MemorySystem::new(&cfg);
        let trace = random_trace(&mut rng, probe.map().capacity(), 40);
        let tile: Vec<_> = trace
            .iter()
            .map(|r| (r.kind, ByteRange::new(r.addr, r.bytes)))
            .collect();
        let mut fcfs = MemorySystem::new(&cfg);
        fcfs.issue_tile(0, &tile, Scheduling::Fcfs).unwrap();
        let mut grouped = MemorySystem::new(&cfg);
        grouped.issue_tile(0, &tile, Scheduling::RowGrouped).unwrap();
        assert!(grouped.drain() <= fcfs.drain());
        assert_eq!(grouped.stats().bytes, fcfs.stats().bytes);
    }
}
