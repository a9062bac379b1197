//! Hand-timed execution descriptions on a one-core, one-channel machine.
//!
//! Timing (DRAM cycles, 2 DRAM cycles per core cycle): ACT→RD 18, burst 4,
//! column spacing 4, ACT→PRE 42, PRE→ACT 18. Bursts are 128 B, rows 64 KB.

use stacksim::arch::ArchConfig;
use stacksim::orchestrator::run;
use stacksim::tiler::ExecutionDescription;

fn machine() -> ArchConfig {
    let mut cfg = ArchConfig::reference_chip();
    cfg.noc.rows = 1;
    cfg.noc.cols = 1;
    cfg.core.channels = 1;
    assert_eq!(cfg.dram_clock_ghz(), 2.0);
    assert_eq!(cfg.channel.burst_bytes(), 128);
    assert_eq!(cfg.logical_row_bytes(), 65536);
    cfg
}

const PLACEMENT: &str = "
  placement:
    alignment: 65536
    tensors:
    - name: A
      base: 0
      shape: [1048576]
      strides: [1]
      layout: row
      dtype: int8
      bytes: 1048576
";

fn cycles(body: &str) -> u64 {
    let text = format!("operators:\n- name: op\n  schedules:\n  - cores: [0]\n    iterations:\n{body}{PLACEMENT}");
    let exec = ExecutionDescription::from_yaml(&text).unwrap_or_else(|e| panic!("{e}\n{text}"));
    run(&exec, &machine()).unwrap().total_cycles
}

#[test]
fn one_row_read() {
    // ACT at 0, first data at 18 + 4, three more bursts 4 apart: 34 → 17
    let body = "    - items:\n      - {op: dram_read, tensor: A, ranges: [{addr: 0, bytes: 512}]}\n";
    assert_eq!(cycles(body), 17);
}

#[test]
fn read_then_dependent_gemm() {
    // 64×512×512 fp16 at 15360 FLOP/cycle: ⌈33554432 / 15360⌉ = 2185
    let body = "    - items:\n      - {op: dram_read, tensor: A, ranges: [{addr: 0, bytes: 512}]}\n\
                \x20   - items:\n      - {op: matrix, m: 64, n: 512, k: 512, dtype: fp16, accumulate: false}\n";
    assert_eq!(cycles(body), 17 + 2185);
}

#[test]
fn row_conflict_pays_precharge() {
    // row 0 data at 22; PRE waits for tRAS (42), ACT at 60, data at 82 → 41
    let body = "    - items:\n      - {op: dram_read, tensor: A, ranges: [{addr: 0, bytes: 128}, {addr: 65536, bytes: 128}]}\n";
    assert_eq!(cycles(body), 41);
}
