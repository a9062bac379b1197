//! A deliberately naive DRAM reference: byte-by-byte address enumeration and
//! a per-burst recurrence over command times. Shares no code with the
//! simulator beyond the config type.

use rand::Rng;
use stacksim::arch::ArchConfig;
use stacksim::dramsim::trace::TraceRecord;
use stacksim::dramsim::AccessKind;

/// Small system: 2 channels, 4 logical rows of 1 KB each, 32 B bursts and
/// 64 B interleaving.
pub fn tiny_config() -> ArchConfig {
    let mut cfg = ArchConfig::reference_chip();
    cfg.core.channels = 2;
    cfg.channel.io_pins = 256;
    cfg.channel.interleave_log2 = 1;
    cfg.pb.row_size_bytes = 256;
    cfg.pb.row_count = 2;
    cfg.lb.cols = 4;
    cfg.lb.rows = 2;
    cfg
}

pub fn random_trace(rng: &mut impl Rng, capacity: u64, max_len: usize) -> Vec<TraceRecord> {
    let n = rng.gen_range(1..=max_len);
    let mut ready = 0;
    (0..n)
        .map(|_| {
            ready += rng.gen_range(0..40);
            let addr = rng.gen_range(0..capacity);
            let bytes = rng.gen_range(1..=256).min(capacity - addr);
            TraceRecord {
                ready,
                kind: if rng.gen_bool(0.3) { AccessKind::Write } else { AccessKind::Read },
                addr,
                bytes,
            }
        })
        .collect()
}

struct Bank {
    open: Option<u64>,
    act: i64,
    next_act: i64,
    col: Option<(i64, AccessKind)>,
    last_cmd: i64,
}

/// Completion cycle of every record, replayed in file order.
pub fn reference_completions(cfg: &ArchConfig, trace: &[TraceRecord]) -> Vec<u64> {
    let channels = cfg.core.channels as usize;
    let chunk = (cfg.channel.io_pins as u64 / 8) << cfg.channel.interleave_log2;
    let row_bytes = cfg.lb.cols as u64 * cfg.pb.row_size_bytes;
    let rows = cfg.lb.rows as u64 * cfg.pb.row_count;
    let capacity = channels as u64 * rows * row_bytes;
    let bl = cfg.channel.io_pins as u64 / 8;

    // Byte -> (channel, row) by filling channels chunk by chunk.
    let mut where_is = Vec::with_capacity(capacity as usize);
    let mut fill = vec![0u64; channels];
    let mut ch = 0;
    while (where_is.len() as u64) < capacity {
        for _ in 0..chunk {
            where_is.push((ch, fill[ch] / row_bytes));
            fill[ch] += 1;
        }
        ch = (ch + 1) % channels;
    }

    let t = cfg.dram_timing;
    let (rcd, rp, ras) = (t.t_rcd as i64, t.t_rp as i64, t.t_ras as i64);
    let (ccd, burst, rtw, wtr) = (t.t_ccd as i64, t.t_burst as i64, t.t_rtw as i64, t.t_wtr as i64);

    let mut queues: Vec<Vec<(usize, u64, AccessKind, i64)>> = vec![Vec::new(); channels];
    for (i, r) in trace.iter().enumerate() {
        let mut b = r.addr / bl * bl;
        while b < r.addr + r.bytes {
            let (ch, row) = where_is[b as usize];
            queues[ch].push((i, row, r.kind, r.ready as i64));
            b += bl;
        }
    }

    let mut done: Vec<i64> = trace.iter().map(|r| r.ready as i64).collect();
    for q in queues {
        let mut bank = Bank {
            open: None,
            act: 0,
            next_act: 0,
            col: None,
            last_cmd: -1,
        };
        for (req, row, kind, ready) in q {
            let mut now = ready.max(bank.last_cmd + 1);
            if bank.open != Some(row) {
                if bank.open.is_some() {
                    let mut pre = now.max(bank.act + ras);
                    if let Some((c, _)) = bank.col {
                        pre = pre.max(c + burst);
                    }
                    bank.next_act = pre + rp;
                    now = pre + 1;
                }
                let act = now.max(bank.next_act);
                bank.act = act;
                bank.open = Some(row);
                now = act + 1;
            }
            let mut col = now.max(bank.act + rcd);
            if let Some((c, prev)) = bank.col {
                col = col.max(c + ccd).max(c + burst);
                if prev == AccessKind::Read && kind == AccessKind::Write {
                    col = col.max(c + rtw);
                }
                if prev == AccessKind::Write && kind == AccessKind::Read {
                    col = col.max(c + burst + wtr);
                }
            }
            bank.col = Some((col, kind));
            bank.last_cmd = col;
            done[req] = done[req].max(col + burst);
        }
    }
    done.into_iter().map(|d| d as u64).collect()
}
