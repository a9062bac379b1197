//! Plain-text request traces: one request per line,
//! `cycle_ready, R|W, address, bytes`. Blank lines and lines starting with
//! `#` are ignored. Addresses may be decimal or `0x` hexadecimal.

use std::fmt::Write as _;

use thiserror::Error;

use super::channel::AccessKind;
use super::system::{ByteRange, MemorySystem, RequestId};
use super::AddressError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub ready: u64,
    pub kind: AccessKind,
    pub addr: u64,
    pub bytes: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("trace line {line}: {message}")]
pub struct TraceError {
    pub line: usize,
    pub message: String,
}

fn number(s: &str) -> Option<u64> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: &str| TraceError {
            line: i + 1,
            message: message.to_string(),
        };
        let fields: Vec<_> = line.split(',').map(str::trim).collect();
        let [ready, kind, addr, bytes] = fields[..] else {
            return Err(err("expected 4 comma-separated fields"));
        };
        let kind = match kind {
            "R" | "r" => AccessKind::Read,
            "W" | "w" => AccessKind::Write,
            _ => return Err(err("kind must be R or W")),
        };
        out.push(TraceRecord {
            ready: number(ready).ok_or_else(|| err("bad cycle"))?,
            kind,
            addr: number(addr).ok_or_else(|| err("bad address"))?,
            bytes: number(bytes).ok_or_else(|| err("bad byte count"))?,
        });
    }
    Ok(out)
}

pub fn write_trace(records: &[TraceRecord]) -> String {
    let mut s = String::from("# cycle_ready, R|W, address, bytes\n");
    for r in records {
        let k = match r.kind {
            AccessKind::Read => 'R',
            AccessKind::Write => 'W',
        };
        writeln!(s, "{}, {}, {:#x}, {}", r.ready, k, r.addr, r.bytes).unwrap();
    }
    s
}

/// Feeds a trace to `mem` in file order and drains it. Returns the request
/// ids in the same order.
pub fn replay(mem: &mut MemorySystem, records: &[TraceRecord]) -> Result<Vec<RequestId>, AddressError> {
    let ids = records
        .iter()
        .map(|r| mem.issue(r.ready, r.kind, &[ByteRange::new(r.addr, r.bytes)]))
        .collect::<Result<Vec<_>, _>>()?;
    mem.drain();
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let recs = vec![
            TraceRecord {
                ready: 0,
                kind: AccessKind::Read,
                addr: 0x1000,
                bytes: 128,
            },
            TraceRecord {
                ready: 12,
                kind: AccessKind::Write,
                addr: 7,
                bytes: 1,
            },
        ];
        assert_eq!(parse_trace(&write_trace(&recs)).unwrap(), recs);
    }

    #[test]
    fn rejects_bad_kind_with_line() {
        let e = parse_trace("# hdr\n0, X, 0, 4\n").unwrap_err();
        assert_eq!(e.line, 2);
    }

    #[test]
    fn accepts_decimal_and_hex() {
        let r = parse_trace("5,W,4096,64\n6, r, 0x10, 0x20").unwrap();
        assert_eq!(r[0].addr, 4096);
        assert_eq!(r[1].bytes, 32);
        assert_eq!(r[1].kind, AccessKind::Read);
    }
}
