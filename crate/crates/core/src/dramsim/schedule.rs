use std::collections::HashMap;

use super::channel::{Burst, Channel};

/// Groups the bursts of one tile by logical row: the currently open row
/// first, then the remaining rows in order of first appearance. Order inside
/// a row is kept, so accesses to the same address (which always share a row)
/// never swap and read-after-write order is preserved.
pub fn schedule_tile(open_row: Option<u64>, bursts: &[Burst]) -> Vec<Burst> {
    let mut rank: HashMap<u64, usize> = HashMap::new();
    if let Some(r) = open_row {
        rank.insert(r, 0);
    }
    for b in bursts {
        let next = rank.len();
        rank.entry(b.row).or_insert(next);
    }
    let mut out = bursts.to_vec();
    out.sort_by_key(|b| rank[&b.row]);
    out
}

fn is_grouped(open_row: Option<u64>, bursts: &[Burst]) -> bool {
    let mut seen = std::collections::HashSet::new();
    let mut current = open_row;
    for b in bursts {
        if Some(b.row) != current {
            if !seen.insert(b.row) || Some(b.row) == open_row {
                return false;
            }
            current = Some(b.row);
        }
    }
    true
}

fn finish(mut ch: Channel, bursts: &[Burst]) -> u64 {
    for b in bursts {
        ch.push(*b);
    }
    ch.drain();
    ch.stats.last_done
}

/// Picks between arrival order and the row-grouped order for one channel,
/// whichever finishes first when appended to `ch`'s current queue. Ties keep
/// arrival order.
pub(crate) fn best_order(ch: &Channel, bursts: Vec<Burst>) -> Vec<Burst> {
    if is_grouped(ch.open_row(), &bursts) {
        return bursts;
    }
    let grouped = schedule_tile(ch.open_row(), &bursts);
    if grouped == bursts {
        return bursts;
    }
    if finish(ch.clone(), &grouped) < finish(ch.clone(), &bursts) {
        grouped
    } else {
        bursts
    }
}
