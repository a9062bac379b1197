use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::DramTiming;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessKind {
    #[serde(rename = "R")]
    Read,
    #[serde(rename = "W")]
    Write,
}

/// One BL-sized transfer queued at a channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Burst {
    /// Index of the owning request in the memory system.
    pub tag: u32,
    pub row: u64,
    pub kind: AccessKind,
    /// Cycle at which the controller may start serving it.
    pub ready: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Act,
    Pre,
    /// Column read or write for the head burst.
    Col,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub bursts: u64,
    pub reads: u64,
    pub writes: u64,
    pub acts: u64,
    pub pres: u64,
    pub row_hits: u64,
    pub row_misses: u64,
    /// Cycles the data bus was transferring.
    pub busy_cycles: u64,
    pub last_done: u64,
}

/// Open-page, in-order controller for the single logical bank of a channel.
///
/// One command per cycle. Commands are issued for the head burst only; a
/// burst that is not ready blocks the ones behind it.
#[derive(Debug, Clone)]
pub struct Channel {
    timing: DramTiming,
    queue: VecDeque<Burst>,
    /// Bursts waiting for a free controller queue slot.
    backlog: VecDeque<Burst>,
    open_row: Option<u64>,
    head_hit: Option<bool>,
    last_act: u64,
    next_act: u64,
    last_col: Option<(u64, AccessKind)>,
    /// Earliest cycle for the next command of any kind.
    cmd_free: u64,
    pub stats: ChannelStats,
    done: Vec<(u32, u64)>,
}

impl Channel {
    pub fn new(timing: DramTiming) -> Self {
        Self {
            timing,
            queue: VecDeque::new(),
            backlog: VecDeque::new(),
            open_row: None,
            head_hit: None,
            last_act: 0,
            next_act: 0,
            last_col: None,
            cmd_free: 0,
            stats: ChannelStats::default(),
            done: Vec::new(),
        }
    }

    pub fn push(&mut self, b: Burst) {
        if self.queue.len() < self.timing.queue_depth as usize {
            self.queue.push_back(b);
        } else {
            self.backlog.push_back(b);
        }
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn pending(&self) -> usize {
        self.queue.len() + self.backlog.len()
    }

    pub fn open_row(&self) -> Option<u64> {
        self.open_row
    }

    /// Completed bursts as `(tag, completion cycle)` since the last call.
    pub fn take_completions(&mut self) -> Vec<(u32, u64)> {
        std::mem::take(&mut self.done)
    }

    /// Earliest cycle at or after `t` where the head burst can issue its next
    /// command, and which command that is.
    pub fn next_command(&self, t: u64) -> Option<(u64, Command)> {
        let head = self.queue.front()?;
        let tm = &self.timing;
        let t = t.max(head.ready).max(self.cmd_free);
        Some(match self.open_row {
            Some(r) if r == head.row => {
                let mut c = t.max(self.last_act + u64::from(tm.t_rcd));
                if let Some((last, kind)) = self.last_col {
                    c = c.max(last + tm.column_spacing());
                    c = c.max(match (kind, head.kind) {
                        (AccessKind::Read, AccessKind::Write) => last + u64::from(tm.t_rtw),
                        (AccessKind::Write, AccessKind::Read) => {
                            last + u64::from(tm.t_burst) + u64::from(tm.t_wtr)
                        }
                        _ => 0,
                    });
                }
                (c, Command::Col)
            }
            Some(_) => {
                let mut c = t.max(self.last_act + u64::from(tm.t_ras));
                if let Some((last, _)) = self.last_col {
                    c = c.max(last + u64::from(tm.t_burst));
                }
                (c, Command::Pre)
            }
            None => (t.max(self.next_act), Command::Act),
        })
    }

    fn execute(&mut self, at: u64, cmd: Command) {
        let head = *self.queue.front().expect("command issued for an empty queue");
        if self.head_hit.is_none() {
            self.head_hit = Some(self.open_row == Some(head.row));
        }
        match cmd {
            Command::Act => {
                self.open_row = Some(head.row);
                self.last_act = at;
                self.stats.acts += 1;
            }
            Command::Pre => {
                self.open_row = None;
                self.next_act = at + u64::from(self.timing.t_rp);
                self.stats.pres += 1;
            }
            Command::Col => {
                let tb = u64::from(self.timing.t_burst);
                self.last_col = Some((at, head.kind));
                self.queue.pop_front();
                if let Some(b) = self.backlog.pop_front() {
                    self.queue.push_back(b);
                }
                let s = &mut self.stats;
                s.bursts += 1;
                match head.kind {
                    AccessKind::Read => s.reads += 1,
                    AccessKind::Write => s.writes += 1,
                }
                if self.head_hit.take() == Some(true) {
                    s.row_hits += 1;
                } else {
                    s.row_misses += 1;
                }
                s.busy_cycles += tb;
                s.last_done = s.last_done.max(at + tb);
                self.done.push((head.tag, at + tb));
            }
        }
        self.cmd_free = at + 1;
    }

    /// Issues the command that is legal exactly at cycle `t`, if any.
    pub fn tick(&mut self, t: u64) {
        if let Some((at, cmd)) = self.next_command(t) {
            if at == t {
                self.execute(at, cmd);
            }
        }
    }

    /// Jumps from command to command until the queue empties or the next
    /// command would be after `limit`.
    pub fn run_until(&mut self, limit: u64) {
        while let Some((at, cmd)) = self.next_command(0) {
            if at > limit {
                break;
            }
            self.execute(at, cmd);
        }
    }

    pub fn drain(&mut self) {
        self.run_until(u64::MAX);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(row: u64, ready: u64, tag: u32) -> Burst {
        Burst {
            tag,
            row,
            kind: AccessKind::Read,
            ready,
        }
    }

    fn run(bursts: &[Burst]) -> Vec<u64> {
        let mut ch = Channel::new(DramTiming::default());
        for b in bursts {
            ch.push(*b);
        }
        ch.drain();
        let mut done = ch.take_completions();
        done.sort();
        done.into_iter().map(|(_, c)| c).collect()
    }

    #[test]
    fn closed_bank_single_read_costs_trcd_plus_tburst() {
        assert_eq!(run(&[read(3, 0, 0)]), vec![18 + 4]);
    }

    #[test]
    fn same_row_second_read_follows_by_tccd() {
        let done = run(&[read(0, 0, 0), read(0, 0, 1)]);
        assert_eq!(done[1] - done[0], 4);
    }

    #[test]
    fn row_switch_pays_precharge_and_activate() {
        let done = run(&[read(0, 0, 0), read(1, 0, 1)]);
        // ACT@0, COL@18, PRE waits for tRAS (42), ACT@60, COL@78.
        assert_eq!(done, vec![22, 82]);
    }

    #[test]
    fn ready_cycle_delays_issue() {
        assert_eq!(run(&[read(0, 100, 0)]), vec![122]);
    }

    #[test]
    fn write_to_read_turnaround() {
        let w = Burst {
            tag: 0,
            row: 0,
            kind: AccessKind::Write,
            ready: 0,
        };
        let done = run(&[w, read(0, 0, 1)]);
        // write column at 18, read needs 18 + tBURST + tWTR = 30
        assert_eq!(done, vec![22, 34]);
    }

    #[test]
    fn tick_and_run_agree() {
        let bursts: Vec<_> = (0..40)
            .map(|i| Burst {
                tag: i,
                row: u64::from(i * 7 % 3),
                kind: if i % 5 == 0 { AccessKind::Write } else { AccessKind::Read },
                ready: u64::from(i * 3),
            })
            .collect();
        let fast = run(&bursts);
        let mut ch = Channel::new(DramTiming::default());
        for b in &bursts {
            ch.push(*b);
        }
        let mut t = 0;
        while !ch.is_idle() {
            ch.tick(t);
            t += 1;
        }
        let mut slow = ch.take_completions();
        slow.sort();
        assert_eq!(slow.into_iter().map(|(_, c)| c).collect::<Vec<_>>(), fast);
    }

    #[test]
    fn backlog_does_not_change_timing() {
        let bursts: Vec<_> = (0..100).map(|i| read(u64::from(i / 10), 0, i)).collect();
        let deep = run(&bursts);
        let mut timing = DramTiming::default();
        timing.queue_depth = 2;
        let mut ch = Channel::new(timing);
        for b in &bursts {
            ch.push(*b);
        }
        ch.drain();
        let mut done = ch.take_completions();
        done.sort();
        assert_eq!(done.into_iter().map(|(_, c)| c).collect::<Vec<_>>(), deep);
    }
}
