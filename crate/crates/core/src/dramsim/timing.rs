use serde::{Deserialize, Serialize};

/// DRAM command timing, in DRAM clock cycles.
///
/// Only the constraints that matter for a single open-page logical bank are
/// modeled: there is no refresh, no bank groups and no power-down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DramTiming {
    /// ACT to first column command.
    pub t_rcd: u32,
    /// PRE to next ACT.
    pub t_rp: u32,
    /// ACT to PRE.
    pub t_ras: u32,
    /// Minimum spacing between column commands.
    pub t_ccd: u32,
    /// Data-bus occupancy of one burst.
    pub t_burst: u32,
    /// Read column command to write column command.
    pub t_rtw: u32,
    /// End of write data to read column command.
    pub t_wtr: u32,
    /// DRAM command clock. When absent it is derived so that one burst every
    /// `t_burst` cycles delivers exactly the pin bandwidth of the channel.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clock_ghz: Option<f64>,
    /// Per-channel request queue depth (bursts) seen by the controller.
    pub queue_depth: u32,
}

impl Default for DramTiming {
    fn default() -> Self {
        Self {
            t_rcd: 18,
            t_rp: 18,
            t_ras: 42,
            t_ccd: 4,
            t_burst: 4,
            t_rtw: 8,
            t_wtr: 8,
            clock_ghz: None,
            queue_depth: 32,
        }
    }
}

impl DramTiming {
    /// Cycles between consecutive column commands on an open row.
    pub fn column_spacing(&self) -> u64 {
        u64::from(self.t_ccd.max(self.t_burst))
    }

    pub(crate) fn violations(&self, out: &mut Vec<crate::arch::Violation>) {
        use crate::arch::Violation;
        let fields = [
            ("dram_timing.t_rcd", self.t_rcd),
            ("dram_timing.t_rp", self.t_rp),
            ("dram_timing.t_ras", self.t_ras),
            ("dram_timing.t_ccd", self.t_ccd),
            ("dram_timing.t_burst", self.t_burst),
            ("dram_timing.t_rtw", self.t_rtw),
            ("dram_timing.t_wtr", self.t_wtr),
            ("dram_timing.queue_depth", self.queue_depth),
        ];
        for (name, v) in fields {
            if v < 1 {
                out.push(Violation::new(name, "must be ≥ 1"));
            }
        }
        if self.t_ras < self.t_rcd {
            out.push(Violation::new("dram_timing.t_ras", "tRAS ≥ tRCD"));
        }
        if let Some(f) = self.clock_ghz {
            if !(f > 0.0 && f.is_finite()) {
                out.push(Violation::new("dram_timing.clock_ghz", "must be > 0"));
            }
        }
    }
}
