//! Hardware description of a 3D-DRAM-stacked accelerator system.
//!
//! A single TOML document describes the whole system. Its sections mirror the
//! hardware hierarchy: each core owns a 3D-DRAM memory system and compute
//! logic, cores talk over an on-chip mesh, and accelerators talk over a
//! fixed-bandwidth link.
//!
//! ```toml
//! schema_version = 1
//!
//! [core]
//! channels = 16
//! matrix_tflops = 15.36
//! vector_tflops = 0.48
//! sram_bytes = 4194304
//! sram_bytes_per_cycle = 4096
//! frequency_ghz = 1.0
//!
//! [core.dram.physical_bank]
//! row_size_bytes = 2048
//! row_count = 1280
//!
//! [core.dram.logical_bank]
//! rows = 4    # R: physical-bank rows
//! cols = 32   # C: physical banks per logical row
//!
//! [core.dram.channel]
//! io_pins = 1024
//! pin_rate_gbps = 0.5
//!
//! [noc]
//! rows = 4
//! cols = 4
//! link_bytes_per_cycle = 128
//!
//! [inter_accel]
//! link_latency_s = 1e-6
//! bandwidth_gbps = 900.0
//! ```
//!
//! Optional sections (`[core.dram.timing]`, `[energy]`, `[thermal_stack]`)
//! and optional keys fall back to the defaults documented on each type.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dramsim::DramTiming;
use crate::thermal::StackDescription;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalBankSpec {
    pub row_size_bytes: u64,
    pub row_count: u64,
}

impl PhysicalBankSpec {
    pub fn capacity_bytes(&self) -> u64 {
        self.row_size_bytes * self.row_count
    }
}

/// An R×C grid of physical banks acting as one bank per channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogicalBankSpec {
    /// R: physical-bank rows.
    pub rows: u32,
    /// C: physical banks concatenated into one logical row.
    pub cols: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub io_pins: u32,
    pub pin_rate_gbps: f64,
    /// x in the `2^x · BL` channel interleaving granularity.
    #[serde(default = "default_interleave_log2")]
    pub interleave_log2: u32,
    #[serde(default = "default_burst_beats")]
    pub burst_beats: u32,
}

fn default_interleave_log2() -> u32 {
    5
}
fn default_burst_beats() -> u32 {
    1
}

impl ChannelSpec {
    /// BL: bytes moved by one burst.
    pub fn burst_bytes(&self) -> u64 {
        u64::from(self.io_pins) / 8 * u64::from(self.burst_beats)
    }

    /// Consecutive bytes mapped to one channel.
    pub fn interleave_bytes(&self) -> u64 {
        self.burst_bytes() << self.interleave_log2
    }

    pub fn gbps(&self) -> f64 {
        f64::from(self.io_pins) * self.pin_rate_gbps / 8.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreSpec {
    pub channels: u32,
    pub matrix_tflops: f64,
    pub vector_tflops: f64,
    pub sram_bytes: u64,
    pub sram_bytes_per_cycle: u64,
    pub frequency_ghz: f64,
    /// FLOPs charged per element by the `exp` vector primitive.
    #[serde(default = "default_exp_flops")]
    pub exp_flops_per_elem: u32,
}

fn default_exp_flops() -> u32 {
    4
}

impl CoreSpec {
    pub fn matrix_flops_per_cycle(&self) -> f64 {
        self.matrix_tflops * 1e12 / (self.frequency_ghz * 1e9)
    }

    pub fn vector_flops_per_cycle(&self) -> f64 {
        self.vector_tflops * 1e12 / (self.frequency_ghz * 1e9)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NocSpec {
    pub rows: u32,
    pub cols: u32,
    /// Total cores on the chip; defaults to `rows · cols`.
    #[serde(default)]
    pub cores: Option<u32>,
    pub link_bytes_per_cycle: u32,
    /// Defaults to the link width (one flit per link cycle).
    #[serde(default)]
    pub flit_bytes: Option<u32>,
    #[serde(default = "default_router_delay")]
    pub router_delay_cycles: u32,
    #[serde(default = "default_link_delay")]
    pub link_delay_cycles: u32,
    #[serde(default = "default_queue_flits")]
    pub input_queue_flits: u32,
}

fn default_router_delay() -> u32 {
    2
}
fn default_link_delay() -> u32 {
    1
}
fn default_queue_flits() -> u32 {
    8
}

impl NocSpec {
    pub fn core_count(&self) -> u32 {
        self.cores.unwrap_or(self.rows * self.cols)
    }

    pub fn flit_bytes(&self) -> u32 {
        self.flit_bytes.unwrap_or(self.link_bytes_per_cycle)
    }

    /// Link cycles needed to move one flit.
    pub fn cycles_per_flit(&self) -> u64 {
        u64::from(self.flit_bytes().div_ceil(self.link_bytes_per_cycle.max(1)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterAccelSpec {
    pub link_latency_s: f64,
    pub bandwidth_gbps: f64,
    #[serde(default = "default_accels")]
    pub accelerator_count: u32,
}

fn default_accels() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergySpec {
    pub dram_pj_per_bit: f64,
    pub flop_pj: f64,
    pub noc_pj_per_byte_hop: f64,
}

impl Default for EnergySpec {
    fn default() -> Self {
        Self {
            dram_pj_per_bit: 0.77,
            flop_pj: 0.8,
            noc_pj_per_byte_hop: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub pb: PhysicalBankSpec,
    pub lb: LogicalBankSpec,
    pub channel: ChannelSpec,
    pub core: CoreSpec,
    pub noc: NocSpec,
    pub inter: InterAccelSpec,
    pub energy: EnergySpec,
    pub dram_timing: DramTiming,
    pub thermal_stack: StackDescription,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedMetrics {
    pub channel_gbps: f64,
    pub core_gbps: f64,
    pub core_capacity_bytes: u64,
    pub chip_gbps: f64,
    pub chip_capacity_bytes: u64,
    pub peak_matrix_flops_per_cycle: f64,
    pub peak_vector_flops_per_cycle: f64,
}

/// One broken invariant found by [`ArchConfig::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    pub fn new(field: &str, rule: &str) -> Self {
        Self {
            field: field.to_string(),
            rule: rule.to_string(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("missing mandatory field: {0}")]
    MissingField(String),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("invalid quantity: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

// On-disk layout. Kept separate so the in-memory type stays flat.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileLayout {
    schema_version: u32,
    core: CoreSection,
    noc: NocSpec,
    inter_accel: InterAccelSpec,
    #[serde(default)]
    energy: EnergySpec,
    #[serde(default)]
    thermal_stack: StackDescription,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoreSection {
    channels: u32,
    matrix_tflops: f64,
    vector_tflops: f64,
    sram_bytes: u64,
    sram_bytes_per_cycle: u64,
    frequency_ghz: f64,
    #[serde(default = "default_exp_flops")]
    exp_flops_per_elem: u32,
    dram: DramSection,
}

impl CoreSection {
    fn new(c: CoreSpec, dram: DramSection) -> Self {
        Self {
            channels: c.channels,
            matrix_tflops: c.matrix_tflops,
            vector_tflops: c.vector_tflops,
            sram_bytes: c.sram_bytes,
            sram_bytes_per_cycle: c.sram_bytes_per_cycle,
            frequency_ghz: c.frequency_ghz,
            exp_flops_per_elem: c.exp_flops_per_elem,
            dram,
        }
    }

    fn compute(&self) -> CoreSpec {
        CoreSpec {
            channels: self.channels,
            matrix_tflops: self.matrix_tflops,
            vector_tflops: self.vector_tflops,
            sram_bytes: self.sram_bytes,
            sram_bytes_per_cycle: self.sram_bytes_per_cycle,
            frequency_ghz: self.frequency_ghz,
            exp_flops_per_elem: self.exp_flops_per_elem,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DramSection {
    physical_bank: PhysicalBankSpec,
    logical_bank: LogicalBankSpec,
    channel: ChannelSpec,
    #[serde(default)]
    timing: DramTiming,
}

/// Parses a system description.
pub fn parse_arch(text: &str) -> Result<ArchConfig, ConfigError> {
    let file: FileLayout = toml::from_str(text).map_err(|e| classify(text, e))?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(ConfigError::Schema(file.schema_version));
    }
    let cfg = ArchConfig {
        pb: file.core.dram.physical_bank,
        lb: file.core.dram.logical_bank,
        channel: file.core.dram.channel,
        core: file.core.compute(),
        noc: file.noc,
        inter: file.inter_accel,
        energy: file.energy,
        dram_timing: file.core.dram.timing,
        thermal_stack: file.thermal_stack,
    };
    let bad: Vec<_> = cfg
        .validate()
        .into_iter()
        .filter(|v| v.rule.starts_with("must be"))
        .collect();
    if !bad.is_empty() {
        return Err(ConfigError::Invalid(bad));
    }
    Ok(cfg)
}

fn classify(text: &str, err: toml::de::Error) -> ConfigError {
    let message = err.message().to_string();
    if let Some(rest) = message.strip_prefix("missing field `") {
        return ConfigError::MissingField(rest.trim_end_matches('`').to_string());
    }
    let (line, column) = match err.span() {
        Some(span) => line_col(text, span.start),
        None => (1, 1),
    };
    ConfigError::Syntax {
        line,
        column,
        message,
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

impl ArchConfig {
    /// Serializes to the on-disk format, writing every defaulted field so
    /// that `parse_arch(&cfg.to_toml())` reproduces `cfg` exactly.
    pub fn to_toml(&self) -> String {
        let file = FileLayout {
            schema_version: SCHEMA_VERSION,
            core: CoreSection::new(
                self.core,
                DramSection {
                    physical_bank: self.pb,
                    logical_bank: self.lb,
                    channel: self.channel,
                    timing: self.dram_timing,
                },
            ),
            noc: self.noc,
            inter_accel: self.inter,
            energy: self.energy,
            thermal_stack: self.thermal_stack.clone(),
        };
        toml::to_string(&file).expect("config is always representable as TOML")
    }

    /// Bytes in one logical row (the ACT/PRE granularity).
    pub fn logical_row_bytes(&self) -> u64 {
        u64::from(self.lb.cols) * self.pb.row_size_bytes
    }

    /// Logical rows in one channel.
    pub fn logical_rows_per_channel(&self) -> u64 {
        u64::from(self.lb.rows) * self.pb.row_count
    }

    pub fn logical_bank_bytes(&self) -> u64 {
        u64::from(self.lb.rows) * u64::from(self.lb.cols) * self.pb.capacity_bytes()
    }

    pub fn core_capacity_bytes(&self) -> u64 {
        u64::from(self.core.channels) * self.logical_bank_bytes()
    }

    /// DRAM command clock in GHz. Unless pinned in the timing section, one
    /// burst per `t_burst` DRAM cycles matches the channel pin bandwidth.
    pub fn dram_clock_ghz(&self) -> f64 {
        self.dram_timing.clock_ghz.unwrap_or_else(|| {
            self.channel.gbps() * f64::from(self.dram_timing.t_burst)
                / self.channel.burst_bytes() as f64
        })
    }

    /// Peak bytes per core cycle that the simulated channels of one core can
    /// deliver.
    pub fn dram_peak_bytes_per_core_cycle(&self) -> f64 {
        let per_dram_cycle = f64::from(self.core.channels) * self.channel.burst_bytes() as f64
            / f64::from(self.dram_timing.t_burst);
        per_dram_cycle * self.dram_clock_ghz() / self.core.frequency_ghz
    }

    pub fn derived_metrics(&self) -> DerivedMetrics {
        let channel_gbps = self.channel.gbps();
        let core_gbps = f64::from(self.core.channels) * channel_gbps;
        let cores = self.noc.core_count();
        DerivedMetrics {
            channel_gbps,
            core_gbps,
            core_capacity_bytes: self.core_capacity_bytes(),
            chip_gbps: core_gbps * f64::from(cores),
            chip_capacity_bytes: self.core_capacity_bytes() * u64::from(cores),
            peak_matrix_flops_per_cycle: self.core.matrix_flops_per_cycle(),
            peak_vector_flops_per_cycle: self.core.vector_flops_per_cycle(),
        }
    }

    /// Every broken invariant; empty when the configuration is consistent.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut positive_int = |field: &str, v: u64| {
            if v == 0 {
                out.push(Violation::new(field, "must be > 0"));
            }
        };
        positive_int("core.dram.physical_bank.row_size_bytes", self.pb.row_size_bytes);
        positive_int("core.dram.physical_bank.row_count", self.pb.row_count);
        positive_int("core.dram.channel.io_pins", self.channel.io_pins.into());
        positive_int("core.dram.channel.burst_beats", self.channel.burst_beats.into());
        positive_int("core.channels", self.core.channels.into());
        positive_int("core.sram_bytes", self.core.sram_bytes);
        positive_int("core.sram_bytes_per_cycle", self.core.sram_bytes_per_cycle);
        positive_int("noc.rows", self.noc.rows.into());
        positive_int("noc.cols", self.noc.cols.into());
        positive_int("noc.link_bytes_per_cycle", self.noc.link_bytes_per_cycle.into());
        positive_int("noc.flit_bytes", self.noc.flit_bytes().into());
        positive_int("noc.input_queue_flits", self.noc.input_queue_flits.into());
        positive_int("inter_accel.accelerator_count", self.inter.accelerator_count.into());

        let mut positive_real = |field: &str, v: f64| {
            if !(v > 0.0 && v.is_finite()) {
                out.push(Violation::new(field, "must be > 0"));
            }
        };
        positive_real("core.dram.channel.pin_rate_gbps", self.channel.pin_rate_gbps);
        positive_real("core.matrix_tflops", self.core.matrix_tflops);
        positive_real("core.vector_tflops", self.core.vector_tflops);
        positive_real("core.frequency_ghz", self.core.frequency_ghz);
        positive_real("inter_accel.bandwidth_gbps", self.inter.bandwidth_gbps);

        for (field, v) in [
            ("energy.dram_pj_per_bit", self.energy.dram_pj_per_bit),
            ("energy.flop_pj", self.energy.flop_pj),
            ("energy.noc_pj_per_byte_hop", self.energy.noc_pj_per_byte_hop),
            ("inter_accel.link_latency_s", self.inter.link_latency_s),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(Violation::new(field, "must be ≥ 0"));
            }
        }

        if self.lb.rows < 1 {
            out.push(Violation::new("core.dram.logical_bank.rows", "R ≥ 1"));
        }
        if self.lb.cols < 1 {
            out.push(Violation::new("core.dram.logical_bank.cols", "C ≥ 1"));
        }
        if self.pb.row_size_bytes > 0 && !self.pb.row_size_bytes.is_power_of_two() {
            out.push(Violation::new(
                "core.dram.physical_bank.row_size_bytes",
                "power of two",
            ));
        }
        if self.channel.interleave_log2 > 10 {
            out.push(Violation::new(
                "core.dram.channel.interleave_log2",
                "0 ≤ x ≤ 10",
            ));
        }
        if self.channel.io_pins % 8 != 0 {
            out.push(Violation::new(
                "core.dram.channel.io_pins",
                "multiple of 8 (whole bytes per beat)",
            ));
        }
        let bl = self.channel.burst_bytes();
        if bl > 0 && self.logical_row_bytes() > 0 && self.logical_row_bytes() % bl != 0 {
            out.push(Violation::new(
                "core.dram.channel",
                "logical row must hold a whole number of bursts",
            ));
        }
        if !(self.core.matrix_tflops / self.core.vector_tflops).is_finite() {
            out.push(Violation::new(
                "core.vector_tflops",
                "matrix/vector ratio finite",
            ));
        }
        if self.noc.rows * self.noc.cols != self.noc.core_count() {
            out.push(Violation::new("noc", "rows·cols = total cores"));
        }
        let flit = self.noc.flit_bytes();
        let link = self.noc.link_bytes_per_cycle;
        if link > 0 && flit > 0 && flit > link && flit % link != 0 {
            out.push(Violation::new(
                "noc.flit_bytes",
                "flit must fit in a whole number of link cycles",
            ));
        }
        if self.noc.router_delay_cycles < 1 {
            out.push(Violation::new("noc.router_delay_cycles", "delay ≥ 1"));
        }
        if self.noc.link_delay_cycles < 1 {
            out.push(Violation::new("noc.link_delay_cycles", "delay ≥ 1"));
        }
        self.dram_timing.violations(&mut out);
        self.thermal_stack.violations(&mut out);
        out
    }

    /// The 16-core reference chip: 4×4 mesh, 16 channels of 1024 pins at
    /// 0.5 Gbps per core, 15.36 + 0.48 TFLOPS and 4 MB SRAM per core.
    pub fn reference_chip() -> Self {
        parse_arch(REFERENCE_CHIP_TOML).expect("bundled reference config parses")
    }
}

/// Bundled description of the 16-core reference chip.
pub const REFERENCE_CHIP_TOML: &str = include_str!("../configs/reference_chip.toml");
