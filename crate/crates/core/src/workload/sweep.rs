use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::bench::{DramBench, GemmBench, PagedAttentionBench};
use super::graph::build_decoding_graph;
use super::lower::LowerOptions;
use super::model::{DecodingScenario, ModelSpec};
use super::simulate::{simulate, SimulateOptions};
use crate::arch::ArchConfig;

/// One axis of the design space. `apply` maps a grid value onto a
/// configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepDimension {
    /// `x` in the `2^x · BL` interleaving chunk.
    InterleaveX,
    /// Channel count with the core's total pin count fixed.
    Channels,
    /// Logical row bytes.
    LogicalRow,
    /// Channel count at a fixed pin count per channel.
    BandwidthAlloc,
    /// SRAM bytes per core.
    Sram,
    /// Matrix to vector throughput ratio at fixed total throughput.
    MatrixVectorRatio,
    /// NoC link bytes per cycle.
    LinkWidth,
}

impl SweepDimension {
    pub const ALL: [SweepDimension; 7] = [
        SweepDimension::InterleaveX,
        SweepDimension::Channels,
        SweepDimension::LogicalRow,
        SweepDimension::BandwidthAlloc,
        SweepDimension::Sram,
        SweepDimension::MatrixVectorRatio,
        SweepDimension::LinkWidth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepDimension::InterleaveX => "interleave_x",
            SweepDimension::Channels => "channels",
            SweepDimension::LogicalRow => "logical_row",
            SweepDimension::BandwidthAlloc => "bandwidth_alloc",
            SweepDimension::Sram => "sram",
            SweepDimension::MatrixVectorRatio => "matrix_vector_ratio",
            SweepDimension::LinkWidth => "link_width",
        }
    }

    /// The configuration at grid value `v`. Channel and row changes keep
    /// per-core capacity by rescaling the physical-bank row count `R`.
    pub fn apply(self, base: &ArchConfig, v: f64) -> Result<ArchConfig, String> {
        let mut cfg = base.clone();
        let int = |v: f64| -> Result<u64, String> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as u64)
            } else {
                Err(format!("{} needs a non-negative integer, got {v}", self.name()))
            }
        };
        let rescale_rows = |cfg: &mut ArchConfig, old: u64, new: u64| -> Result<(), String> {
            let total = u64::from(base.lb.rows) * old;
            if new == 0 || total % new != 0 {
                return Err(format!("{}: R·{old} = {total} is not divisible by {new}", self.name()));
            }
            cfg.lb.rows = u32::try_from(total / new).map_err(|e| e.to_string())?;
            Ok(())
        };
        match self {
            SweepDimension::InterleaveX => cfg.channel.interleave_log2 = int(v)? as u32,
            SweepDimension::Channels => {
                let ch = int(v)?;
                let pins = u64::from(base.channel.io_pins) * u64::from(base.core.channels);
                if ch == 0 || pins % ch != 0 {
                    return Err(format!("channels: {pins} pins do not split into {ch} channels"));
                }
                cfg.core.channels = ch as u32;
                cfg.channel.io_pins = (pins / ch) as u32;
                rescale_rows(&mut cfg, u64::from(base.core.channels), ch)?;
            }
            SweepDimension::BandwidthAlloc => {
                let ch = int(v)?;
                cfg.core.channels = ch as u32;
                rescale_rows(&mut cfg, u64::from(base.core.channels), ch)?;
            }
            SweepDimension::LogicalRow => {
                let bytes = int(v)?;
                let pb = base.pb.row_size_bytes;
                if bytes == 0 || bytes % pb != 0 {
                    return Err(format!("logical_row: {bytes} is not a multiple of the {pb}-byte PB row"));
                }
                let c = bytes / pb;
                cfg.lb.cols = c as u32;
                rescale_rows(&mut cfg, u64::from(base.lb.cols), c)?;
            }
            SweepDimension::Sram => cfg.core.sram_bytes = int(v)?,
            SweepDimension::MatrixVectorRatio => {
                if v <= 0.0 {
                    return Err(format!("matrix_vector_ratio must be positive, got {v}"));
                }
                let total = base.core.matrix_tflops + base.core.vector_tflops;
                cfg.core.matrix_tflops = total * v / (v + 1.0);
                cfg.core.vector_tflops = total / (v + 1.0);
            }
            SweepDimension::LinkWidth => cfg.noc.link_bytes_per_cycle = int(v)? as u32,
        }
        let bad = cfg.validate();
        if !bad.is_empty() {
            let msgs: Vec<String> = bad.iter().map(ToString::to_string).collect();
            return Err(msgs.join("; "));
        }
        Ok(cfg)
    }
}

impl fmt::Display for SweepDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeWorkload {
    /// Built-in model name.
    pub model: String,
    #[serde(default)]
    pub layers: Option<u32>,
    pub scenario: DecodingScenario,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Workload {
    Decode(DecodeWorkload),
    GemmTile(GemmBench),
    PagedAttention(PagedAttentionBench),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedWorkload {
    pub name: String,
    #[serde(flatten)]
    pub workload: Workload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub dimension: SweepDimension,
    pub values: Vec<f64>,
}

/// Stages run in order; every stage after the first starts from the best
/// value (lowest mean latency over the workloads) of the stages before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub stages: Vec<Stage>,
    pub workloads: Vec<NamedWorkload>,
    #[serde(default = "yes")]
    pub thermal: bool,
    #[serde(default)]
    pub thermal_resolution: Option<usize>,
    #[serde(default)]
    pub lower: LowerOptions,
}

fn yes() -> bool {
    true
}

impl SweepSpec {
    pub fn parse(text: &str) -> Result<Self, SweepError> {
        toml::from_str(text).map_err(|e| SweepError::Spec(e.to_string()))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SweepError {
    #[error("sweep spec: {0}")]
    Spec(String),
    #[error("sweep grid is empty")]
    EmptyGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub stage: usize,
    pub dimension: SweepDimension,
    pub value: f64,
    pub workload: String,
    pub feasible: bool,
    pub frequency_ghz: f64,
    pub peak_temperature_c: Option<f64>,
    pub cycles: u64,
    pub latency_s: f64,
    pub utilization: f64,
    pub energy_j: f64,
    pub error: String,
}

impl SweepRow {
    fn failed(stage: usize, dimension: SweepDimension, value: f64, workload: &str, error: String) -> Self {
        Self {
            stage,
            dimension,
            value,
            workload: workload.to_string(),
            feasible: false,
            frequency_ghz: 0.0,
            peak_temperature_c: None,
            cycles: 0,
            latency_s: 0.0,
            utilization: 0.0,
            energy_j: 0.0,
            error,
        }
    }
}

fn evaluate(cfg: &ArchConfig, w: &NamedWorkload, spec: &SweepSpec) -> Result<SweepRow, String> {
    let row = |feasible, frequency_ghz, peak_temperature_c, cycles, latency_s, utilization, energy_j| SweepRow {
        stage: 0,
        dimension: SweepDimension::InterleaveX,
        value: 0.0,
        workload: w.name.clone(),
        feasible,
        frequency_ghz,
        peak_temperature_c,
        cycles,
        latency_s,
        utilization,
        energy_j,
        error: String::new(),
    };
    let bench = |b: DramBench| -> Result<SweepRow, String> {
        let r = b.measure(cfg).map_err(|e| e.to_string())?;
        let energy = r.bytes * 8.0 * cfg.energy.dram_pj_per_bit * 1e-12;
        Ok(row(
            true,
            cfg.core.frequency_ghz,
            None,
            r.elapsed_cycles.round() as u64,
            r.seconds,
            r.utilization,
            energy,
        ))
    };
    match &w.workload {
        Workload::GemmTile(g) => bench(DramBench::GemmTile(*g)),
        Workload::PagedAttention(p) => bench(DramBench::PagedAttention(*p)),
        Workload::Decode(d) => {
            let mut model = ModelSpec::builtin(&d.model).map_err(|e| e.to_string())?;
            if let Some(l) = d.layers {
                model = model.with_layers(l);
            }
            let graph = build_decoding_graph(&model, &d.scenario).map_err(|e| e.to_string())?;
            let opts = SimulateOptions {
                lower: spec.lower,
                thermal: spec.thermal,
                thermal_resolution: spec.thermal_resolution,
            };
            let sim = simulate(&graph, cfg, &opts).map_err(|e| e.to_string())?;
            let r = &sim.report;
            let bound: f64 = r.operators.iter().map(|o| o.roofline.bound()).sum();
            let utilization = if r.total_cycles == 0 {
                0.0
            } else {
                (bound / r.total_cycles as f64).min(1.0)
            };
            Ok(row(
                sim.regulation.as_ref().is_none_or(|g| g.feasible),
                sim.cfg.core.frequency_ghz,
                r.peak_temperature_c,
                r.total_cycles,
                r.end_to_end_seconds,
                utilization,
                r.energy.total(),
            ))
        }
    }
}

/// Runs every stage of `spec` from `base`. Rows come out ordered by stage,
/// grid value and workload name whether or not points run in parallel.
pub fn run_sweep(base: &ArchConfig, spec: &SweepSpec, parallel: bool) -> Result<Vec<SweepRow>, SweepError> {
    if spec.stages.is_empty() || spec.workloads.is_empty() || spec.stages.iter().any(|s| s.values.is_empty()) {
        return Err(SweepError::EmptyGrid);
    }
    let mut base = base.clone();
    let mut out = Vec::new();
    for (si, stage) in spec.stages.iter().enumerate() {
        let points: Vec<(f64, &NamedWorkload)> = stage
            .values
            .iter()
            .flat_map(|&v| spec.workloads.iter().map(move |w| (v, w)))
            .collect();
        let eval = |&(v, w): &(f64, &NamedWorkload)| {
            let res = stage.dimension.apply(&base, v).and_then(|cfg| evaluate(&cfg, w, spec));
            match res {
                Ok(mut r) => {
                    r.stage = si;
                    r.dimension = stage.dimension;
                    r.value = v;
                    r
                }
                Err(e) => SweepRow::failed(si, stage.dimension, v, &w.name, e),
            }
        };
        let mut rows: Vec<SweepRow> = if parallel {
            points.par_iter().map(eval).collect()
        } else {
            points.iter().map(eval).collect()
        };
        rows.sort_by(|a, b| a.value.total_cmp(&b.value).then_with(|| a.workload.cmp(&b.workload)));
        if let Some(best) = best_value(&rows, spec.workloads.len()) {
            base = stage.dimension.apply(&base, best).expect("best value was applied once already");
        }
        out.extend(rows);
    }
    Ok(out)
}

/// Grid value whose workloads all ran feasibly with the lowest mean
/// latency; the first such value wins ties.
fn best_value(rows: &[SweepRow], workloads: usize) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for chunk in rows.chunk_by(|a, b| a.value == b.value) {
        if chunk.len() != workloads || !chunk.iter().all(|r| r.feasible) {
            continue;
        }
        let mean = chunk.iter().map(|r| r.latency_s).sum::<f64>() / chunk.len() as f64;
        if best.is_none_or(|(_, m)| mean < m) {
            best = Some((chunk[0].value, mean));
        }
    }
    best.map(|b| b.0)
}

pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record([
            "stage",
            "dimension",
            "value",
            "workload",
            "feasible",
            "frequency_ghz",
            "peak_temperature_c",
            "cycles",
            "latency_s",
            "utilization",
            "energy_j",
            "error",
        ])
        .expect("in-memory write");
    }
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("csv is utf-8")
}
