use serde::{Deserialize, Serialize};

use super::graph::DecodeGraph;
use super::lower::{lower_graph, LowerOptions, Lowered};
use super::WorkloadError;
use crate::arch::ArchConfig;
use crate::orchestrator::{run, SimReport};
use crate::tiler::ExecutionDescription;
use crate::thermal::{power_map, regulate, Regulation, ThermalGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulateOptions {
    pub lower: LowerOptions,
    /// Regulate the core frequency against the stack's temperature limit.
    pub thermal: bool,
    /// Overrides the stack's grid resolution for the regulation solves.
    pub thermal_resolution: Option<usize>,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        Self {
            lower: LowerOptions::default(),
            thermal: true,
            thermal_resolution: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    /// The configuration actually simulated, after regulation.
    pub cfg: ArchConfig,
    pub lowered: Lowered,
    pub report: SimReport,
    pub regulation: Option<Regulation>,
}

/// Average logic (compute + NoC) and DRAM power per core of a finished run.
pub fn average_power(report: &SimReport, cores: u32) -> (f64, f64) {
    let t = report.end_to_end_seconds;
    if t <= 0.0 {
        return (0.0, 0.0);
    }
    let n = f64::from(cores);
    (
        (report.energy.compute_j + report.energy.noc_j) / t / n,
        report.energy.dram_j / t / n,
    )
}

/// Runs `sim` at the configured frequency and, with regulation on, again at
/// the highest frequency whose steady-state peak stays within the stack's
/// limit. Energy per step is taken from the first run; power at another
/// frequency scales linearly with it.
fn regulated<T, F>(cfg: &ArchConfig, opts: &SimulateOptions, sim: F) -> Result<(ArchConfig, T, SimReport, Option<Regulation>), WorkloadError>
where
    F: Fn(&ArchConfig) -> Result<(T, SimReport), WorkloadError>,
{
    let (first, report) = sim(cfg)?;
    if !opts.thermal {
        return Ok((cfg.clone(), first, report, None));
    }
    let stack = &cfg.thermal_stack;
    let res = opts.thermal_resolution.unwrap_or(stack.resolution);
    let grid = ThermalGrid::with_resolution(stack, res)?;
    let cores = cfg.noc.core_count();
    let (logic, dram) = average_power(&report, cores);
    let f0 = cfg.core.frequency_ghz;
    let shape = (cfg.noc.rows, cfg.noc.cols);
    let (tuned, regulation) = regulate(cfg, &grid, |f| {
        let s = f / f0;
        let n = cores as usize;
        power_map(stack, res, shape, &vec![logic * s; n], &vec![dram * s; n])
    })?;
    let (out, mut report) = if tuned.core.frequency_ghz == f0 {
        (first, report)
    } else {
        sim(&tuned)?
    };
    report.peak_temperature_c = Some(regulation.peak_c());
    Ok((tuned, out, report, Some(regulation)))
}

/// Lowers, autotunes and runs `graph`, regulating the frequency against
/// the temperature limit when `opts.thermal` is set.
pub fn simulate(graph: &DecodeGraph, cfg: &ArchConfig, opts: &SimulateOptions) -> Result<Simulation, WorkloadError> {
    let (cfg, lowered, report, regulation) = regulated(cfg, opts, |c| {
        let l = lower_graph(graph, c, opts.lower)?;
        let r = run(&l.exec, c)?;
        Ok((l, r))
    })?;
    Ok(Simulation {
        cfg,
        lowered,
        report,
        regulation,
    })
}

/// Runs a ready-made execution description under the same regulation.
pub fn simulate_exec(
    exec: &ExecutionDescription,
    cfg: &ArchConfig,
    opts: &SimulateOptions,
) -> Result<(ArchConfig, SimReport, Option<Regulation>), WorkloadError> {
    let (cfg, (), report, regulation) = regulated(cfg, opts, |c| Ok(((), run(exec, c)?)))?;
    Ok((cfg, report, regulation))
}

/// Steady-state temperature field under the average power of `report`.
pub fn steady_temperatures(
    cfg: &ArchConfig,
    report: &SimReport,
    resolution: Option<usize>,
) -> Result<(ThermalGrid, Vec<f64>), WorkloadError> {
    let stack = &cfg.thermal_stack;
    let res = resolution.unwrap_or(stack.resolution);
    let grid = ThermalGrid::with_resolution(stack, res)?;
    let n = cfg.noc.core_count() as usize;
    let (logic, dram) = average_power(report, cfg.noc.core_count());
    let p = power_map(stack, res, (cfg.noc.rows, cfg.noc.cols), &vec![logic; n], &vec![dram; n]);
    let t = grid.steady_state(&p)?;
    Ok((grid, t))
}
