use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use stacksim::arch::{parse_arch, ArchConfig};
use stacksim::dramsim::trace::write_trace;
use stacksim::kerneldsl::{parse_kernel, typecheck, Bindings};
use stacksim::orchestrator::operator_latency;
use stacksim::partition::{build_collective, CollectiveKind, CommPlan, CoreArray};
use stacksim::thermal::StackDescription;
use stacksim::tiler::{autotune, ExecutionDescription, TensorPlacement, TuneOptions};
use stacksim::workload::{
    build_decoding_graph, parse_sweep_csv, plan_operator, rows_to_csv, run_sweep, simulate, simulate_exec,
    steady_temperatures, summarize, DecodingScenario, DramBench, GemmBench, ModelSpec, PagedAttentionBench,
    SimulateOptions, SweepSpec, Workload,
};

/// Input that fails a parse or consistency check; exits with status 2.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "stacksim", version, about = "Cycle-level simulator for 3D-DRAM-stacked LLM accelerators")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check an architecture config and print its derived metrics.
    Validate {
        #[arg(long)]
        config: PathBuf,
        /// Die-stack description replacing the config's thermal stack.
        #[arg(long)]
        stack: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse a kernel program.
    Parse {
        #[arg(long)]
        kernel: PathBuf,
        /// Print the AST as JSON.
        #[arg(long)]
        dump_ast: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search tile sizes of a kernel for the lowest simulated latency.
    Tune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        kernel: PathBuf,
        /// Problem-size binding `NAME=VALUE`; repeatable.
        #[arg(long = "bind", value_name = "NAME=VALUE")]
        binds: Vec<String>,
        #[arg(long, default_value_t = TuneOptions::default().beam)]
        beam: usize,
        /// Execution description of the best tiling (YAML).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Placement of the best tiling (YAML).
        #[arg(long)]
        placement_out: Option<PathBuf>,
    },
    /// Simulate a decoding step, an execution description or a CommPlan.
    Simulate(SimulateArgs),
    /// Run a design-space sweep.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Sweep spec (TOML).
        #[arg(long)]
        spec: PathBuf,
        /// Overrides every workload seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        serial: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a DRAM benchmark trace or a collective CommPlan.
    TraceGen {
        #[arg(long, value_enum)]
        kind: TraceKind,
        /// Benchmark parameters (TOML); defaults otherwise.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Prints the benchmark's utilization under this config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Collective participants as `ROWSxCOLS`.
        #[arg(long, default_value = "4x4")]
        shape: String,
        /// Collective bytes per core.
        #[arg(long, default_value_t = 65536)]
        bytes: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a sweep CSV.
    Report {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TraceKind {
    GemmTile,
    PagedAttention,
    RingReduceScatter,
    RingAllGather,
    AllReduce1d,
    AllReduce2d,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Built-in model name or model file (TOML).
    #[arg(long, conflicts_with_all = ["exec", "comm_plan"])]
    model: Option<String>,
    #[arg(long)]
    layers: Option<u32>,
    #[arg(long, default_value_t = 16)]
    batch: u64,
    #[arg(long, default_value_t = 1024)]
    context: u64,
    #[arg(long, default_value_t = 1)]
    accelerators: u32,
    #[arg(long, default_value_t = 1)]
    tp: u32,
    #[arg(long, default_value_t = 1)]
    ep: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Execution description (YAML).
    #[arg(long, conflicts_with = "comm_plan")]
    exec: Option<PathBuf>,
    /// Placement (YAML) applied to every operator of `--exec`.
    #[arg(long, requires = "exec")]
    placement: Option<PathBuf>,
    /// CommPlan text, simulated as one operator.
    #[arg(long)]
    comm_plan: Option<PathBuf>,
    #[arg(long)]
    stack: Option<PathBuf>,
    #[arg(long)]
    no_thermal: bool,
    #[arg(long)]
    thermal_resolution: Option<usize>,
    /// Steady-state temperature field (CSV).
    #[arg(long)]
    thermal_csv: Option<PathBuf>,
    /// Lowered execution description (YAML), `--model` only.
    #[arg(long)]
    exec_out: Option<PathBuf>,
    /// Per-operator report (CSV).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_config(path: &Path, stack: Option<&Path>) -> Result<ArchConfig> {
    let mut cfg = parse_arch(&read(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    if let Some(s) = stack {
        cfg.thermal_stack = toml::from_str::<StackDescription>(&read(s)?)
            .map_err(|e| invalid(format!("{}: {e}", s.display())))?;
    }
    let bad = cfg.validate();
    if !bad.is_empty() {
        let lines: Vec<String> = bad.iter().map(|v| format!("  {v}")).collect();
        return Err(invalid(format!("{}: invalid configuration\n{}", path.display(), lines.join("\n"))));
    }
    Ok(cfg)
}

fn load_model(name: &str) -> Result<ModelSpec> {
    if ModelSpec::builtin_names().any(|n| n == name) {
        return Ok(ModelSpec::builtin(name)?);
    }
    let path = Path::new(name);
    if path.exists() {
        return ModelSpec::parse(&read(path)?).map_err(|e| invalid(format!("{name}: {e}")));
    }
    let known: Vec<&str> = ModelSpec::builtin_names().collect();
    Err(invalid(format!("unknown model `{name}`; built-in models: {}", known.join(", "))))
}

fn parse_binds(binds: &[String]) -> Result<Bindings> {
    binds
        .iter()
        .map(|b| {
            let (k, v) = b
                .split_once('=')
                .ok_or_else(|| invalid(format!("binding `{b}` is not NAME=VALUE")))?;
            let v: i64 = v
                .trim()
                .parse()
                .map_err(|_| invalid(format!("binding `{b}` has a non-integer value")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

fn validate(config: &Path, stack: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config, stack)?;
    let m = cfg.derived_metrics();
    let text = serde_json::to_string_pretty(&json!({
        "valid": true,
        "cores": cfg.noc.core_count(),
        "channel_gbps": m.channel_gbps,
        "core_gbps": m.core_gbps,
        "core_capacity_bytes": m.core_capacity_bytes,
        "chip_gbps": m.chip_gbps,
        "chip_capacity_bytes": m.chip_capacity_bytes,
        "peak_matrix_flops_per_cycle": m.peak_matrix_flops_per_cycle,
        "peak_vector_flops_per_cycle": m.peak_vector_flops_per_cycle,
        "logical_row_bytes": cfg.logical_row_bytes(),
        "dram_clock_ghz": cfg.dram_clock_ghz(),
    }))?;
    emit(out, &(text + "\n"))
}

fn parse(kernel: &Path, dump_ast: bool, out: Option<&Path>) -> Result<()> {
    let prog = parse_kernel(&read(kernel)?).map_err(|e| invalid(format!("{}: {e}", kernel.display())))?;
    if dump_ast {
        emit(out, &(prog.to_json() + "\n"))
    } else {
        emit(out, &format!("{}: ok ({})\n", kernel.display(), prog.name))
    }
}

fn tune(
    config: &Path,
    kernel: &Path,
    binds: &[String],
    beam: usize,
    out: Option<&Path>,
    placement_out: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(config, None)?;
    let prog = parse_kernel(&read(kernel)?).map_err(|e| invalid(format!("{}: {e}", kernel.display())))?;
    let base = parse_binds(binds)?;
    let opts = TuneOptions {
        beam,
        ..TuneOptions::default()
    };
    let res = autotune(&prog, &cfg, &base, opts, |op| operator_latency(op, &cfg))
        .map_err(|e| invalid(e.to_string()))?;
    let bindings = res.bindings();
    // the kernel with its chosen tiles must still check
    typecheck(&prog, &cfg, &base.clone().into_iter().chain(bindings.clone()).collect())
        .map_err(|e| invalid(e.to_string()))?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "kernel": prog.name,
            "tiling": bindings,
            "latency_cycles": res.latency,
            "evaluated": res.evaluated.len(),
        }))?
    );
    if let Some(p) = out {
        let exec = ExecutionDescription {
            operators: vec![res.operator.clone()],
        };
        emit(Some(p), &exec.to_yaml())?;
    }
    if let Some(p) = placement_out {
        emit(Some(p), &res.operator.placement.to_yaml())?;
    }
    Ok(())
}

fn run_simulate(a: &SimulateArgs) -> Result<()> {
    let cfg = load_config(&a.config, a.stack.as_deref())?;
    let opts = SimulateOptions {
        thermal: !a.no_thermal,
        thermal_resolution: a.thermal_resolution,
        ..SimulateOptions::default()
    };
    let (cfg, report) = if let Some(name) = &a.model {
        let mut model = load_model(name)?;
        if let Some(l) = a.layers {
            model = model.with_layers(l);
        }
        let scen = DecodingScenario {
            batch: a.batch,
            context: a.context,
            accelerators: a.accelerators,
            tp: a.tp,
            ep: a.ep,
            seed: a.seed,
        };
        let graph = build_decoding_graph(&model, &scen).map_err(|e| invalid(e.to_string()))?;
        let sim = simulate(&graph, &cfg, &opts)?;
        if let Some(p) = &a.exec_out {
            emit(Some(p), &sim.lowered.exec.to_yaml())?;
        }
        (sim.cfg, sim.report)
    } else {
        let exec = if let Some(p) = &a.exec {
            let mut exec =
                ExecutionDescription::from_yaml(&read(p)?).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            if let Some(pl) = &a.placement {
                let placement = TensorPlacement::from_yaml(&read(pl)?)
                    .map_err(|e| invalid(format!("{}: {e}", pl.display())))?;
                for op in &mut exec.operators {
                    op.placement = placement.clone();
                }
            }
            exec.check_dependencies().map_err(invalid)?;
            exec
        } else if let Some(p) = &a.comm_plan {
            let plan = CommPlan::from_text(&read(p)?).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            plan.validate().map_err(|e| invalid(e.to_string()))?;
            let cols = cfg.noc.cols;
            let ids: Vec<u32> = (0..plan.array.size())
                .map(|c| {
                    let (r, k) = plan.array.physical_of(c);
                    r * cols + k
                })
                .collect();
            let name = p.file_stem().map_or("comm".into(), |s| s.to_string_lossy().into_owned());
            ExecutionDescription {
                operators: vec![plan_operator(&name, &plan, &ids)],
            }
        } else {
            bail!(invalid("simulate needs one of --model, --exec or --comm-plan"));
        };
        let (cfg, report, _) = simulate_exec(&exec, &cfg, &opts)?;
        (cfg, report)
    };
    if let Some(p) = &a.thermal_csv {
        let (grid, t) = steady_temperatures(&cfg, &report, a.thermal_resolution)?;
        emit(Some(p), &grid.to_csv(&t, &cfg.thermal_stack))?;
    }
    emit(a.out.as_deref(), &report.to_csv())
}

fn sweep(config: &Path, spec: &Path, seed: Option<u64>, serial: bool, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config, None)?;
    let mut spec = SweepSpec::parse(&read(spec)?).map_err(|e| invalid(format!("{}: {e}", spec.display())))?;
    if let Some(s) = seed {
        for w in &mut spec.workloads {
            match &mut w.workload {
                Workload::Decode(d) => d.scenario.seed = s,
                Workload::PagedAttention(p) => p.seed = s,
                Workload::GemmTile(_) => {}
            }
        }
    }
    let rows = run_sweep(&cfg, &spec, !serial).map_err(|e| invalid(e.to_string()))?;
    emit(out, &rows_to_csv(&rows))
}

#[allow(clippy::too_many_arguments)]
fn trace_gen(
    kind: TraceKind,
    params: Option<&Path>,
    config: Option<&Path>,
    seed: Option<u64>,
    shape: &str,
    bytes: u64,
    out: Option<&Path>,
) -> Result<()> {
    let text = params.map(read).transpose()?;
    let bad = |e: toml::de::Error| invalid(format!("benchmark parameters: {e}"));
    let bench = match kind {
        TraceKind::GemmTile => Some(DramBench::GemmTile(match &text {
            Some(t) => toml::from_str::<GemmBench>(t).map_err(bad)?,
            None => GemmBench::default(),
        })),
        TraceKind::PagedAttention => {
            let mut p = match &text {
                Some(t) => toml::from_str::<PagedAttentionBench>(t).map_err(bad)?,
                None => PagedAttentionBench::default(),
            };
            if let Some(s) = seed {
                p.seed = s;
            }
            Some(DramBench::PagedAttention(p))
        }
        _ => None,
    };
    if let Some(b) = bench {
        if let Some(c) = config {
            let cfg = load_config(c, None)?;
            let r = b.measure(&cfg)?;
            eprintln!("utilization {:.6} over {:.0} DRAM cycles", r.utilization, r.elapsed_cycles);
        }
        return emit(out, &write_trace(&b.trace()));
    }
    let collective = match kind {
        TraceKind::RingReduceScatter => CollectiveKind::RingReduceScatter,
        TraceKind::RingAllGather => CollectiveKind::RingAllGather,
        TraceKind::AllReduce1d => CollectiveKind::AllReduce1d,
        _ => CollectiveKind::AllReduce2d,
    };
    let dims: Vec<u32> = shape
        .split('x')
        .map(|d| d.parse().map_err(|_| invalid(format!("bad shape `{shape}`"))))
        .collect::<Result<_>>()?;
    let [r, c] = dims[..] else {
        return Err(invalid(format!("shape `{shape}` must be ROWSxCOLS")));
    };
    let arr = CoreArray::new(&[r, c], (r, c)).map_err(|e| invalid(e.to_string()))?;
    let plan = build_collective(&arr, collective, bytes).map_err(|e| invalid(e.to_string()))?;
    emit(out, &plan.to_text())
}

fn report(input: &Path, out: Option<&Path>) -> Result<()> {
    let rows = parse_sweep_csv(&read(input)?).map_err(|e| invalid(format!("{}: {e}", input.display())))?;
    emit(out, &summarize(&rows).to_csv())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Validate { config, stack, out } => validate(&config, stack.as_deref(), out.as_deref()),
        Cmd::Parse { kernel, dump_ast, out } => parse(&kernel, dump_ast, out.as_deref()),
        Cmd::Tune {
            config,
            kernel,
            binds,
            beam,
            out,
            placement_out,
        } => tune(&config, &kernel, &binds, beam, out.as_deref(), placement_out.as_deref()),
        Cmd::Simulate(a) => run_simulate(&a),
        Cmd::Sweep {
            config,
            spec,
            seed,
            serial,
            out,
        } => sweep(&config, &spec, seed, serial, out.as_deref()),
        Cmd::TraceGen {
            kind,
            params,
            config,
            seed,
            shape,
            bytes,
            out,
        } => trace_gen(kind, params.as_deref(), config.as_deref(), seed, &shape, bytes, out.as_deref()),
        Cmd::Report { input, out } => report(&input, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<Invalid>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
