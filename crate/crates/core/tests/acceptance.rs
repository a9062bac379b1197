//! End-to-end acceptance checks. Each check prints one PASS or FAIL line;
//! the process exits nonzero if any check fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::dram_ref::{random_trace, reference_completions, tiny_config};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stacksim::arch::ArchConfig;
use stacksim::dramsim::trace::replay;
use stacksim::dramsim::MemorySystem;
use stacksim::kerneldsl::{parse_kernel, typecheck, Bindings, MATMUL_KL};
use stacksim::nocsim::{run_plan, Mesh, Packet};
use stacksim::orchestrator::{inter_accel_latency, operator_latency, run, SimReport};
use stacksim::partition::{build_collective, split_gemm, CoreArray, CollectiveKind, GemmMapping, Span};
use stacksim::thermal::{
    regulate, Csr, StackDescription, ThermalGrid, FREQUENCY_FLOOR_GHZ, FREQUENCY_STEP_GHZ,
};
use stacksim::thermal::power_map;
use stacksim::tiler::{
    autotune, generate_execution, infer_placement, ExecutionDescription, Operator, TuneOptions, WorkItem,
};
use stacksim::workload::{
    build_decoding_graph, lower_graph, run_sweep, simulate, DecodingScenario, DramBench, GemmBench, LowerOptions,
    ModelSpec, PagedAttentionBench, SimulateOptions, SweepSpec,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(t: Instant, limit: Duration) -> Result<Duration, String> {
    let e = t.elapsed();
    ensure(e < limit, || format!("took {e:.2?}, limit {limit:?}"))?;
    Ok(e)
}

fn dram_oracle() -> Check {
    let t = Instant::now();
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut requests = 0;
    for i in 0..1000 {
        let mut mem = MemorySystem::new(&cfg);
        let trace = random_trace(&mut rng, mem.map().capacity(), 200);
        requests += trace.len();
        let ids = replay(&mut mem, &trace).map_err(|e| e.to_string())?;
        let got: Vec<u64> = ids.iter().map(|&id| mem.completion(id).unwrap()).collect();
        let want = reference_completions(&cfg, &trace);
        ensure(got == want, || format!("trace {i}: completions differ"))?;
    }
    let e = within(t, Duration::from_secs(10))?;
    Ok(format!("1000 traces, {requests} requests identical in {e:.2?}"))
}

fn desk(x: u32, row_kb: u64) -> ArchConfig {
    let mut cfg = ArchConfig::reference_chip();
    cfg.core.channels = 4;
    cfg.channel.interleave_log2 = x;
    cfg.lb.cols = (row_kb * 1024 / cfg.pb.row_size_bytes) as u32;
    cfg
}

fn desk_gemm() -> DramBench {
    DramBench::GemmTile(GemmBench {
        n: 1024,
        ..Default::default()
    })
}

fn interleave_trend() -> Check {
    let t = Instant::now();
    let gemm = desk_gemm();
    let attn = DramBench::PagedAttention(PagedAttentionBench::default());
    let util = |b: &DramBench, x| b.utilization(&desk(x, 16)).map_err(|e| e.to_string());
    let (g0, g5) = (util(&gemm, 0)?, util(&gemm, 5)?);
    ensure(g5 > g0, || format!("gemm x=5 {g5:.4} not above x=0 {g0:.4}"))?;
    let a: Vec<f64> = (0..8).map(|x| util(&attn, x)).collect::<Result<_, _>>()?;
    let max = a.iter().cloned().fold(f64::MIN, f64::max);
    ensure(a[7] <= max, || format!("attention x=7 {:.4} above max {max:.4}", a[7]))?;
    let e = within(t, Duration::from_secs(30))?;
    Ok(format!(
        "gemm x=0 {g0:.4} < x=5 {g5:.4}; attention x=7 {:.4} <= max {max:.4} in {e:.2?}",
        a[7]
    ))
}

fn row_size_trend() -> Check {
    let gemm = desk_gemm();
    let u: Vec<f64> = [16, 32, 64]
        .iter()
        .map(|&kb| gemm.utilization(&desk(5, kb)).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    ensure(u.windows(2).all(|w| w[1] >= w[0]), || format!("not monotone: {u:?}"))?;
    Ok(format!("16KB {:.4} <= 32KB {:.4} <= 64KB {:.4}", u[0], u[1], u[2]))
}

/// Bytes of `op`'s sends crossing the middle column cut (each direction)
/// and the middle row cut (each direction).
fn bisection_bytes(op: &Operator, rows: u32, cols: u32) -> [u64; 4] {
    let mut cut = [0u64; 4];
    let (mc, mr) = (cols / 2, rows / 2);
    for s in &op.schedules {
        for it in &s.iterations {
            for w in &it.items {
                let WorkItem::Send { peer, bytes } = w else {
                    continue;
                };
                for &src in &s.cores {
                    let (sr, sc) = (src / cols, src % cols);
                    let (dr, dc) = (peer / cols, peer % cols);
                    if sc < mc && dc >= mc {
                        cut[0] += bytes;
                    }
                    if sc >= mc && dc < mc {
                        cut[1] += bytes;
                    }
                    if sr < mr && dr >= mr {
                        cut[2] += bytes;
                    }
                    if sr >= mr && dr < mr {
                        cut[3] += bytes;
                    }
                }
            }
        }
    }
    cut
}

/// Chip-level bound: total FLOPs over chip peak, total DRAM bytes over chip
/// peak bandwidth, bisection bytes over bisection bandwidth.
fn roofline_bound(op: &Operator, cfg: &ArchConfig) -> f64 {
    let cores = f64::from(cfg.noc.core_count());
    let mut matrix = 0.0;
    let mut vector = 0.0;
    let mut dram = 0.0;
    for s in &op.schedules {
        let n = s.cores.len() as f64;
        for it in &s.iterations {
            for w in &it.items {
                matrix += w.matrix_flops() as f64 * n;
                vector += w.vector_flops(&cfg.core) as f64 * n;
                dram += w.dram_bytes() as f64 * n;
            }
        }
    }
    let compute = (matrix / (cfg.core.matrix_flops_per_cycle() * cores))
        .max(vector / (cfg.core.vector_flops_per_cycle() * cores));
    let dram = dram / (cfg.dram_peak_bytes_per_core_cycle() * cores);
    let (rows, cols) = (cfg.noc.rows, cfg.noc.cols);
    let cut = bisection_bytes(op, rows, cols);
    let link = f64::from(cfg.noc.link_bytes_per_cycle);
    let noc = [
        cut[0] as f64 / (f64::from(rows) * link),
        cut[1] as f64 / (f64::from(rows) * link),
        cut[2] as f64 / (f64::from(cols) * link),
        cut[3] as f64 / (f64::from(cols) * link),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    compute.max(dram).max(noc)
}

fn roofline() -> Check {
    let cfg = desk(5, 16);
    let model = ModelSpec::builtin("llama3-8b").map_err(|e| e.to_string())?.with_layers(2);
    let g = build_decoding_graph(&model, &DecodingScenario::new(16, 1024)).map_err(|e| e.to_string())?;
    let l = lower_graph(&g, &cfg, LowerOptions::default()).map_err(|e| e.to_string())?;
    let r = run(&l.exec, &cfg).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (op, rep) in l.exec.operators.iter().zip(&r.operators) {
        let bound = roofline_bound(op, &cfg);
        let c = rep.cycles as f64;
        ensure(bound > 0.0, || format!("{}: zero bound", op.name))?;
        ensure(c >= bound, || format!("{}: {c} cycles below bound {bound:.1}", op.name))?;
        ensure(c <= 3.0 * bound, || format!("{}: {c} cycles above 3x bound {bound:.1}", op.name))?;
        worst = worst.max(c / bound);
    }
    Ok(format!("{} operators, worst latency/bound {worst:.3}", r.operators.len()))
}

fn noc_zero_load() -> Check {
    let cfg = ArchConfig::reference_chip();
    let spec = cfg.noc;
    let (tr, tl) = (u64::from(spec.router_delay_cycles), u64::from(spec.link_delay_cycles));
    let k = spec.cycles_per_flit();
    let flit = u64::from(spec.flit_bytes());
    let mut pairs = 0;
    for bytes in [1, flit, 5 * flit + 3] {
        let flits = bytes.div_ceil(flit);
        for s in 0..16u32 {
            for d in 0..16u32 {
                if s == d {
                    continue;
                }
                let (src, dst) = ((s / 4, s % 4), (d / 4, d % 4));
                let hops = u64::from(src.0.abs_diff(dst.0) + src.1.abs_diff(dst.1));
                let want = hops * (tr + tl) + tr + (flits - 1) * k;
                let mut mesh = Mesh::new(&spec);
                mesh.inject(Packet { src, dst, bytes, tag: 0 }, 0);
                mesh.run_to_idle();
                let arr = mesh.arrivals(dst);
                ensure(arr.len() == 1, || format!("{src:?}->{dst:?}: {} arrivals", arr.len()))?;
                let got = arr[0].cycle - arr[0].injected;
                ensure(got == want, || format!("{src:?}->{dst:?} {bytes} B: {got} vs {want}"))?;
                let st = mesh.stats();
                ensure(st.injected_flits == flits && st.ejected_flits == flits, || {
                    format!("{src:?}->{dst:?}: flits {} in, {} out", st.injected_flits, st.ejected_flits)
                })?;
                if bytes == 1 {
                    pairs += 1;
                }
            }
        }
    }
    Ok(format!("{pairs} pairs at 3 packet sizes match; flits conserved"))
}

fn ring_volumes() -> Check {
    let s = 1u64 << 16;
    let cfg = ArchConfig::reference_chip();
    for p in [2u32, 4, 8, 16] {
        let arr = CoreArray::new(&[p], (1, p)).map_err(|e| e.to_string())?;
        let mut spec = cfg.noc;
        spec.rows = 1;
        spec.cols = p;
        for (kind, factor) in [(CollectiveKind::RingReduceScatter, 1), (CollectiveKind::AllReduce1d, 2)] {
            let plan = build_collective(&arr, kind, s).map_err(|e| e.to_string())?;
            let want = factor * u64::from(p - 1) * s / u64::from(p);
            for c in 0..p {
                let got = plan.sent_by(c);
                ensure(got == want, || format!("{kind:?} p={p} core {c}: {got} vs {want}"))?;
            }
            let ran = run_plan(&plan, &spec, 0);
            ensure(ran.injected_bytes == want * u64::from(p), || {
                format!("{kind:?} p={p}: mesh injected {}", ran.injected_bytes)
            })?;
        }
    }
    Ok("reduce-scatter (p-1)/p*S and all-reduce 2(p-1)/p*S per core for p in 2,4,8,16".into())
}

fn one_cell(c: f64, g: f64, ambient: f64) -> ThermalGrid {
    ThermalGrid::from_matrices(vec![c], Csr::from_triplets(1, vec![(0, 0, g)]), ambient)
}

fn thermal() -> Check {
    let (g, c, dt, rise, p) = (0.4, 3.0, 0.25, 30.0, 2.0);
    let grid = one_cell(c, g, 45.0);
    // backward Euler: T_{n+1} = (C T_n / dt + P) / (C / dt + G)
    let mut t = vec![45.0 + rise];
    let mut worst: f64 = 0.0;
    let mut want = rise;
    for n in 1..=100 {
        t = grid.step(&t, &[p], dt).map_err(|e| e.to_string())?;
        want = (c / dt * want + p) / (c / dt + g);
        let got = t[0] - 45.0;
        let err = (got - want).abs() / want.abs();
        ensure(err <= 1e-6, || format!("step {n}: {got} vs {want}"))?;
        worst = worst.max(err);
    }
    // with no power the recurrence is an exact geometric decay
    let mut t = vec![45.0 + rise];
    for n in 1..=100 {
        t = grid.step(&t, &[0.0], dt).map_err(|e| e.to_string())?;
        let want = rise * (1.0 + g * dt / c).powi(-n);
        let err = ((t[0] - 45.0) - want).abs() / want;
        ensure(err <= 1e-6, || format!("decay step {n}: rel err {err}"))?;
        worst = worst.max(err);
    }

    let s = StackDescription::with_dram_dies(1);
    let grid = ThermalGrid::with_resolution(&s, 3).map_err(|e| e.to_string())?;
    let pm = power_map(&s, 3, (1, 1), &[5.0], &[1.0]);
    let steady = grid.steady_state(&pm).map_err(|e| e.to_string())?;
    let mut t = grid.ambient();
    for _ in 0..400 {
        t = grid.step(&t, &pm, 1.0).map_err(|e| e.to_string())?;
    }
    for (a, b) in t.iter().zip(&steady) {
        let r = b - s.ambient_c;
        ensure(((a - s.ambient_c) - r).abs() <= 1e-6 * r, || format!("limit {a} vs steady {b}"))?;
    }

    // peak = ambient + a·f on a unit-conductance cell: the answer is the
    // largest step frequency at or below (t_max - ambient) / a
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut cases = 0;
    while cases < 200 {
        let mut cfg = ArchConfig::reference_chip();
        cfg.core.frequency_ghz = 1.0;
        cfg.thermal_stack.t_max_c = 85.0;
        let a: f64 = rng.gen_range(1.0..2000.0);
        let limit = 40.0 / a;
        let grid = one_cell(1.0, 1.0, 45.0);
        let mut want = None;
        for k in 0.. {
            let f = 1.0 - FREQUENCY_STEP_GHZ * f64::from(k);
            if f < FREQUENCY_FLOOR_GHZ - 1e-12 {
                break;
            }
            if (f - limit).abs() < 1e-6 {
                want = Some(f64::NAN);
                break;
            }
            if f <= limit {
                want = Some(f);
                break;
            }
        }
        if want.is_some_and(f64::is_nan) {
            continue;
        }
        let (out, reg) = regulate(&cfg, &grid, |f| vec![a * f]).map_err(|e| e.to_string())?;
        match want {
            Some(f) => {
                ensure(reg.feasible && (out.core.frequency_ghz - f).abs() < 1e-9, || {
                    format!("a={a}: got {} want {f}", out.core.frequency_ghz)
                })?;
            }
            None => {
                ensure(!reg.feasible && (out.core.frequency_ghz - FREQUENCY_FLOOR_GHZ).abs() < 1e-9, || {
                    format!("a={a}: expected infeasible at the floor, got {}", out.core.frequency_ghz)
                })?;
            }
        }
        let max_steps = ((1.0 - FREQUENCY_FLOOR_GHZ) / FREQUENCY_STEP_GHZ).round() as usize + 1;
        ensure(reg.trace.len() <= max_steps, || format!("{} regulation steps", reg.trace.len()))?;
        cases += 1;
    }
    Ok(format!("worst step rel err {worst:.1e}; steady state = step limit; {cases} regulation cases"))
}

fn inter_accelerator() -> Check {
    let mut cfg = ArchConfig::reference_chip();
    cfg.inter.accelerator_count = 2;
    let link = cfg.inter;
    let base = inter_accel_latency(0, &link);
    ensure(base == link.link_latency_s, || format!("latency(0) {base} vs {}", link.link_latency_s))?;
    for b in [1u64, 1 << 10, 1 << 20, 3 << 30] {
        // the transfer term alone, free of cancellation against the fixed latency
        let mut bare = link;
        bare.link_latency_s = 0.0;
        let transfer = inter_accel_latency(b, &bare);
        let want = b as f64 / (link.bandwidth_gbps * 1e9);
        ensure(transfer == want, || format!("{b} B: transfer {transfer} vs {want}"))?;
        let total = inter_accel_latency(b, &link);
        ensure(total == link.link_latency_s + want, || format!("{b} B: {total} not latency + transfer"))?;
        let exec = ExecutionDescription {
            operators: vec![Operator {
                name: "xfer".into(),
                inter_accel_bytes: b,
                ..Default::default()
            }],
        };
        let r = run(&exec, &cfg).map_err(|e| e.to_string())?;
        ensure(r.operators[0].inter_accel_seconds == inter_accel_latency(b, &link), || {
            format!("simulated {} vs {}", r.operators[0].inter_accel_seconds, inter_accel_latency(b, &link))
        })?;
    }
    Ok(format!("latency(0) = {base:e} s; slope 1/bandwidth"))
}

fn factorizations(n: u32, dims: usize) -> Vec<Vec<u32>> {
    if dims == 1 {
        return vec![vec![n]];
    }
    (1..=n)
        .filter(|d| n % d == 0)
        .flat_map(|d| {
            factorizations(n / d, dims - 1).into_iter().map(move |mut rest| {
                rest.insert(0, d);
                rest
            })
        })
        .collect()
}

fn covers(spans: &mut [Span], extent: u64) -> bool {
    spans.sort_by_key(|s| s.start);
    let mut next = 0;
    for s in spans.iter() {
        if s.start != next {
            return false;
        }
        next = s.end;
    }
    next == extent
}

fn partition_exhaustive() -> Check {
    let mut shapes = 0;
    for n in 1..=64u32 {
        for rows in (1..=n).filter(|r| n % r == 0) {
            let phys = (rows, n / rows);
            for dims in 1..=3 {
                for shape in factorizations(n, dims) {
                    let arr = CoreArray::new(&shape, phys).map_err(|e| e.to_string())?;
                    let mut seen = vec![false; n as usize];
                    for c in arr.coords() {
                        let (r, col) = arr.logical_to_physical(&c).map_err(|e| e.to_string())?;
                        ensure(r < phys.0 && col < phys.1, || format!("{shape:?}: {c:?} off mesh"))?;
                        let i = (r * phys.1 + col) as usize;
                        ensure(!seen[i], || format!("{shape:?} on {phys:?}: ({r},{col}) hit twice"))?;
                        seen[i] = true;
                    }
                    ensure(seen.iter().all(|&s| s), || format!("{shape:?}: not onto"))?;
                    shapes += 1;
                }
            }
        }
    }

    let mut cases = 0;
    let dims = [1u64, 3, 8, 17, 64];
    for r in 1..=4u32 {
        for c in 1..=4u32 {
            let arr = CoreArray::new(&[r, c], (r, c)).map_err(|e| e.to_string())?;
            // every assignment of each axis to m, k, n or nothing, in both orders
            for code in 0..16u32 {
                let (a0, a1) = (code % 4, code / 4);
                for swap in [false, true] {
                    let mut mapping = GemmMapping::default();
                    let mut axes = [(0usize, a0), (1usize, a1)];
                    if swap {
                        axes.swap(0, 1);
                    }
                    for (ax, which) in axes {
                        match which {
                            1 => mapping.m.push(ax),
                            2 => mapping.k.push(ax),
                            3 => mapping.n.push(ax),
                            _ => {}
                        }
                    }
                    for &m in &dims {
                        for &k in &dims {
                            for &nn in &dims {
                                let part = split_gemm(&arr, m, k, nn, &mapping).map_err(|e| e.to_string())?;
                                check_gemm_cover(&part.shards.iter().map(|s| (s.coord.clone(), s.out, s.a)).collect::<Vec<_>>(), &mapping, m, k, nn)?;
                                cases += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(format!("{shapes} core-array shapes bijective; {cases} GEMM splits tile exactly"))
}

/// Cores that differ only along K axes form a group with one output block
/// whose A column spans tile `k`. Groups that differ only along unmapped
/// axes are replicas and hold the same block. One group per M/N position
/// must then tile `m × n` with no gap or overlap.
fn check_gemm_cover(
    shards: &[(Vec<u32>, (Span, Span), (Span, Span))],
    mapping: &GemmMapping,
    m: u64,
    k: u64,
    n: u64,
) -> Result<(), String> {
    use std::collections::BTreeMap;
    let project = |c: &[u32], keep: &dyn Fn(usize) -> bool| -> Vec<u32> {
        c.iter().enumerate().filter(|(ax, _)| keep(*ax)).map(|(_, &v)| v).collect()
    };
    let mut groups: BTreeMap<Vec<u32>, Vec<&(Vec<u32>, (Span, Span), (Span, Span))>> = BTreeMap::new();
    for s in shards {
        groups.entry(project(&s.0, &|ax| !mapping.k.contains(&ax))).or_default().push(s);
    }
    let mut positions: BTreeMap<Vec<u32>, (Span, Span)> = BTreeMap::new();
    for (g, members) in &groups {
        let out = members[0].1;
        ensure(members.iter().all(|s| s.1 == out), || format!("group {g:?}: output blocks differ"))?;
        let mut ks: Vec<Span> = members.iter().map(|s| s.2 .1).collect();
        ensure(covers(&mut ks, k), || format!("group {g:?}: K spans {ks:?} do not tile {k}"))?;
        let pos = project(&members[0].0, &|ax| mapping.m.contains(&ax) || mapping.n.contains(&ax));
        let prev = *positions.entry(pos.clone()).or_insert(out);
        ensure(prev == out, || format!("replicas at {pos:?} hold different blocks"))?;
    }
    let mut cells = vec![0u32; (m * n) as usize];
    for out in positions.values() {
        for i in out.0.start..out.0.end {
            for j in out.1.start..out.1.end {
                cells[(i * n + j) as usize] += 1;
            }
        }
    }
    ensure(cells.iter().all(|&c| c == 1), || format!("{m}x{n} output not tiled exactly once"))
}

fn autotune_minimum() -> Check {
    let prog = parse_kernel(MATMUL_KL).map_err(|e| e.to_string())?;
    let cfg = ArchConfig::reference_chip();
    let base: Bindings = [("M", 8), ("K", 8), ("N", 8)].iter().map(|(a, b)| (a.to_string(), *b)).collect();
    let opts = TuneOptions {
        beam: 1 << 20,
        parallel: false,
        ..Default::default()
    };
    let tuned = autotune(&prog, &cfg, &base, opts, |op| operator_latency(op, &cfg)).map_err(|e| e.to_string())?;
    let mut best: Option<(u64, Vec<u64>)> = None;
    let mut count = 0;
    for tm in [1i64, 2, 4, 8] {
        for tn in [1i64, 2, 4, 8] {
            for tk in [1i64, 2, 4, 8] {
                let mut b = base.clone();
                b.insert("tM".into(), tm);
                b.insert("tN".into(), tn);
                b.insert("tK".into(), tk);
                let Ok(c) = typecheck(&prog, &cfg, &b) else { continue };
                let pl = infer_placement(&c, &cfg).map_err(|e| e.to_string())?;
                let op = generate_execution(&c, &cfg, &pl, opts.pipeline).map_err(|e| e.to_string())?;
                let r = run(&ExecutionDescription { operators: vec![op] }, &cfg).map_err(|e| e.to_string())?;
                count += 1;
                let cand = (r.total_cycles, vec![tm as u64, tn as u64, tk as u64]);
                if best.as_ref().is_none_or(|b| cand < *b) {
                    best = Some(cand);
                }
            }
        }
    }
    let (lat, tiling) = best.ok_or("no feasible tiling")?;
    ensure(tuned.latency == lat, || format!("autotune {} vs enumerated {lat}", tuned.latency))?;
    ensure(tuned.tiling == tiling, || format!("autotune {:?} vs enumerated {tiling:?}", tuned.tiling))?;
    Ok(format!("{count} tilings enumerated; minimum {lat} cycles at {tiling:?}"))
}

fn determinism() -> Check {
    let mut cfg = ArchConfig::reference_chip();
    cfg.noc.rows = 2;
    cfg.noc.cols = 2;
    let model = ModelSpec::builtin("mixtral-8x22b").map_err(|e| e.to_string())?.with_layers(1);
    let g = build_decoding_graph(&model, &DecodingScenario::new(8, 512)).map_err(|e| e.to_string())?;
    let opts = SimulateOptions {
        thermal_resolution: Some(16),
        ..Default::default()
    };
    let once = || -> Result<SimReport, String> { Ok(simulate(&g, &cfg, &opts).map_err(|e| e.to_string())?.report) };
    let (a, b) = (once()?.to_csv(), once()?.to_csv());
    ensure(a == b, || "two simulate runs produced different reports".into())?;

    let spec = SweepSpec::parse(
        r#"
        thermal_resolution = 8
        [[stages]]
        dimension = "interleave_x"
        values = [0, 3, 5]
        [[stages]]
        dimension = "logical_row"
        values = [16384, 65536]
        [[workloads]]
        name = "gemm"
        kind = "gemm_tile"
        n = 512
        [[workloads]]
        name = "attn"
        kind = "paged_attention"
        runs = 2
        [[workloads]]
        name = "llama"
        kind = "decode"
        model = "llama3-8b"
        layers = 1
        scenario = { batch = 4, context = 256 }
        "#,
    )
    .map_err(|e| e.to_string())?;
    let parallel = run_sweep(&cfg, &spec, true).map_err(|e| e.to_string())?;
    let serial = run_sweep(&cfg, &spec, false).map_err(|e| e.to_string())?;
    ensure(parallel == serial, || "parallel sweep differs from serial".into())?;
    Ok(format!("report {} bytes identical; {} sweep rows identical", a.len(), serial.len()))
}

fn reference_chip_model() -> Check {
    let t = Instant::now();
    let cfg = ArchConfig::reference_chip();
    let model = ModelSpec::builtin("llama3-8b").map_err(|e| e.to_string())?.with_layers(2);
    let g = build_decoding_graph(&model, &DecodingScenario::new(16, 1024)).map_err(|e| e.to_string())?;
    let s = simulate(&g, &cfg, &SimulateOptions::default()).map_err(|e| e.to_string())?;
    for o in &s.report.operators {
        ensure(o.utilization > 0.0 && o.utilization <= 1.0, || format!("{}: utilization {}", o.name, o.utilization))?;
    }
    let e = within(t, Duration::from_secs(60))?;
    let (lo, hi) = s
        .report
        .operators
        .iter()
        .fold((f64::MAX, 0.0f64), |(lo, hi), o| (lo.min(o.utilization), hi.max(o.utilization)));
    Ok(format!(
        "{} cores, {} operators, utilization in [{lo:.3}, {hi:.3}], {:.3} ms decode step in {e:.2?}",
        cfg.noc.core_count(),
        s.report.operators.len(),
        s.report.end_to_end_seconds * 1e3
    ))
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Check); 12] = [
        ("dram oracle equivalence", dram_oracle),
        ("interleave trend", interleave_trend),
        ("row size trend", row_size_trend),
        ("roofline bound", roofline),
        ("noc zero-load latency", noc_zero_load),
        ("collective volumes", ring_volumes),
        ("thermal solver and regulation", thermal),
        ("inter-accelerator link", inter_accelerator),
        ("partition exhaustive", partition_exhaustive),
        ("autotune minimum", autotune_minimum),
        ("determinism", determinism),
        ("16-core two-layer decode", reference_chip_model),
    ];
    let mut failed = 0;
    for (i, (name, f)) in checks.iter().enumerate() {
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match out {
            Ok(d) => println!("PASS {:>2} {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
