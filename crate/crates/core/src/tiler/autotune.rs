use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::exec::{generate_execution, Operator, Pipeline};
use super::placement::infer_placement;
use super::TilerError;
use crate::arch::ArchConfig;
use crate::kerneldsl::{eval, typecheck, Bindings, Expr, KernelProgram, Stmt, StmtKind};

/// A tiling factor and the loop extent it steps through.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileParam {
    pub name: String,
    pub extent: u64,
}

fn collect_params(
    body: &[Stmt],
    prog: &KernelProgram,
    env: &Bindings,
    out: &mut Vec<TileParam>,
) -> Result<(), TilerError> {
    for s in body {
        if let StmtKind::For {
            lo, hi, step, body, ..
        } = &s.kind
        {
            if let Expr::Var { name } = step {
                if prog.params.contains(name)
                    && !env.contains_key(name)
                    && !out.iter().any(|p| &p.name == name)
                {
                    let extent = eval(hi, env, s.pos)? - eval(lo, env, s.pos)?;
                    out.push(TileParam {
                        name: name.clone(),
                        extent: extent.max(1) as u64,
                    });
                }
            }
            collect_params(body, prog, env, out)?;
        }
    }
    Ok(())
}

/// Unbound parameters used as loop steps, with the extents of their loops.
/// Loop bounds must only use bound parameters.
pub fn tile_space(prog: &KernelProgram, bindings: &Bindings) -> Result<Vec<TileParam>, TilerError> {
    let mut out = Vec::new();
    collect_params(&prog.body, prog, bindings, &mut out)?;
    Ok(out)
}

/// Divisors of `extent` together with the powers of two below it.
pub fn factor_candidates(extent: u64) -> Vec<u64> {
    let mut v: Vec<u64> = (1..=extent).filter(|d| extent % d == 0).collect();
    v.extend((0..64).map(|s| 1u64 << s).take_while(|&p| p < extent));
    v.sort_unstable();
    v.dedup();
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuneOptions {
    /// Most candidates simulated; the largest-footprint ones are kept.
    pub beam: usize,
    pub pipeline: Pipeline,
    pub parallel: bool,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            beam: 256,
            pipeline: Pipeline::DoubleBuffered,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuneResult {
    pub params: Vec<TileParam>,
    pub tiling: Vec<u64>,
    pub latency: u64,
    pub operator: Operator,
    /// Every simulated tiling and its latency, in enumeration order.
    pub evaluated: Vec<(Vec<u64>, u64)>,
}

impl TuneResult {
    pub fn bindings(&self) -> Bindings {
        self.params
            .iter()
            .zip(&self.tiling)
            .map(|(p, &v)| (p.name.clone(), v as i64))
            .collect()
    }
}

fn cartesian(lists: &[Vec<u64>]) -> Vec<Vec<u64>> {
    lists.iter().fold(vec![Vec::new()], |acc, l| {
        acc.iter()
            .flat_map(|prefix| {
                l.iter().map(move |&x| {
                    let mut v = prefix.clone();
                    v.push(x);
                    v
                })
            })
            .collect()
    })
}

fn bind_tiling(base: &Bindings, params: &[TileParam], tiling: &[u64]) -> Bindings {
    let mut b = base.clone();
    for (p, &v) in params.iter().zip(tiling) {
        b.insert(p.name.clone(), v as i64);
    }
    b
}

/// Returns the tiling with the lowest simulated latency. Candidates whose
/// buffers do not fit SRAM are skipped; ties go to the lexicographically
/// smallest tiling.
pub fn autotune<F>(
    prog: &KernelProgram,
    cfg: &ArchConfig,
    base: &Bindings,
    opts: TuneOptions,
    simulate: F,
) -> Result<TuneResult, TilerError>
where
    F: Fn(&Operator) -> u64 + Sync,
{
    let params = tile_space(prog, base)?;
    let lists: Vec<Vec<u64>> = params.iter().map(|p| factor_candidates(p.extent)).collect();
    let mut feasible: Vec<(Vec<u64>, u64)> = cartesian(&lists)
        .into_iter()
        .filter_map(|t| {
            let c = typecheck(prog, cfg, &bind_tiling(base, &params, &t)).ok()?;
            Some((t, c.sram_bytes))
        })
        .collect();
    if feasible.len() > opts.beam {
        let mut ranked = feasible.clone();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(opts.beam.max(1));
        feasible.retain(|f| ranked.contains(f));
    }
    let build = |t: &Vec<u64>| -> Option<(Operator, u64)> {
        let c = typecheck(prog, cfg, &bind_tiling(base, &params, t)).ok()?;
        let pl = infer_placement(&c, cfg).ok()?;
        let op = generate_execution(&c, cfg, &pl, opts.pipeline).ok()?;
        let lat = simulate(&op);
        Some((op, lat))
    };
    let results: Vec<Option<(Operator, u64)>> = if opts.parallel {
        feasible.par_iter().map(|(t, _)| build(t)).collect()
    } else {
        feasible.iter().map(|(t, _)| build(t)).collect()
    };
    let evaluated: Vec<(Vec<u64>, u64)> = feasible
        .iter()
        .zip(&results)
        .filter_map(|((t, _), r)| r.as_ref().map(|(_, l)| (t.clone(), *l)))
        .collect();
    let best = feasible
        .iter()
        .zip(results)
        .filter_map(|((t, _), r)| r.map(|(op, l)| (t.clone(), op, l)))
        .min_by(|a, b| a.2.cmp(&b.2).then_with(|| a.0.cmp(&b.0)))
        .ok_or(TilerError::NoFeasibleTiling)?;
    Ok(TuneResult {
        params,
        tiling: best.0,
        latency: best.2,
        operator: best.1,
        evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kerneldsl::{parse_kernel, MATMUL_KL};

    fn base(m: i64, k: i64, n: i64) -> Bindings {
        [("M", m), ("K", k), ("N", n)]
            .iter()
            .map(|(a, b)| (a.to_string(), *b))
            .collect()
    }

    #[test]
    fn candidates_are_divisors_and_powers() {
        assert_eq!(factor_candidates(12), vec![1, 2, 3, 4, 6, 8, 12]);
        assert_eq!(factor_candidates(1), vec![1]);
    }

    #[test]
    fn finds_matmul_tile_params() {
        let p = parse_kernel(MATMUL_KL).unwrap();
        let s = tile_space(&p, &base(8, 16, 4)).unwrap();
        let names: Vec<_> = s.iter().map(|t| (t.name.as_str(), t.extent)).collect();
        assert_eq!(names, [("tM", 8), ("tN", 4), ("tK", 16)]);
    }

    #[test]
    fn picks_enumerated_minimum_with_lexicographic_ties() {
        let p = parse_kernel(MATMUL_KL).unwrap();
        let cfg = ArchConfig::reference_chip();
        // latency = number of iterations; ties broken toward smaller tilings
        let sim = |op: &Operator| op.schedules[0].iterations.len() as u64;
        let r = autotune(&p, &cfg, &base(4, 4, 4), TuneOptions::default(), sim).unwrap();
        let min = r.evaluated.iter().map(|e| e.1).min().unwrap();
        assert_eq!(r.latency, min);
        let first = r.evaluated.iter().filter(|e| e.1 == min).map(|e| e.0.clone()).min().unwrap();
        assert_eq!(r.tiling, first);
        let serial = autotune(
            &p,
            &cfg,
            &base(4, 4, 4),
            TuneOptions {
                parallel: false,
                ..Default::default()
            },
            sim,
        )
        .unwrap();
        assert_eq!(serial, r);
    }

    #[test]
    fn single_candidate_is_returned() {
        let p = parse_kernel(MATMUL_KL).unwrap();
        let cfg = ArchConfig::reference_chip();
        let r = autotune(&p, &cfg, &base(1, 1, 1), TuneOptions::default(), |_| 7).unwrap();
        assert_eq!(r.tiling, vec![1, 1, 1]);
        assert_eq!(r.evaluated.len(), 1);
    }

    #[test]
    fn beam_keeps_largest_footprints() {
        let p = parse_kernel(MATMUL_KL).unwrap();
        let cfg = ArchConfig::reference_chip();
        let opts = TuneOptions {
            beam: 3,
            ..Default::default()
        };
        let r = autotune(&p, &cfg, &base(4, 4, 4), opts, |_| 1).unwrap();
        assert_eq!(r.evaluated.len(), 3);
        assert!(r.evaluated.iter().any(|e| e.0 == vec![4, 4, 4]));
    }
}
