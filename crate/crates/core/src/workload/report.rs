use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::sweep::{SweepDimension, SweepRow};

#[derive(Debug, Error)]
#[error("malformed sweep CSV: {0}")]
pub struct ReportError(#[from] csv::Error);

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>, ReportError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().collect::<Result<_, _>>().map_err(ReportError)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub stage: usize,
    pub dimension: SweepDimension,
    pub value: f64,
    pub workload: String,
    pub feasible: bool,
    pub latency_s: f64,
    pub utilization: f64,
    /// Baseline latency over this latency; the baseline is the first
    /// feasible value of the workload's stage.
    pub speedup: Option<f64>,
    /// Lowest feasible latency of its (stage, workload) group.
    pub best: bool,
}

/// Per grid value, the speedup over the baseline averaged across
/// workloads with each workload weighted by its baseline latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub stage: usize,
    pub dimension: SweepDimension,
    pub value: f64,
    pub weighted_speedup: f64,
    pub best: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<ReportRow>,
    pub averages: Vec<AverageRow>,
}

/// `Σ lᵢ·xᵢ / Σ lᵢ`; zero when every weight is zero.
pub fn latency_weighted_average(pairs: &[(f64, f64)]) -> f64 {
    let w: f64 = pairs.iter().map(|p| p.0).sum();
    if w == 0.0 {
        return 0.0;
    }
    pairs.iter().map(|(l, x)| l * x).sum::<f64>() / w
}

pub fn summarize(rows: &[SweepRow]) -> Summary {
    let mut groups: BTreeMap<(usize, &str), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.stage, r.workload.as_str())).or_default().push(r);
    }
    let mut out = Vec::new();
    let mut per_value: BTreeMap<usize, Vec<(f64, SweepDimension, f64, f64)>> = BTreeMap::new();
    for ((stage, _), g) in &groups {
        let ok = |r: &&&SweepRow| r.feasible && r.latency_s > 0.0;
        let baseline = g.iter().find(ok).map(|r| r.latency_s);
        let best = g
            .iter()
            .filter(ok)
            .min_by(|a, b| a.latency_s.total_cmp(&b.latency_s))
            .map(|r| (r.value, r.latency_s));
        for r in g {
            let feasible = r.feasible && r.latency_s > 0.0;
            let speedup = baseline.filter(|_| feasible).map(|b| b / r.latency_s);
            if let (Some(b), Some(s)) = (baseline, speedup) {
                per_value.entry(*stage).or_default().push((r.value, r.dimension, b, s));
            }
            out.push(ReportRow {
                stage: r.stage,
                dimension: r.dimension,
                value: r.value,
                workload: r.workload.clone(),
                feasible: r.feasible,
                latency_s: r.latency_s,
                utilization: r.utilization,
                speedup,
                best: feasible && best == Some((r.value, r.latency_s)),
            });
        }
    }
    out.sort_by(|a, b| {
        a.stage
            .cmp(&b.stage)
            .then(a.value.total_cmp(&b.value))
            .then_with(|| a.workload.cmp(&b.workload))
    });
    let mut averages = Vec::new();
    for (stage, mut v) in per_value {
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        let start = averages.len();
        for chunk in v.chunk_by(|a, b| a.0 == b.0) {
            let pairs: Vec<(f64, f64)> = chunk.iter().map(|c| (c.2, c.3)).collect();
            averages.push(AverageRow {
                stage,
                dimension: chunk[0].1,
                value: chunk[0].0,
                weighted_speedup: latency_weighted_average(&pairs),
                best: false,
            });
        }
        let top = averages[start..]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.weighted_speedup.total_cmp(&b.1.weighted_speedup).then(b.0.cmp(&a.0)))
            .map(|(i, _)| start + i);
        if let Some(i) = top {
            averages[i].best = true;
        }
    }
    Summary { rows: out, averages }
}

impl Summary {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Per-row table followed by a blank line and the weighted averages.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["stage", "dimension", "value", "workload", "feasible", "latency_s", "utilization", "speedup", "best"])
            .expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.stage.to_string(),
                r.dimension.to_string(),
                r.value.to_string(),
                r.workload.clone(),
                r.feasible.to_string(),
                format!("{:.9e}", r.latency_s),
                format!("{:.6}", r.utilization),
                r.speedup.map_or(String::new(), |s| format!("{s:.6}")),
                r.best.to_string(),
            ])
            .expect("in-memory write");
        }
        let mut s = String::from_utf8(w.into_inner().expect("flush")).expect("csv is utf-8");
        if self.averages.is_empty() {
            return s;
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["stage", "dimension", "value", "weighted_speedup", "best"])
            .expect("in-memory write");
        for a in &self.averages {
            w.write_record([
                a.stage.to_string(),
                a.dimension.to_string(),
                a.value.to_string(),
                format!("{:.6}", a.weighted_speedup),
                a.best.to_string(),
            ])
            .expect("in-memory write");
        }
        s.push('\n');
        s.push_str(std::str::from_utf8(&w.into_inner().expect("flush")).expect("csv is utf-8"));
        s
    }
}
