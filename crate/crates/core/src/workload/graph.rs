use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{DecodingScenario, FfnKind, ModelError, ModelSpec};
use crate::logicsim::Dtype;

/// What a decoding-graph node computes on one accelerator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OpKind {
    /// `(m, k) × (k, n)`; `k` is split along the first core-array axis and
    /// `n` along the second, the batch `m` is never split.
    Fc { m: u64, k: u64, n: u64 },
    /// Fused attention over `instances` independent (request, KV head)
    /// pairs, each with `group` query rows; the context is split evenly
    /// over every core.
    Attention {
        instances: u64,
        group: u64,
        context: u64,
        head_dim: u64,
    },
    /// All-reduce of `bytes` per core along the K axis of the preceding FC.
    AllReduce1d { bytes: u64 },
    /// All-reduce of `bytes` per core over the whole core array.
    AllReduce2d { bytes: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphOp {
    pub name: String,
    pub op: OpKind,
    /// Bytes this accelerator exchanges with its peers after the op.
    #[serde(default)]
    pub inter_accel_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeGraph {
    pub model: String,
    pub dtype: Dtype,
    pub ops: Vec<GraphOp>,
}

impl DecodeGraph {
    pub fn fc_flops(&self) -> u64 {
        self.ops
            .iter()
            .map(|o| match o.op {
                OpKind::Fc { m, k, n } => 2 * m * k * n,
                _ => 0,
            })
            .sum()
    }

    pub fn weight_bytes(&self) -> u64 {
        self.ops
            .iter()
            .map(|o| match o.op {
                OpKind::Fc { k, n, .. } => k * n * self.dtype.bytes(),
                _ => 0,
            })
            .sum()
    }

    pub fn kv_bytes(&self) -> u64 {
        self.ops
            .iter()
            .map(|o| match o.op {
                OpKind::Attention {
                    instances,
                    context,
                    head_dim,
                    ..
                } => 2 * instances * context * head_dim * self.dtype.bytes(),
                _ => 0,
            })
            .sum()
    }
}

/// Tokens routed to each expert when every token of the batch picks
/// `top_k` distinct experts uniformly at random.
pub fn route_tokens(batch: u64, experts: u64, top_k: u64, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut load = vec![0u64; experts as usize];
    for _ in 0..batch {
        for e in sample(&mut rng, experts as usize, top_k as usize) {
            load[e] += 1;
        }
    }
    load
}

/// Ring all-reduce volume each accelerator sends for `bytes` of data.
fn ring_all_reduce(bytes: u64, p: u32) -> u64 {
    let p = u64::from(p);
    2 * (p - 1) * bytes / p
}

/// All-to-all volume each accelerator sends when spreading `bytes`.
fn all_to_all(bytes: u64, p: u32) -> u64 {
    let p = u64::from(p);
    (p - 1) * bytes / p
}

/// Operators of one decoding step on one accelerator, layer by layer.
pub fn build_decoding_graph(model: &ModelSpec, scen: &DecodingScenario) -> Result<DecodeGraph, ModelError> {
    model.validate()?;
    scen.validate(model)?;
    let dt = model.dtype.bytes();
    let tp = u64::from(scen.tp);
    let m = scen.batch;
    let heads = model.heads / tp;
    let kv_heads = model.kv_heads.div_ceil(tp);
    let hd = model.head_dim;
    let hidden = model.hidden;
    let mut ops = Vec::new();
    let fc = |ops: &mut Vec<GraphOp>, name: String, k: u64, n: u64, inter: u64| {
        ops.push(GraphOp {
            name: name.clone(),
            op: OpKind::Fc { m, k, n },
            inter_accel_bytes: 0,
        });
        ops.push(GraphOp {
            name: format!("{name}.allreduce"),
            op: OpKind::AllReduce1d { bytes: m * n * dt },
            inter_accel_bytes: inter,
        });
    };
    let tp_reduce = if scen.tp > 1 {
        ring_all_reduce(m * hidden * dt, scen.tp)
    } else {
        0
    };
    for l in 0..model.layers {
        let p = format!("L{l}");
        fc(&mut ops, format!("{p}.qkv"), hidden, (heads + 2 * kv_heads) * hd, 0);
        ops.push(GraphOp {
            name: format!("{p}.attention"),
            op: OpKind::Attention {
                instances: m * kv_heads,
                group: model.heads / model.kv_heads,
                context: scen.context,
                head_dim: hd,
            },
            inter_accel_bytes: 0,
        });
        ops.push(GraphOp {
            name: format!("{p}.attention.allreduce"),
            op: OpKind::AllReduce2d {
                bytes: m * heads * hd * dt,
            },
            inter_accel_bytes: 0,
        });
        fc(&mut ops, format!("{p}.o_proj"), heads * hd, hidden, tp_reduce);
        match model.ffn {
            FfnKind::Mlp | FfnKind::Glu => {
                let f = model.ffn_dim / tp;
                fc(&mut ops, format!("{p}.ffn_up"), hidden, f, 0);
                if model.ffn == FfnKind::Glu {
                    fc(&mut ops, format!("{p}.ffn_gate"), hidden, f, 0);
                }
                fc(&mut ops, format!("{p}.ffn_down"), f, hidden, tp_reduce);
            }
            FfnKind::Moe => {
                let ep = u64::from(scen.ep);
                let f = if ep > 1 { model.ffn_dim } else { model.ffn_dim / tp };
                let seed = scen.seed ^ (u64::from(l) << 32);
                let load = route_tokens(m, model.experts, model.top_k, seed);
                let local = model.experts / ep;
                let a2a = if ep > 1 {
                    all_to_all(m * model.top_k * hidden * dt, scen.ep)
                } else {
                    0
                };
                // dispatch tokens to their experts after the attention block
                let attn_end = ops.len() - 1;
                ops[attn_end].inter_accel_bytes += a2a;
                let mut last = attn_end;
                for e in 0..local {
                    let b = load[e as usize];
                    if b == 0 {
                        continue;
                    }
                    let mk = |name: &str, k, n| GraphOp {
                        name: format!("{p}.expert{e}.{name}"),
                        op: OpKind::Fc { m: b, k, n },
                        inter_accel_bytes: 0,
                    };
                    ops.push(mk("ffn_up", hidden, f));
                    ops.push(GraphOp {
                        name: format!("{p}.expert{e}.ffn_up.allreduce"),
                        op: OpKind::AllReduce1d { bytes: b * f * dt },
                        inter_accel_bytes: 0,
                    });
                    ops.push(mk("ffn_gate", hidden, f));
                    ops.push(GraphOp {
                        name: format!("{p}.expert{e}.ffn_gate.allreduce"),
                        op: OpKind::AllReduce1d { bytes: b * f * dt },
                        inter_accel_bytes: 0,
                    });
                    ops.push(mk("ffn_down", f, hidden));
                    ops.push(GraphOp {
                        name: format!("{p}.expert{e}.ffn_down.allreduce"),
                        op: OpKind::AllReduce1d { bytes: b * hidden * dt },
                        inter_accel_bytes: 0,
                    });
                    last = ops.len() - 1;
                }
                // combine expert outputs; without EP the experts are TP-split
                ops[last].inter_accel_bytes += a2a + if ep > 1 { 0 } else { tp_reduce };
            }
        }
    }
    Ok(DecodeGraph {
        model: model.name.clone(),
        dtype: model.dtype,
        ops,
    })
}
