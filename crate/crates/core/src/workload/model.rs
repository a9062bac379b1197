use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logicsim::Dtype;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FfnKind {
    Mlp,
    Glu,
    /// Gated experts; every expert is a GLU block of width `ffn_dim`.
    Moe,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub layers: u32,
    pub hidden: u64,
    pub heads: u64,
    pub kv_heads: u64,
    pub head_dim: u64,
    /// Allows `heads × head_dim ≠ hidden`.
    #[serde(default)]
    pub decoupled_head_dim: bool,
    pub ffn: FfnKind,
    pub ffn_dim: u64,
    #[serde(default)]
    pub experts: u64,
    #[serde(default)]
    pub top_k: u64,
    pub dtype: Dtype,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("model parse error: {0}")]
    Parse(String),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("unknown model `{0}`")]
    Unknown(String),
}

const BUILTIN: [(&str, &str); 7] = [
    ("opt-66b", include_str!("../../models/opt_66b.toml")),
    ("llama3-70b", include_str!("../../models/llama3_70b.toml")),
    ("mixtral-8x22b", include_str!("../../models/mixtral_8x22b.toml")),
    ("qwen3-235b-a22b", include_str!("../../models/qwen3_235b_a22b.toml")),
    ("opt-6.7b", include_str!("../../models/opt_6_7b.toml")),
    ("llama3-8b", include_str!("../../models/llama3_8b.toml")),
    ("palm-8b", include_str!("../../models/palm_8b.toml")),
];

impl ModelSpec {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let m: Self = toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    /// One of the shipped models.
    pub fn builtin(name: &str) -> Result<Self, ModelError> {
        BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| Self::parse(t))
            .ok_or_else(|| ModelError::Unknown(name.to_string()))?
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }

    pub fn with_layers(mut self, layers: u32) -> Self {
        self.layers = layers;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Invalid(format!("{}: {m}", self.name)));
        if [self.hidden, self.heads, self.kv_heads, self.head_dim, self.ffn_dim]
            .contains(&0)
            || self.layers == 0
        {
            return bad("dimensions must be positive");
        }
        if !self.decoupled_head_dim && self.hidden != self.heads * self.head_dim {
            return bad("hidden must equal heads × head_dim");
        }
        if self.heads % self.kv_heads != 0 {
            return bad("kv_heads must divide heads");
        }
        match self.ffn {
            FfnKind::Moe if self.experts == 0 || self.top_k == 0 || self.top_k > self.experts => {
                bad("MoE needs 0 < top_k ≤ experts")
            }
            FfnKind::Mlp | FfnKind::Glu if self.experts != 0 => bad("experts only apply to MoE"),
            _ => Ok(()),
        }
    }

    pub fn q_dim(&self) -> u64 {
        self.heads * self.head_dim
    }

    pub fn kv_dim(&self) -> u64 {
        self.kv_heads * self.head_dim
    }

    /// Weights of one FFN block (one expert for MoE).
    pub fn ffn_params(&self) -> u64 {
        let mats = match self.ffn {
            FfnKind::Mlp => 2,
            FfnKind::Glu | FfnKind::Moe => 3,
        };
        mats * self.hidden * self.ffn_dim
    }

    /// QKV and output projection weights of one layer.
    pub fn attention_params(&self) -> u64 {
        self.hidden * (self.q_dim() + 2 * self.kv_dim()) + self.q_dim() * self.hidden
    }

    /// KV-cache bytes of one request at `context` tokens.
    pub fn kv_bytes(&self, context: u64) -> u64 {
        2 * u64::from(self.layers) * self.kv_heads * self.head_dim * context * self.dtype.bytes()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodingScenario {
    pub batch: u64,
    pub context: u64,
    #[serde(default = "one")]
    pub accelerators: u32,
    #[serde(default = "one")]
    pub tp: u32,
    #[serde(default = "one")]
    pub ep: u32,
    /// Seeds the expert routing draw.
    #[serde(default)]
    pub seed: u64,
}

fn one() -> u32 {
    1
}

impl DecodingScenario {
    pub fn new(batch: u64, context: u64) -> Self {
        Self {
            batch,
            context,
            accelerators: 1,
            tp: 1,
            ep: 1,
            seed: 0,
        }
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Invalid(m.to_string()));
        if self.batch == 0 || self.context == 0 || self.accelerators == 0 || self.tp == 0 || self.ep == 0 {
            return bad("scenario values must be positive");
        }
        if self.tp > self.accelerators || self.ep > self.accelerators {
            return bad("tp and ep cannot exceed the accelerator count");
        }
        if self.ep > 1 && model.ffn != FfnKind::Moe {
            return bad("expert parallelism needs a MoE model");
        }
        if self.ep > 1 && model.experts % u64::from(self.ep) != 0 {
            return bad("ep must divide the expert count");
        }
        if model.heads % u64::from(self.tp) != 0 {
            return bad("tp must divide the head count");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse_and_validate() {
        for n in ModelSpec::builtin_names() {
            let m = ModelSpec::builtin(n).unwrap();
            assert_eq!(m.name, n);
        }
        assert!(matches!(ModelSpec::builtin("gpt-5"), Err(ModelError::Unknown(_))));
    }

    #[test]
    fn llama3_70b_parameter_count() {
        let m = ModelSpec::builtin("llama3-70b").unwrap();
        let per_layer = m.attention_params() + m.ffn_params();
        let total = per_layer * u64::from(m.layers);
        // embedding and head excluded
        assert!((total as f64 / 1e9 - 68.5).abs() < 0.5, "{total}");
    }

    #[test]
    fn invariants_are_enforced() {
        let mut m = ModelSpec::builtin("llama3-8b").unwrap();
        m.hidden = 4000;
        assert!(m.validate().is_err());
        m.decoupled_head_dim = true;
        assert!(m.validate().is_ok());
        m.kv_heads = 5;
        assert!(m.validate().is_err());
        let s = DecodingScenario { ep: 2, accelerators: 2, ..DecodingScenario::new(16, 1024) };
        assert!(s.validate(&ModelSpec::builtin("llama3-8b").unwrap()).is_err());
        assert!(s.validate(&ModelSpec::builtin("mixtral-8x22b").unwrap()).is_ok());
    }

    #[test]
    fn kv_bytes_formula() {
        let m = ModelSpec::builtin("llama3-8b").unwrap();
        assert_eq!(m.kv_bytes(1024), 2 * 32 * 8 * 128 * 1024 * 2);
    }
}
