//! Transformer layer shapes and the built-in model presets.

use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of one tensor-parallel transformer block, repeated `num_layers`
/// times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// Preset name, informational only.
    #[serde(default)]
    pub name: String,
    /// Model (hidden) dimension.
    pub hidden: usize,
    /// FFN width of one expert (the dense FFN when `experts == 1`).
    pub intermediate: usize,
    /// Query heads.
    pub num_attention_heads: usize,
    /// Key/value heads.
    pub num_kv_heads: usize,
    /// Per-head dimension.
    pub head_dim: usize,
    /// Number of transformer blocks.
    pub num_layers: usize,
    /// Experts per MoE layer; 1 means dense.
    #[serde(default = "one")]
    pub experts: usize,
    /// Experts each token is routed to.
    #[serde(default = "one")]
    pub experts_per_token: usize,
    /// Tensor-parallel degree.
    pub tp_degree: usize,
}

fn one() -> usize {
    1
}

impl LayerSpec {
    /// Llama-3.3-70B shape on 8 ranks.
    pub fn llama_70b() -> Self {
        Self {
            name: "llama-70b".into(),
            hidden: 8192,
            intermediate: 28672,
            num_attention_heads: 64,
            num_kv_heads: 8,
            head_dim: 128,
            num_layers: 80,
            experts: 1,
            experts_per_token: 1,
            tp_degree: 8,
        }
    }

    /// Qwen2.5-72B shape on 8 ranks.
    pub fn qwen_72b() -> Self {
        Self {
            name: "qwen-72b".into(),
            intermediate: 29568,
            ..Self::llama_70b()
        }
    }

    /// Mixtral-8x22B: 8 experts, top-2 routing.
    pub fn mixtral_8x22b() -> Self {
        Self {
            name: "mixtral-8x22b".into(),
            hidden: 6144,
            intermediate: 16384,
            num_attention_heads: 48,
            num_kv_heads: 8,
            head_dim: 128,
            num_layers: 56,
            experts: 8,
            experts_per_token: 2,
            tp_degree: 8,
        }
    }

    /// Qwen3-235B-A22B: hidden 4096, 128 experts, top-8 routing.
    pub fn qwen3_235b() -> Self {
        Self {
            name: "qwen3-235b".into(),
            hidden: 4096,
            intermediate: 1536,
            num_attention_heads: 64,
            num_kv_heads: 4,
            head_dim: 128,
            num_layers: 94,
            experts: 128,
            experts_per_token: 8,
            tp_degree: 8,
        }
    }

    /// Looks up a preset by name.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "llama-70b" | "llama" | "dense" => Some(Self::llama_70b()),
            "qwen-72b" | "qwen" => Some(Self::qwen_72b()),
            "mixtral-8x22b" | "mixtral" | "moe" => Some(Self::mixtral_8x22b()),
            "qwen3-235b" | "qwen3" => Some(Self::qwen3_235b()),
            _ => None,
        }
    }

    /// Names accepted by [`LayerSpec::preset`].
    pub const PRESETS: [&'static str; 4] = ["llama-70b", "qwen-72b", "mixtral-8x22b", "qwen3-235b"];

    /// True for mixture-of-experts layers.
    pub fn is_moe(&self) -> bool {
        self.experts > 1
    }

    /// Checks the structural invariants of the shape.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("intermediate", self.intermediate),
            ("num_attention_heads", self.num_attention_heads),
            ("num_kv_heads", self.num_kv_heads),
            ("head_dim", self.head_dim),
            ("num_layers", self.num_layers),
            ("experts", self.experts),
            ("experts_per_token", self.experts_per_token),
        ];
        if let Some((field, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{field} must be positive")));
        }
        if self.tp_degree < 2 {
            return Err(Error::Config(format!(
                "tp_degree must be at least 2, got {}",
                self.tp_degree
            )));
        }
        if !self.hidden.is_multiple_of(self.num_attention_heads) {
            return Err(Error::Config(format!(
                "hidden {} not divisible by {} heads",
                self.hidden, self.num_attention_heads
            )));
        }
        if !self.num_attention_heads.is_multiple_of(self.num_kv_heads) {
            return Err(Error::Config(
                "query heads must be a multiple of kv heads".into(),
            ));
        }
        if !self.num_attention_heads.is_multiple_of(self.tp_degree) {
            return Err(Error::Config(format!(
                "{} heads cannot be sharded over {} ranks",
                self.num_attention_heads, self.tp_degree
            )));
        }
        if !self.intermediate.is_multiple_of(self.tp_degree) {
            return Err(Error::Config(
                "intermediate must divide by tp_degree".into(),
            ));
        }
        if self.experts_per_token > self.experts {
            return Err(Error::Config("experts_per_token exceeds experts".into()));
        }
        Ok(())
    }

    /// Query heads held by one rank.
    pub fn local_heads(&self) -> usize {
        self.num_attention_heads / self.tp_degree
    }

    /// KV heads held by one rank (replicated when fewer than ranks).
    pub fn local_kv_heads(&self) -> usize {
        (self.num_kv_heads / self.tp_degree).max(1)
    }

    /// Output columns of the fused QKV projection on one rank.
    pub fn qkv_columns(&self) -> usize {
        (self.local_heads() + 2 * self.local_kv_heads()) * self.head_dim
    }

    /// Reduction depth of the output projection on one rank.
    pub fn o_proj_depth(&self) -> usize {
        self.local_heads() * self.head_dim
    }

    /// Output columns of the fused gate/up projection on one rank.
    pub fn ffn_up_columns(&self) -> usize {
        2 * self.intermediate / self.tp_degree
    }

    /// Reduction depth of the down projection on one rank.
    pub fn ffn_down_depth(&self) -> usize {
        self.intermediate / self.tp_degree
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for name in LayerSpec::PRESETS {
            let spec = LayerSpec::preset(name).unwrap();
            spec.validate().unwrap();
            assert_eq!(spec.name, name);
        }
        assert!(LayerSpec::preset("gpt-5").is_none());
    }

    #[test]
    fn llama_shard_shapes() {
        let s = LayerSpec::llama_70b();
        assert_eq!(s.qkv_columns(), 1280);
        assert_eq!(s.o_proj_depth(), 1024);
        assert_eq!(s.ffn_up_columns(), 7168);
        assert_eq!(s.ffn_down_depth(), 3584);
        assert!(!s.is_moe());
        assert!(LayerSpec::mixtral_8x22b().is_moe());
    }

    #[test]
    fn invalid_shapes() {
        let mut s = LayerSpec::llama_70b();
        s.tp_degree = 1;
        assert!(s.validate().is_err());
        let mut s = LayerSpec::llama_70b();
        s.experts_per_token = 2;
        assert!(s.validate().is_err());
        let mut s = LayerSpec::llama_70b();
        s.num_attention_heads = 60;
        assert!(s.validate().is_err());
    }
}
