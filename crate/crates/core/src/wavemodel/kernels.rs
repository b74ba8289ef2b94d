use core::fmt;
use core::ops::Add;
use core::str::FromStr;

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::model::LayerSpec;

use super::profile::HardwareProfile;

/// Modeled cost of one kernel (or a short fixed sequence of kernels).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KernelCost {
    /// Thread blocks launched.
    pub ctas: usize,
    /// Waves the blocks occupy on the available SMs.
    pub waves: usize,
    /// Seconds.
    pub duration: f64,
    /// SMs the kernel ran on.
    pub sms_used: usize,
}

impl Add for KernelCost {
    type Output = KernelCost;

    fn add(self, rhs: KernelCost) -> KernelCost {
        KernelCost {
            ctas: self.ctas + rhs.ctas,
            waves: self.waves + rhs.waves,
            duration: self.duration + rhs.duration,
            sms_used: self.sms_used.max(rhs.sms_used),
        }
    }
}

/// CTAs of the reference GEMM for `num_tokens` tokens:
/// `ceil(num_tokens / tile_tokens) * cta_columns`.
pub fn cta_count(num_tokens: usize, profile: &HardwareProfile) -> usize {
    num_tokens.div_ceil(profile.tile_tokens) * profile.cta_columns
}

/// Waves needed to run `ctas` blocks on `sms_available` SMs. Zero SMs are
/// treated as one.
pub fn wave_count(ctas: usize, sms_available: usize) -> usize {
    ctas.div_ceil(sms_available.max(1))
}

/// Wave-quantized GEMM of `num_tokens x k_depth` by `k_depth x m_cols`.
///
/// Every wave costs one full tile of flops on one SM, so a partial last wave
/// costs as much as a full one. No launch overhead is included.
pub fn gemm_time(
    num_tokens: usize,
    m_cols: usize,
    k_depth: usize,
    sms_available: usize,
    profile: &HardwareProfile,
) -> KernelCost {
    let sms = sms_available.max(1);
    let ctas = num_tokens.div_ceil(profile.tile_tokens) * m_cols.div_ceil(profile.tile_cols);
    let waves = wave_count(ctas, sms);
    let wave_flops = 2.0 * (profile.tile_tokens * profile.tile_cols) as f64 * k_depth as f64;
    KernelCost {
        ctas,
        waves,
        duration: waves as f64 * wave_flops / profile.sm_flops,
        sms_used: sms.min(ctas),
    }
}

/// Token layout of an RMSNorm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormLayout {
    /// Every rank normalizes all tokens.
    Replicated,
    /// Each rank normalizes its token shard of a group of `world_size`.
    Sharded {
        /// Ranks sharing the tokens.
        world_size: usize,
    },
}

/// Memory-bound RMSNorm: two reads and one write of the activations.
pub fn rmsnorm_time(
    num_tokens: usize,
    hidden: usize,
    profile: &HardwareProfile,
    layout: NormLayout,
) -> KernelCost {
    let local = match layout {
        NormLayout::Replicated => num_tokens,
        NormLayout::Sharded { world_size } => num_tokens.div_ceil(world_size.max(1)),
    };
    if local == 0 {
        return KernelCost::default();
    }
    let bytes = 3.0 * local as f64 * hidden as f64 * profile.bytes_per_element as f64;
    KernelCost {
        ctas: local,
        waves: wave_count(local, profile.num_sms),
        duration: bytes / profile.hbm_bandwidth_effective + profile.norm_overhead,
        sms_used: profile.num_sms.min(local),
    }
}

/// Collective operations of the cost model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CollectiveKind {
    /// Multimem AllReduce.
    AllReduce,
    /// ReduceScatter.
    ReduceScatter,
    /// AllGather.
    AllGather,
    /// Fused AllReduce plus residual-add RMSNorm.
    FusedArNorm,
}

impl CollectiveKind {
    /// All kinds, in display order.
    pub const ALL: [CollectiveKind; 4] = [
        CollectiveKind::AllReduce,
        CollectiveKind::ReduceScatter,
        CollectiveKind::AllGather,
        CollectiveKind::FusedArNorm,
    ];

    /// Short lowercase name.
    pub fn as_str(self) -> &'static str {
        match self {
            CollectiveKind::AllReduce => "allreduce",
            CollectiveKind::ReduceScatter => "reduce_scatter",
            CollectiveKind::AllGather => "all_gather",
            CollectiveKind::FusedArNorm => "fused_ar_norm",
        }
    }
}

impl fmt::Display for CollectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CollectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "allreduce" | "all_reduce" | "ar" => Ok(CollectiveKind::AllReduce),
            "reducescatter" | "reduce_scatter" | "rs" => Ok(CollectiveKind::ReduceScatter),
            "allgather" | "all_gather" | "ag" => Ok(CollectiveKind::AllGather),
            "fused" | "fusedarnorm" | "fused_ar_norm" | "fused_allreduce_rmsnorm" => {
                Ok(CollectiveKind::FusedArNorm)
            }
            _ => Err(Error::Contract(format!("unknown collective kind '{s}'"))),
        }
    }
}

/// Affine-in-tokens collective time, inflated when fewer than
/// `collective_sms` SMs drive it.
pub fn collective_time(
    kind: CollectiveKind,
    num_tokens: usize,
    hidden: usize,
    sms: usize,
    profile: &HardwareProfile,
) -> KernelCost {
    let sms = sms.max(1);
    if num_tokens == 0 {
        return KernelCost {
            sms_used: sms,
            ..KernelCost::default()
        };
    }
    let per_token =
        profile.collective_per_token_time * hidden as f64 / profile.reference_hidden as f64;
    let t = num_tokens as f64;
    let ar = profile.collective_base_latency + per_token * t;
    let base = match kind {
        CollectiveKind::AllReduce => ar,
        CollectiveKind::FusedArNorm => ar * (1.0 + profile.fused_overhead_fraction),
        CollectiveKind::ReduceScatter => profile.reduce_scatter_base_latency + 0.5 * per_token * t,
        CollectiveKind::AllGather => profile.all_gather_base_latency + 0.5 * per_token * t,
    };
    KernelCost {
        ctas: sms,
        waves: 1,
        duration: base * sm_inflation(sms, profile),
        sms_used: sms,
    }
}

/// Slowdown of a collective that runs on `sms` SMs.
pub fn sm_inflation(sms: usize, profile: &HardwareProfile) -> f64 {
    let sms = sms.max(1);
    if sms >= profile.collective_sms {
        1.0
    } else {
        libm::pow(
            profile.collective_sms as f64 / sms as f64,
            profile.sm_saturation_exponent,
        )
    }
}

/// New tokens of one sequence processed by attention, with `context` tokens
/// of that sequence already in the KV cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionSegment {
    /// New tokens.
    pub tokens: usize,
    /// Cached tokens before them.
    pub context: usize,
}

/// Attention block for `num_tokens` new tokens of one sequence with
/// `kv_context` cached tokens.
pub fn attention_time(
    num_tokens: usize,
    kv_context: usize,
    spec: &LayerSpec,
    sms_available: usize,
    profile: &HardwareProfile,
) -> KernelCost {
    attention_time_segments(
        &[AttentionSegment {
            tokens: num_tokens,
            context: kv_context,
        }],
        spec,
        sms_available,
        profile,
    )
}

/// Attention block over a batch of segments: QKV projection, causal
/// attention core, KV-cache reads and the output projection.
pub fn attention_time_segments(
    segments: &[AttentionSegment],
    spec: &LayerSpec,
    sms_available: usize,
    profile: &HardwareProfile,
) -> KernelCost {
    let total: usize = segments.iter().map(|s| s.tokens).sum();
    if total == 0 {
        return KernelCost::default();
    }
    let sms = sms_available.max(1);
    let qkv = gemm_time(total, spec.qkv_columns(), spec.hidden, sms, profile);
    let o = gemm_time(total, spec.hidden, spec.o_proj_depth(), sms, profile);
    let (core, kv_read) = attention_terms(segments, spec, sms, profile);
    let mut cost = qkv + o;
    cost.duration += core + kv_read + 3.0 * profile.launch_overhead;
    cost.sms_used = sms;
    cost
}

/// The attention core and KV-read terms separately, in seconds.
pub fn attention_terms(
    segments: &[AttentionSegment],
    spec: &LayerSpec,
    sms_available: usize,
    profile: &HardwareProfile,
) -> (f64, f64) {
    let sms = sms_available.max(1) as f64;
    let per_pair = 4.0 * (spec.head_dim * spec.local_heads()) as f64;
    let kv_bytes_per_token =
        2.0 * (spec.local_kv_heads() * spec.head_dim * profile.bytes_per_element) as f64;
    let (mut pairs, mut cached) = (0.0, 0.0);
    for s in segments.iter().filter(|s| s.tokens > 0) {
        let n = s.tokens as f64;
        pairs += n * s.context as f64 + n * (n + 1.0) / 2.0;
        cached += s.context as f64;
    }
    (
        pairs * per_pair / (profile.sm_flops * sms * profile.attention_efficiency),
        cached * kv_bytes_per_token / profile.hbm_bandwidth_effective,
    )
}

/// FFN block. Dense layers run the gate/up and down projections; MoE layers
/// spread `tokens * experts_per_token` uniformly over the experts and
/// quantize each expert's GEMMs separately.
pub fn ffn_time(
    num_tokens: usize,
    spec: &LayerSpec,
    sms_available: usize,
    profile: &HardwareProfile,
) -> KernelCost {
    if num_tokens == 0 {
        return KernelCost::default();
    }
    let sms = sms_available.max(1);
    let routed = num_tokens * spec.experts_per_token;
    let (active, per_expert) = if spec.is_moe() {
        (spec.experts.min(routed), routed.div_ceil(spec.experts))
    } else {
        (1, num_tokens)
    };
    let one = gemm_time(per_expert, spec.ffn_up_columns(), spec.hidden, sms, profile)
        + gemm_time(per_expert, spec.hidden, spec.ffn_down_depth(), sms, profile);
    KernelCost {
        ctas: one.ctas * active,
        waves: one.waves * active,
        duration: one.duration * active as f64 + 2.0 * profile.launch_overhead,
        sms_used: sms,
    }
}
