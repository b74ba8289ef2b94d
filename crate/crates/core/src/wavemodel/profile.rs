use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::calibrate::{calibrate, CalibrationTable};
use super::tables;

/// Largest fused-kernel overhead over a plain AllReduce that calibration will
/// accept, as a fraction of the AllReduce time.
pub const MAX_FUSED_OVERHEAD: f64 = 0.03;

/// Everything the cost model knows about one GPU system.
///
/// Times are in seconds, bandwidths in bytes per second. The collective terms
/// describe the whole tensor-parallel group the profile was measured on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    /// Display name.
    pub name: String,
    /// Streaming multiprocessors per GPU.
    pub num_sms: usize,
    /// Token rows per GEMM CTA tile.
    pub tile_tokens: usize,
    /// Output columns per GEMM CTA tile.
    pub tile_cols: usize,
    /// CTA grid columns of the reference GEMM used for split planning.
    pub cta_columns: usize,
    /// Sustained matmul throughput of one SM, flop/s.
    pub sm_flops: f64,
    /// Fraction of `sm_flops` reached by the attention core.
    pub attention_efficiency: f64,
    /// Effective HBM bandwidth of memory-bound kernels, bytes/s.
    pub hbm_bandwidth_effective: f64,
    /// Fixed cost of launching a compute kernel.
    pub launch_overhead: f64,
    /// Fixed cost of one RMSNorm kernel (fitted intercept).
    pub norm_overhead: f64,
    /// AllReduce latency at zero tokens.
    pub collective_base_latency: f64,
    /// AllReduce time per token at the reference hidden size and dtype.
    pub collective_per_token_time: f64,
    /// Fused AllReduce-RMSNorm cost relative to a plain AllReduce, minus one.
    pub fused_overhead_fraction: f64,
    /// ReduceScatter latency at zero tokens.
    pub reduce_scatter_base_latency: f64,
    /// AllGather latency at zero tokens.
    pub all_gather_base_latency: f64,
    /// Slowdown of the non-Multimem AllReduce over the Multimem one.
    pub default_allreduce_scale: f64,
    /// SMs a collective occupies while it runs.
    pub collective_sms: usize,
    /// Exponent of the slowdown when a collective gets fewer SMs than
    /// `collective_sms`: time scales by `(collective_sms / sms)^exponent`.
    pub sm_saturation_exponent: f64,
    /// Hidden size the collective slope was measured at.
    pub reference_hidden: usize,
    /// Element size of activations, bytes.
    pub bytes_per_element: usize,
    /// Per-iteration cost outside the transformer layers (embedding,
    /// sampling, runtime).
    pub non_layer_overhead: f64,
}

impl HardwareProfile {
    /// Structural H100 parameters before the H100 table fit is applied.
    pub fn h100_base() -> Self {
        Self {
            name: String::from("h100"),
            num_sms: 132,
            tile_tokens: 128,
            tile_cols: 128,
            cta_columns: 4,
            sm_flops: 4.0e12,
            attention_efficiency: 0.6,
            hbm_bandwidth_effective: 2.2e12,
            launch_overhead: 2e-6,
            norm_overhead: 7e-6,
            collective_base_latency: 13e-6,
            collective_per_token_time: 0.059e-6,
            fused_overhead_fraction: 0.0,
            reduce_scatter_base_latency: 12e-6,
            all_gather_base_latency: 12e-6,
            default_allreduce_scale: 1.3,
            collective_sms: 8,
            sm_saturation_exponent: 0.5,
            reference_hidden: 8192,
            bytes_per_element: 2,
            non_layer_overhead: 3e-3,
        }
    }

    /// Structural B200 parameters before the B200 table fit is applied.
    pub fn b200_base() -> Self {
        Self {
            name: String::from("b200"),
            num_sms: 148,
            sm_flops: 7.5e12,
            hbm_bandwidth_effective: 3.5e12,
            reduce_scatter_base_latency: 20e-6,
            all_gather_base_latency: 20e-6,
            ..Self::h100_base()
        }
    }

    /// H100 profile calibrated on the shipped 8xH100 microbenchmark table.
    pub fn h100() -> Self {
        let mut p = calibrate(&tables::h100_table(), &Self::h100_base())
            .expect("built-in H100 table is well formed")
            .profile;
        p.name = String::from("h100");
        p
    }

    /// B200 profile calibrated on the shipped 8xB200 microbenchmark table.
    pub fn b200() -> Self {
        let mut p = calibrate(&tables::b200_table(), &Self::b200_base())
            .expect("built-in B200 table is well formed")
            .profile;
        p.name = String::from("b200");
        p
    }

    /// Built-in profile by name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "h100" => Some(Self::h100()),
            "b200" => Some(Self::b200()),
            _ => None,
        }
    }

    /// The microbenchmark table a built-in profile was fitted on.
    pub fn builtin_table(name: &str) -> Option<CalibrationTable> {
        match name {
            "h100" => Some(tables::h100_table()),
            "b200" => Some(tables::b200_table()),
            _ => None,
        }
    }

    /// Same profile with a different reference GEMM grid width.
    pub fn with_cta_columns(mut self, cta_columns: usize) -> Self {
        self.cta_columns = cta_columns;
        self
    }

    /// SMs left to compute kernels while a collective is running.
    pub fn contended_sms(&self) -> usize {
        self.num_sms - self.collective_sms
    }

    /// Checks counts and rates.
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_sms", self.num_sms),
            ("tile_tokens", self.tile_tokens),
            ("tile_cols", self.tile_cols),
            ("cta_columns", self.cta_columns),
            ("collective_sms", self.collective_sms),
            ("reference_hidden", self.reference_hidden),
            ("bytes_per_element", self.bytes_per_element),
        ];
        if let Some((field, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{field} must be at least 1")));
        }
        if self.collective_sms >= self.num_sms {
            return Err(Error::Config(format!(
                "collective_sms {} must be below num_sms {}",
                self.collective_sms, self.num_sms
            )));
        }
        let rates = [
            ("sm_flops", self.sm_flops),
            ("attention_efficiency", self.attention_efficiency),
            ("hbm_bandwidth_effective", self.hbm_bandwidth_effective),
            ("collective_per_token_time", self.collective_per_token_time),
            ("default_allreduce_scale", self.default_allreduce_scale),
        ];
        if let Some((field, v)) = rates.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!("{field} must be positive, got {v}")));
        }
        let latencies = [
            ("launch_overhead", self.launch_overhead),
            ("norm_overhead", self.norm_overhead),
            ("collective_base_latency", self.collective_base_latency),
            ("fused_overhead_fraction", self.fused_overhead_fraction),
            (
                "reduce_scatter_base_latency",
                self.reduce_scatter_base_latency,
            ),
            ("all_gather_base_latency", self.all_gather_base_latency),
            ("sm_saturation_exponent", self.sm_saturation_exponent),
            ("non_layer_overhead", self.non_layer_overhead),
        ];
        if let Some((field, v)) = latencies
            .iter()
            .find(|(_, v)| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::Config(format!(
                "{field} must be non-negative, got {v}"
            )));
        }
        Ok(())
    }
}
