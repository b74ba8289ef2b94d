//! Analytic GPU cost model: CTA and wave counts, wave-quantized GEMMs,
//! memory-bound RMSNorm, affine collectives, and the table fit that sets the
//! collective and bandwidth terms.

mod calibrate;
mod kernels;
mod profile;
mod tables;

pub use calibrate::{
    calibrate, predict_us, Calibration, CalibrationPoint, CalibrationSeries, CalibrationTable,
    FitResidual, SeriesKind,
};
pub use kernels::{
    attention_terms, attention_time, attention_time_segments, collective_time, cta_count, ffn_time,
    gemm_time, rmsnorm_time, sm_inflation, wave_count, AttentionSegment, CollectiveKind,
    KernelCost, NormLayout,
};
pub use profile::{HardwareProfile, MAX_FUSED_OVERHEAD};

/// Modeled speedup of the fused kernel over AllReduce followed by an
/// unsharded RMSNorm.
pub fn fused_speedup(num_tokens: usize, hidden: usize, profile: &HardwareProfile) -> f64 {
    let sms = profile.collective_sms;
    let ar = collective_time(CollectiveKind::AllReduce, num_tokens, hidden, sms, profile).duration;
    let rn = rmsnorm_time(num_tokens, hidden, profile, NormLayout::Replicated).duration;
    let fused = collective_time(
        CollectiveKind::FusedArNorm,
        num_tokens,
        hidden,
        sms,
        profile,
    )
    .duration;
    (ar + rn) / fused
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerSpec;

    fn tiny() -> HardwareProfile {
        HardwareProfile::h100_base()
    }

    #[test]
    fn cta_examples() {
        let p = tiny();
        assert_eq!(cta_count(1024, &p), 32);
        assert_eq!(cta_count(0, &p), 0);
        let narrow = HardwareProfile {
            tile_tokens: 32,
            ..tiny()
        };
        assert_eq!(cta_count(1024, &narrow), 128);
        assert_eq!(cta_count(9600, &p), 300);
        assert_eq!(wave_count(300, 132), 3);
        assert_eq!(wave_count(10, 4), 3);
        assert_eq!(wave_count(0, 132), 0);
        assert_eq!(wave_count(132, 132), 1);
    }

    #[test]
    fn gemm_sm_doubling_halves() {
        let p = tiny();
        // 1 row tile x 132 column tiles
        let a = gemm_time(128, 132 * 128, 4096, 66, &p);
        let b = gemm_time(128, 132 * 128, 4096, 132, &p);
        assert_eq!((a.ctas, a.waves, b.waves), (132, 2, 1));
        assert!((a.duration - 2.0 * b.duration).abs() < 1e-15);
    }

    #[test]
    fn gemm_plateau() {
        let p = tiny();
        let a = gemm_time(128, 150 * 128, 4096, 132, &p);
        let b = gemm_time(128, 168 * 128, 4096, 132, &p);
        assert_eq!(a.waves, 2);
        assert_eq!(a.duration, b.duration);
    }

    #[test]
    fn rmsnorm_fit_and_sharding() {
        let p = HardwareProfile::h100();
        let us = rmsnorm_time(1024, 8192, &p, NormLayout::Replicated).duration * 1e6;
        assert!((us - 29.8).abs() / 29.8 < 0.05, "{us}");
        let full = rmsnorm_time(8000, 8192, &p, NormLayout::Replicated).duration - p.norm_overhead;
        let shard = rmsnorm_time(8000, 8192, &p, NormLayout::Sharded { world_size: 8 }).duration
            - p.norm_overhead;
        assert!((full / shard - 8.0).abs() < 1e-9);
    }

    #[test]
    fn allreduce_fit_points() {
        let p = HardwareProfile::h100();
        let ar = |t| collective_time(CollectiveKind::AllReduce, t, 8192, 8, &p).duration * 1e6;
        assert!((ar(1024) - 74.85).abs() / 74.85 < 0.1);
        assert!((ar(16384) - 986.24).abs() / 986.24 < 0.1);
        assert!((p.collective_per_token_time * 1e6 - 0.059).abs() < 0.002);
    }

    #[test]
    fn fused_within_three_percent() {
        let p = HardwareProfile::h100();
        for t in [64, 1024, 32768] {
            let ar = collective_time(CollectiveKind::AllReduce, t, 8192, 8, &p).duration;
            let fu = collective_time(CollectiveKind::FusedArNorm, t, 8192, 8, &p).duration;
            assert!(fu >= ar && fu <= ar * 1.03 + 1e-15);
        }
    }

    #[test]
    fn fused_speedup_band() {
        let p = HardwareProfile::h100();
        for h in [4096, 8192] {
            let mut t = 64;
            while t <= 32768 {
                let s = fused_speedup(t, h, &p);
                assert!((1.25..=1.45).contains(&s), "H={h} T={t}: {s}");
                t *= 2;
            }
        }
    }

    #[test]
    fn rs_ag_exceed_ar_at_small_t() {
        let p = HardwareProfile::h100();
        for t in [64, 128, 256, 512] {
            let c = |k| collective_time(k, t, 8192, 8, &p).duration;
            assert!(
                c(CollectiveKind::ReduceScatter) + c(CollectiveKind::AllGather)
                    > c(CollectiveKind::AllReduce)
            );
        }
    }

    #[test]
    fn sm_saturation() {
        let p = HardwareProfile::h100();
        let c = |sms| collective_time(CollectiveKind::AllReduce, 4096, 8192, sms, &p).duration;
        assert!(c(2) > c(4) && c(4) > c(8));
        assert_eq!(c(8), c(16));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!(
            "AllReduce".parse::<CollectiveKind>().unwrap(),
            CollectiveKind::AllReduce
        );
        assert_eq!(
            "fused".parse::<CollectiveKind>().unwrap(),
            CollectiveKind::FusedArNorm
        );
        assert!(matches!(
            "broadcast".parse::<CollectiveKind>(),
            Err(crate::Error::Contract(_))
        ));
    }

    #[test]
    fn attention_shapes() {
        let p = HardwareProfile::h100();
        let s = LayerSpec::llama_70b();
        let mut prev = 0.0;
        for t in [1, 64, 200, 1024, 4096] {
            let d = attention_time(t, 0, &s, 132, &p).duration;
            assert!(d >= prev);
            prev = d;
        }
        let seg: [AttentionSegment; 64] = [AttentionSegment {
            tokens: 1,
            context: 4096,
        }; 64];
        let (core, kv) = attention_terms(&seg, &s, 132, &p);
        assert!(kv > core);
        assert!(
            attention_time(512, 512, &s, 132, &p).duration
                >= attention_time(512, 0, &s, 132, &p).duration
        );
    }

    #[test]
    fn moe_is_expert_quantized() {
        let p = HardwareProfile::h100();
        let m = LayerSpec::mixtral_8x22b();
        let f = ffn_time(1024, &m, 132, &p);
        let one = gemm_time(256, m.ffn_up_columns(), m.hidden, 132, &p)
            + gemm_time(256, m.hidden, m.ffn_down_depth(), 132, &p);
        assert!((f.duration - 8.0 * one.duration - 2.0 * p.launch_overhead).abs() < 1e-12);
        assert_eq!(ffn_time(0, &m, 132, &p).duration, 0.0);
    }

    #[test]
    fn calibrate_two_points_exact() {
        let table = CalibrationTable {
            name: "two".into(),
            hidden: 8192,
            bytes_per_element: 2,
            series: alloc::vec![CalibrationSeries {
                name: "allreduce".into(),
                points: alloc::vec![
                    CalibrationPoint {
                        tokens: 1000,
                        microseconds: 70.0
                    },
                    CalibrationPoint {
                        tokens: 2000,
                        microseconds: 130.0
                    },
                ],
            }],
        };
        let c = calibrate(&table, &tiny()).unwrap();
        assert!((c.profile.collective_base_latency - 10e-6).abs() < 1e-12);
        assert!((c.profile.collective_per_token_time - 0.06e-6).abs() < 1e-15);
        assert!(c.max_relative_error("allreduce").unwrap() < 1e-9);
    }

    #[test]
    fn calibrate_rejects_degenerate() {
        let mut table = HardwareProfile::builtin_table("h100").unwrap();
        for s in &mut table.series {
            for p in &mut s.points {
                p.tokens = 1024;
            }
        }
        assert!(matches!(
            calibrate(&table, &tiny()),
            Err(crate::Error::Calibration(_))
        ));
        let empty = CalibrationTable {
            name: String::new(),
            hidden: 8192,
            bytes_per_element: 2,
            series: alloc::vec![],
        };
        assert!(calibrate(&empty, &tiny()).is_err());
    }

    use alloc::string::String;

    #[test]
    fn builtin_profiles_valid() {
        for name in ["h100", "b200"] {
            let p = HardwareProfile::builtin(name).unwrap();
            p.validate().unwrap();
            assert!(p.fused_overhead_fraction <= MAX_FUSED_OVERHEAD);
        }
        assert_eq!(HardwareProfile::h100().num_sms, 132);
        assert!(HardwareProfile::builtin("a100").is_none());
    }

    #[test]
    fn h100_fit_residuals() {
        let table = HardwareProfile::builtin_table("h100").unwrap();
        let c = calibrate(&table, &HardwareProfile::h100_base()).unwrap();
        assert!(c.max_relative_error("allreduce").unwrap() <= 0.10);
        assert!(c.max_relative_error("rmsnorm").unwrap() <= 0.15);
        let s = (predict_us(SeriesKind::AllReduce, 1024, 8192, &c.profile)
            + predict_us(SeriesKind::RmsNorm, 1024, 8192, &c.profile))
            / predict_us(SeriesKind::AllReduce, 1024, 8192, &c.profile);
        assert!((s - 1.398).abs() < 0.02, "{s}");
    }
}
