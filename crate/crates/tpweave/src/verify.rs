//! The `verify` suite: seeded equivalence and invariant checks over every
//! model module, reported as one CSV row per check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tpweave_core::collectives::{
    all_gather, all_reduce, fused_allreduce_rmsnorm, reduce_scatter, token_shard_map, RankGroup,
    ShardMap,
};
use tpweave_core::model::LayerSpec;
use tpweave_core::numerics::{rmsnorm_residual, NormParams, TokenMatrix};
use tpweave_core::scheduler::{
    build_iteration_graph, iteration_timeline, model_reference_profile, split_ffn_time,
    BaselineMode, BatchShape, IterationOptions, OpKind, SplitId, Stream,
};
use tpweave_core::splitter::{
    place_sequence_boundaries, select_mode, smart_offset_analytic, smart_offset_sweep, split_waves,
    SplitMode, SplitPlan, SplitPolicy,
};
use tpweave_core::wavemodel::{
    collective_time, cta_count, ffn_time, fused_speedup, gemm_time, wave_count, AttentionSegment,
    CollectiveKind, HardwareProfile,
};
use tpweave_core::workloads::{form_batches, DEFAULT_MAX_ACTIVE};

use crate::parallel::{fused_allreduce_rmsnorm_parallel, ordered_map};
use crate::reports::csv_string;
use crate::synth::sharegpt_like;
use crate::Result;

/// Fused-vs-oracle tolerance.
pub const FUSED_TOLERANCE: f64 = 1e-5;

/// Knobs of the suite.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    /// Base seed; every instance derives its own seed from it.
    pub seed: u64,
    /// Random instances per fused case.
    pub instances: usize,
    /// World size 2 only, at most 10 instances.
    pub quick: bool,
    /// RMSNorm epsilon.
    pub epsilon: f32,
    /// Feed a corrupted shard map to the fused collective first.
    pub corrupt_shard_map: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 50,
            quick: false,
            epsilon: 1e-5,
            corrupt_shard_map: false,
        }
    }
}

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    /// Check name, `module.property`.
    pub check: &'static str,
    /// Cases evaluated.
    pub cases: usize,
    /// Largest error seen, for numeric checks.
    pub max_abs_error: Option<f64>,
    /// Allowed error, for numeric checks.
    pub limit: Option<f64>,
    /// Failing cases with what is needed to reproduce them.
    pub failures: Vec<String>,
}

impl CheckResult {
    fn new(check: &'static str) -> Self {
        Self {
            check,
            cases: 0,
            max_abs_error: None,
            limit: None,
            failures: Vec::new(),
        }
    }

    fn numeric(check: &'static str, limit: f64) -> Self {
        Self {
            max_abs_error: Some(0.0),
            limit: Some(limit),
            ..Self::new(check)
        }
    }

    fn error(&mut self, err: f64, case: impl FnOnce() -> String) {
        self.cases += 1;
        let max = self.max_abs_error.get_or_insert(0.0);
        if err > *max || err.is_nan() {
            *max = err;
        }
        if err.is_nan() || err > self.limit.unwrap_or(0.0) {
            self.failures.push(format!("{} (error {err:e})", case()));
        }
    }

    fn expect(&mut self, ok: bool, case: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures.push(case());
        }
    }

    fn merge(&mut self, other: CheckResult) {
        self.cases += other.cases;
        if let Some(e) = other.max_abs_error {
            let max = self.max_abs_error.get_or_insert(0.0);
            if e > *max || e.is_nan() {
                *max = e;
            }
        }
        self.failures.extend(other.failures);
    }

    /// True without failures.
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// All check results in run order.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    /// Results.
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    /// True when every check passed.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    /// CSV with columns `check,cases,max_abs_error,limit,status,first_failure`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "check",
            "cases",
            "max_abs_error",
            "limit",
            "status",
            "first_failure",
        ])?;
        let num = |v: Option<f64>| v.map(|x| format!("{x:.3e}")).unwrap_or_default();
        for c in &self.checks {
            let cases = c.cases.to_string();
            let status = if c.passed() { "pass" } else { "FAIL" };
            let first = c.failures.first().cloned().unwrap_or_default();
            w.write_record([
                c.check,
                &cases,
                &num(c.max_abs_error),
                &num(c.limit),
                status,
                &first,
            ])?;
        }
        Ok(csv_string(w))
    }
}

/// Runs every check. A corrupted shard map (see
/// [`VerifyOptions::corrupt_shard_map`]) surfaces as the collective's
/// contract error.
pub fn run_verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    if opts.corrupt_shard_map {
        corrupted_fused_call(opts)?;
    }
    let h100 = HardwareProfile::h100();
    let checks = vec![
        numerics_scale_covariance(opts),
        numerics_token_permutation(opts),
        numerics_residual_exact(opts),
        fused_oracle_sweep(opts),
        fused_parallel_bitwise(opts),
        fused_determinism(opts),
        allreduce_composition(opts),
        residual_sufficiency(opts),
        shard_map_invariants(),
        wave_monotonicity(&h100),
        wave_plateau(&h100),
        wave_worked_example(&h100),
        fused_speedup_band(&h100),
        reduce_scatter_overhead(&h100),
        split_no_regression(&h100),
        split_full_wave_equality(&h100),
        split_sweep_oracle(&h100),
        select_mode_monotone(),
        sequence_boundaries(opts),
        scheduler_invariants(&h100)?,
        scheduler_dominance(&h100)?,
        batching_invariants(opts)?,
    ];
    Ok(VerifyReport { checks })
}

fn instance_seed(base: u64, parts: &[usize]) -> u64 {
    parts.iter().fold(base ^ 0x9e37_79b9_7f4a_7c15, |acc, &p| {
        (acc ^ p as u64)
            .wrapping_mul(0x0100_0000_01b3)
            .rotate_left(17)
    })
}

struct Instance {
    inputs: Vec<TokenMatrix>,
    residual: TokenMatrix,
    params: NormParams,
}

fn random_matrix(rng: &mut ChaCha8Rng, t: usize, h: usize) -> TokenMatrix {
    TokenMatrix::from_fn(t, h, |_, _| rng.random_range(-1.0f32..1.0)).expect("positive hidden")
}

fn instance(seed: u64, n: usize, t: usize, h: usize, eps: f32) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = (0..n).map(|_| random_matrix(&mut rng, t, h)).collect();
    let residual = random_matrix(&mut rng, t, h);
    let weight = (0..h).map(|_| rng.random_range(0.5f32..1.5)).collect();
    let params = NormParams::new(weight, eps).expect("valid weight");
    Instance {
        inputs,
        residual,
        params,
    }
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| f64::from((x - y).abs()))
        .fold(0.0, f64::max)
}

fn bitwise_eq(a: &TokenMatrix, b: &TokenMatrix) -> bool {
    a.shape() == b.shape()
        && a.values()
            .iter()
            .zip(b.values())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

fn corrupted_fused_call(opts: &VerifyOptions) -> Result<()> {
    let inst = instance(opts.seed, 4, 8, 16, opts.epsilon);
    let map = token_shard_map(8, 4)?;
    let mut group = RankGroup::with_residual(inst.inputs, &inst.residual, &map)?;
    let corrupt = ShardMap::from_ranges_unchecked(vec![0..2, 3..4, 4..6, 6..8], 8);
    fused_allreduce_rmsnorm(&mut group, &inst.params, &corrupt)?;
    Ok(())
}

fn numerics_scale_covariance(opts: &VerifyOptions) -> CheckResult {
    let mut c = CheckResult::numeric("numerics.scale_covariance", 1e-5);
    for i in 0..opts.instances.max(1) {
        let seed = instance_seed(opts.seed, &[1, i]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t, h) = (rng.random_range(1..9), [16, 64, 256][i % 3]);
        let input = random_matrix(&mut rng, t, h);
        let residual = random_matrix(&mut rng, t, h);
        let scale: f32 = 10f32.powf(rng.random_range(-2.0..2.0));
        let params = NormParams::new((0..h).map(|_| rng.random_range(0.5..1.5)).collect(), 0.0)
            .expect("valid weight");
        let scaled = |m: &TokenMatrix| {
            TokenMatrix::new(t, h, m.values().iter().map(|v| v * scale).collect())
                .expect("same shape")
        };
        let (a, _) = rmsnorm_residual(&input, &residual, &params).expect("finite");
        let (b, _) =
            rmsnorm_residual(&scaled(&input), &scaled(&residual), &params).expect("finite");
        let err = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| f64::from((x - y).abs()) / f64::from(x.abs()).max(1.0))
            .fold(0.0, f64::max);
        c.error(err, || format!("seed={seed} t={t} h={h} scale={scale}"));
    }
    c
}

fn numerics_token_permutation(opts: &VerifyOptions) -> CheckResult {
    let mut c = CheckResult::new("numerics.token_permutation");
    for i in 0..opts.instances.max(1) {
        let seed = instance_seed(opts.seed, &[2, i]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t, h) = (rng.random_range(2..17), 32);
        let input = random_matrix(&mut rng, t, h);
        let residual = random_matrix(&mut rng, t, h);
        let params = NormParams::new(vec![1.0; h], opts.epsilon).expect("valid weight");
        let mut perm: Vec<usize> = (0..t).collect();
        for k in (1..t).rev() {
            perm.swap(k, rng.random_range(0..=k));
        }
        let permute = |m: &TokenMatrix| {
            TokenMatrix::new(t, h, perm.iter().flat_map(|&r| m.row(r).to_vec()).collect())
                .expect("same shape")
        };
        let (out, _) = rmsnorm_residual(&input, &residual, &params).expect("finite");
        let (pout, _) =
            rmsnorm_residual(&permute(&input), &permute(&residual), &params).expect("finite");
        c.expect(bitwise_eq(&permute(&out), &pout), || {
            format!("seed={seed} t={t}")
        });
    }
    c
}

fn numerics_residual_exact(opts: &VerifyOptions) -> CheckResult {
    let mut c = CheckResult::new("numerics.residual_out_exact");
    for i in 0..opts.instances.max(1) {
        let seed = instance_seed(opts.seed, &[3, i]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t, h) = (rng.random_range(1..17), 64);
        let input = random_matrix(&mut rng, t, h);
        let residual = random_matrix(&mut rng, t, h);
        let params = NormParams::ones(h).expect("positive hidden");
        let (_, res) = rmsnorm_residual(&input, &residual, &params).expect("finite");
        let ok = res
            .values()
            .iter()
            .zip(input.values().iter().zip(residual.values()))
            .all(|(r, (a, b))| r.to_bits() == (a + b).to_bits());
        c.expect(ok, || format!("seed={seed} t={t}"));
    }
    c
}

fn fused_cases(opts: &VerifyOptions) -> Vec<(usize, usize, usize, usize)> {
    let ranks: &[usize] = if opts.quick { &[2] } else { &[2, 4, 8] };
    let instances = if opts.quick {
        opts.instances.min(10)
    } else {
        opts.instances
    };
    let mut cases = Vec::new();
    for &n in ranks {
        for t in [1, 3, 17, 256, 1024] {
            for h in [16, 64, 1024] {
                for i in 0..instances {
                    cases.push((n, t, h, i));
                }
            }
        }
    }
    cases
}

fn fused_oracle_sweep(opts: &VerifyOptions) -> CheckResult {
    let cases = fused_cases(opts);
    let results = ordered_map(&cases, |&(n, t, h, i)| {
        let mut c = CheckResult::numeric("collectives.fused_vs_oracle", FUSED_TOLERANCE);
        let seed = instance_seed(opts.seed, &[4, n, t, h, i]);
        let describe = || format!("seed={} n={n} t={t} h={h} instance={i}", opts.seed);
        let run = || -> tpweave_core::Result<(f64, bool)> {
            let inst = instance(seed, n, t, h, opts.epsilon);
            let map = token_shard_map(t, n)?;
            let sum = all_reduce(&RankGroup::new(inst.inputs.clone())?)?;
            let (expected, expected_res) = rmsnorm_residual(&sum, &inst.residual, &inst.params)?;
            let mut group = RankGroup::with_residual(inst.inputs, &inst.residual, &map)?;
            let out = fused_allreduce_rmsnorm(&mut group, &inst.params, &map)?;
            let res = all_gather(group.residual_shards(), &map)?;
            Ok((
                max_abs_diff(out.values(), expected.values()),
                bitwise_eq(&res, &expected_res),
            ))
        };
        match run() {
            Ok((err, res_ok)) => {
                c.error(err, describe);
                if !res_ok {
                    c.failures
                        .push(format!("{} residual differs from oracle", describe()));
                }
            }
            Err(e) => {
                c.cases += 1;
                c.failures.push(format!("{}: {e}", describe()));
            }
        }
        c
    });
    let mut total = CheckResult::numeric("collectives.fused_vs_oracle", FUSED_TOLERANCE);
    for r in results {
        total.merge(r);
    }
    total
}

fn fused_parallel_bitwise(opts: &VerifyOptions) -> CheckResult {
    let mut c = CheckResult::new("collectives.parallel_bitwise");
    let ranks: &[usize] = if opts.quick { &[2] } else { &[2, 4, 8] };
    for &n in ranks {
        for t in [1, 3, 17, 256] {
            for i in 0..3 {
                let seed = instance_seed(opts.seed, &[5, n, t, i]);
                let inst = instance(seed, n, t, 64, opts.epsilon);
                let map = token_shard_map(t, n).expect("valid sizes");
                let mut a = RankGroup::with_residual(inst.inputs.clone(), &inst.residual, &map)
                    .expect("valid");
                let mut b = a.clone();
                let seq = fused_allreduce_rmsnorm(&mut a, &inst.params, &map);
                let par = fused_allreduce_rmsnorm_parallel(&mut b, &inst.params, &map);
                let ok = match (seq, par) {
                    (Ok(x), Ok(y)) => bitwise_eq(&x, &y) && a == b,
                    _ => false,
                };
                c.expect(ok, || {
                    format!("seed={} n={n} t={t} instance={i}", opts.seed)
                });
            }
        }
    }
    c
}

fn fused_determinism(opts: &VerifyOptions) -> CheckResult {
    let mut c = CheckResult::new("collectives.determinism");
    for (k, (n, t, h)) in [(2, 17, 64), (4, 256, 16), (8, 33, 1024)]
        .into_iter()
        .enumerate()
    {
        let inst = instance(instance_seed(opts.seed, &[6, k]), n, t, h, opts.epsilon);
        let map = token_shard_map(t, n).expect("valid sizes");
        let run = || {
            let mut g =
                RankGroup::with_residual(inst.inputs.clone(), &inst.residual, &map).expect("valid");
            let out = fused_allreduce_rmsnorm(&mut g, &inst.params, &map).expect("valid");
            (out, g)
        };
        let ((a, ga), (b, gb)) = (run(), run());
        c.expect(bitwise_eq(&a, &b) && ga == gb, || {
            format!("seed={} n={n} t={t} h={h}", opts.seed)
        });
    }
    c
}

fn allreduce_composition(opts: &VerifyOptions) -> CheckResult {
    let mut c = CheckResult::new("collectives.allreduce_eq_allgather_reducescatter");
    for n in [2, 4, 8] {
        for t in [1, 3, 17, 100] {
            let inst = instance(instance_seed(opts.seed, &[7, n, t]), n, t, 32, opts.epsilon);
            let map = token_shard_map(t, n).expect("valid sizes");
            let group = RankGroup::new(inst.inputs).expect("valid");
            let ar = all_reduce(&group).expect("valid");
            let composed = reduce_scatter(&group, &map).and_then(|s| all_gather(&s, &map));
            let ok = composed.is_ok_and(|m| bitwise_eq(&m, &ar));
            c.expect(ok, || format!("seed={} n={n} t={t}", opts.seed));
        }
    }
    c
}

fn residual_sufficiency(opts: &VerifyOptions) -> CheckResult {
    let mut c = CheckResult::numeric("collectives.residual_shard_sufficiency", FUSED_TOLERANCE);
    for n in [2, 4, 8] {
        for t in [1, 5, 17, 64] {
            let seed = instance_seed(opts.seed, &[8, n, t]);
            let first = instance(seed, n, t, 32, opts.epsilon);
            let second = instance(seed.wrapping_add(1), n, t, 32, opts.epsilon);
            let map = token_shard_map(t, n).expect("valid sizes");
            let mut g = RankGroup::with_residual(first.inputs.clone(), &first.residual, &map)
                .expect("valid");
            fused_allreduce_rmsnorm(&mut g, &first.params, &map).expect("valid");
            g.replace_inputs(second.inputs.clone()).expect("same shape");
            let out2 = fused_allreduce_rmsnorm(&mut g, &first.params, &map).expect("valid");

            let s1 = all_reduce(&RankGroup::new(first.inputs).expect("valid")).expect("valid");
            let (_, r1) = rmsnorm_residual(&s1, &first.residual, &first.params).expect("finite");
            let s2 = all_reduce(&RankGroup::new(second.inputs).expect("valid")).expect("valid");
            let (o2, r2) = rmsnorm_residual(&s2, &r1, &first.params).expect("finite");
            let owned = g
                .residual_shards()
                .iter()
                .zip(map.ranges())
                .all(|(s, r)| s.num_tokens() == r.len());
            let res_ok = all_gather(g.residual_shards(), &map).is_ok_and(|m| bitwise_eq(&m, &r2));
            let describe = || format!("seed={} n={n} t={t}", opts.seed);
            c.error(max_abs_diff(out2.values(), o2.values()), describe);
            if !(owned && res_ok) {
                c.failures.push(format!("{} residual shards", describe()));
            }
        }
    }
    c
}

fn shard_map_invariants() -> CheckResult {
    let mut c = CheckResult::new("collectives.shard_map");
    for n in [2, 3, 4, 8] {
        for t in 0..=70 {
            let ok = token_shard_map(t, n).is_ok_and(|m| {
                let r = m.ranges();
                let sizes: Vec<usize> = r.iter().map(|x| x.len()).collect();
                r.len() == n
                    && r.first().is_some_and(|x| x.start == 0)
                    && r.last().is_some_and(|x| x.end == t)
                    && r.windows(2).all(|w| w[0].end == w[1].start)
                    && sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1
            });
            c.expect(ok, || format!("n={n} t={t}"));
        }
    }
    for bad in [
        vec![0..2, 3..4],
        vec![0..3, 2..4],
        vec![0..2, 2..3],
        vec![1..2, 2..4],
    ] {
        let desc = format!("{bad:?}");
        c.expect(ShardMap::from_ranges(bad, 4).is_err(), || {
            format!("accepted {desc}")
        });
    }
    c
}

fn wave_monotonicity(p: &HardwareProfile) -> CheckResult {
    let mut c = CheckResult::new("wavemodel.wave_monotonicity");
    for sms in [1, 7, 64, p.num_sms, p.contended_sms(), 148] {
        for ctas in 0..2000 {
            c.expect(wave_count(ctas, sms) <= wave_count(ctas + 1, sms), || {
                format!("ctas={ctas} sms={sms}")
            });
            c.expect(wave_count(ctas, sms + 1) <= wave_count(ctas, sms), || {
                format!("ctas={ctas} sms={sms}")
            });
        }
    }
    c
}

fn wave_plateau(p: &HardwareProfile) -> CheckResult {
    let mut c = CheckResult::new("wavemodel.quantization_plateau");
    let sms = p.num_sms;
    for wave in 1..=4usize {
        let full = gemm_time(wave * sms * p.tile_tokens, p.tile_cols, 8192, sms, p).duration;
        for rows in (wave - 1) * sms + 1..=wave * sms {
            let d = gemm_time(rows * p.tile_tokens, p.tile_cols, 8192, sms, p).duration;
            c.expect(d == full, || format!("rows={rows} wave={wave}"));
        }
    }
    c
}

fn wave_worked_example(p: &HardwareProfile) -> CheckResult {
    let mut c = CheckResult::new("wavemodel.worked_example_300_ctas");
    let p = p.clone().with_cta_columns(4);
    let t = 75 * p.tile_tokens;
    let ctas = cta_count(t, &p);
    let unsplit = wave_count(ctas, p.num_sms);
    let equal = split_waves(t.div_ceil(2), t / 2, &p);
    let prefix = (t.div_ceil(2) as i64 + smart_offset_analytic(t, &p)) as usize;
    let smart = split_waves(prefix, t - prefix, &p);
    let got = (ctas, unsplit, equal, smart, cta_count(prefix, &p));
    c.expect(got == (300, 3, 4, 3, 132), || {
        format!("(ctas, unsplit, equal, smart, prefix ctas) = {got:?}")
    });
    c
}

fn fused_speedup_band(p: &HardwareProfile) -> CheckResult {
    let mut c = CheckResult::new("wavemodel.fused_speedup_band");
    for h in [4096, 8192] {
        for t in (6..=15).map(|k| 1usize << k).chain([96, 3000, 20000]) {
            let s = fused_speedup(t, h, p);
            c.expect((1.25..=1.45).contains(&s), || {
                format!("h={h} t={t} speedup={s:.4}")
            });
        }
    }
    c
}

fn reduce_scatter_overhead(p: &HardwareProfile) -> CheckResult {
    let mut c = CheckResult::new("wavemodel.rs_plus_ag_exceeds_ar");
    let sms = p.collective_sms;
    for t in [1, 16, 64, 128, 256, 512, 1024] {
        let d = |k| collective_time(k, t, 8192, sms, p).duration;
        let ok = d(CollectiveKind::ReduceScatter) + d(CollectiveKind::AllGather)
            > d(CollectiveKind::AllReduce);
        c.expect(ok, || format!("t={t}"));
    }
    c
}

fn analytic_prefix(t: usize, p: &HardwareProfile) -> usize {
    (t.div_ceil(2) as i64 + smart_offset_analytic(t, p)) as usize
}

fn split_no_regression(p: &HardwareProfile) -> CheckResult {
    let mut c = CheckResult::new("splitter.no_regression");
    let spec = LayerSpec::llama_70b();
    let reference = model_reference_profile(&spec, p);
    for profile in [p.clone(), reference.clone()] {
        for t in (2 * profile.tile_tokens..=65536).step_by(profile.tile_tokens) {
            let prefix = analytic_prefix(t, &profile);
            let smart = split_waves(prefix, t - prefix, &profile);
            let equal = split_waves(t.div_ceil(2), t / 2, &profile);
            c.expect(smart <= equal, || {
                format!(
                    "cols={} t={t} smart={smart} equal={equal}",
                    profile.cta_columns
                )
            });
        }
    }
    for t in (256..=65536).step_by(p.tile_tokens) {
        let prefix = analytic_prefix(t, &reference);
        let smart = split_ffn_time(prefix, t - prefix, &spec, p.num_sms, p);
        let equal = split_ffn_time(t.div_ceil(2), t / 2, &spec, p.num_sms, p);
        c.expect(smart <= equal * (1.0 + 1e-12), || {
            format!("ffn t={t} smart={smart:e} equal={equal:e}")
        });
    }
    c
}

fn split_full_wave_equality(p: &HardwareProfile) -> CheckResult {
    let mut c = CheckResult::new("splitter.full_wave_prefix_equality");
    for cols in [4, 7, 56] {
        let profile = p.clone().with_cta_columns(cols);
        for t in (2 * profile.tile_tokens..=65536).step_by(profile.tile_tokens) {
            let rows = t / profile.tile_tokens;
            let exists = (1..rows).any(|r| (r * cols).is_multiple_of(profile.num_sms));
            if !exists {
                continue;
            }
            let prefix = analytic_prefix(t, &profile);
            let split = split_waves(prefix, t - prefix, &profile);
            let unsplit = wave_count(cta_count(t, &profile), profile.num_sms);
            c.expect(split == unsplit, || {
                format!("cols={cols} t={t} split={split} unsplit={unsplit}")
            });
        }
    }
    c
}

fn split_sweep_oracle(p: &HardwareProfile) -> CheckResult {
    let mut c = CheckResult::new("splitter.exhaustive_oracle");
    let spec = LayerSpec::llama_70b();
    let reference = model_reference_profile(&spec, p);
    let one_wave = ffn_time(p.tile_tokens, &spec, p.num_sms, p).duration;
    let ffn = |a: usize, b: usize| split_ffn_time(a, b, &spec, p.num_sms, p);
    let policy = SplitPolicy::dense();
    for t in 2..=512 {
        let best = (1..t).map(|a| ffn(a, t - a)).fold(f64::INFINITY, f64::min);
        let offset = smart_offset_sweep(t, &policy, ffn);
        let sweep = ffn(t.div_ceil(2) + offset, t / 2 - offset);
        let prefix = analytic_prefix(t, &reference).min(t - 1).max(1);
        let analytic = ffn(prefix, t - prefix);
        c.expect(
            sweep <= best + one_wave && analytic <= best + one_wave,
            || format!("t={t} sweep={sweep:e} analytic={analytic:e} exhaustive={best:e}"),
        );
    }
    c
}

fn select_mode_monotone() -> CheckResult {
    let mut c = CheckResult::new("splitter.select_mode_monotone");
    for policy in [SplitPolicy::dense(), SplitPolicy::moe()] {
        let mut seen_overlap = false;
        for t in 1..=20_000 {
            let overlap = select_mode(t, &policy) == SplitMode::Overlap;
            c.expect(!seen_overlap || overlap, || {
                format!("threshold={} t={t}", policy.threshold_tokens)
            });
            seen_overlap |= overlap;
        }
    }
    c
}

fn sequence_boundaries(opts: &VerifyOptions) -> CheckResult {
    let mut c = CheckResult::new("splitter.sequence_boundaries");
    for i in 0..opts.instances.max(1) * 4 {
        let seed = instance_seed(opts.seed, &[9, i]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lengths: Vec<usize> = (0..rng.random_range(1..12))
            .map(|_| rng.random_range(1..300))
            .collect();
        let total: usize = lengths.iter().sum();
        let plan = SplitPlan::new(total, rng.random_range(0..=total), SplitMode::Overlap);
        let ok = place_sequence_boundaries(&lengths, &plan).is_ok_and(|placed| {
            let b = &placed.partial_sequence_boundaries;
            let first_partial = b
                .iter()
                .zip(&lengths)
                .position(|(x, l)| x < l)
                .unwrap_or(b.len());
            b.len() == lengths.len()
                && b.iter().sum::<usize>() == plan.prefix_tokens
                && b.iter().zip(&lengths).all(|(x, l)| x <= l)
                && b[first_partial.min(b.len())..]
                    .iter()
                    .skip(1)
                    .all(|&x| x == 0)
        });
        c.expect(ok, || format!("seed={seed} lengths={lengths:?}"));
    }
    c
}

fn scheduler_batches() -> Vec<(String, BatchShape)> {
    let mut out: Vec<(String, BatchShape)> = [1024, 2048, 4096, 8192, 16384]
        .iter()
        .map(|&t| (format!("prefill {t}"), BatchShape::prefill(t)))
        .collect();
    let mut mixed: Vec<AttentionSegment> = (0..64)
        .map(|i| AttentionSegment {
            tokens: 1,
            context: 500 + i * 7,
        })
        .collect();
    mixed.push(AttentionSegment {
        tokens: 1984,
        context: 2048,
    });
    out.push((
        "mixed 64 decodes + 1984 prefill".into(),
        BatchShape::new(mixed, false),
    ));
    out
}

fn scheduler_invariants(p: &HardwareProfile) -> Result<CheckResult> {
    let mut c = CheckResult::new("scheduler.timeline_invariants");
    for spec in [LayerSpec::llama_70b(), LayerSpec::mixtral_8x22b()] {
        for (label, batch) in scheduler_batches() {
            for mode in BaselineMode::ALL {
                let options = IterationOptions::new(mode, &spec);
                let (plan, tl) = iteration_timeline(&batch, &spec, p, &options)?;
                let dag = build_iteration_graph(&plan, &batch, &spec, p, mode)?;
                let case = || format!("{} {label} mode={mode}", spec.name);
                for stream in [Stream::Compute, Stream::Comm] {
                    let mut ev: Vec<_> = tl.events.iter().filter(|e| e.stream == stream).collect();
                    ev.sort_by(|a, b| a.start.total_cmp(&b.start));
                    let exclusive = ev.windows(2).all(|w| w[1].start >= w[0].end - 1e-12);
                    c.expect(exclusive, || {
                        format!("{} stream {stream:?} overlaps", case())
                    });
                }
                let deps_ok = tl.events.iter().all(|e| {
                    e.depends_on
                        .iter()
                        .all(|&d| e.start >= tl.events[d].end - 1e-12)
                });
                c.expect(deps_ok, || format!("{} starts before a dependency", case()));
                if plan.mode == SplitMode::Overlap {
                    let chunked = dag
                        .nodes
                        .iter()
                        .filter(|n| n.op == OpKind::Attention && n.split == SplitId::Suffix)
                        .all(|n| {
                            n.deps.iter().any(|&d| {
                                let dn = &dag.nodes[d];
                                dn.op == OpKind::Attention
                                    && dn.split == SplitId::Prefix
                                    && dn.layer == n.layer
                            })
                        });
                    c.expect(chunked, || {
                        format!("{} missing chunked-attention edge", case())
                    });
                }
                let compute: f64 = dag
                    .nodes
                    .iter()
                    .filter(|n| n.stream == Stream::Compute)
                    .map(|n| n.duration)
                    .sum();
                c.expect(tl.iteration_latency >= compute * (1.0 - 1e-12), || {
                    format!(
                        "{} makespan {} below compute time {compute}",
                        case(),
                        tl.iteration_latency
                    )
                });
                let again = iteration_timeline(&batch, &spec, p, &options)?;
                c.expect(again == (plan, tl), || {
                    format!("{} not deterministic", case())
                });
            }
        }
    }
    Ok(c)
}

fn scheduler_dominance(p: &HardwareProfile) -> Result<CheckResult> {
    let mut c = CheckResult::new("scheduler.overlap_dominance");
    for spec in [LayerSpec::llama_70b(), LayerSpec::mixtral_8x22b()] {
        let policy = SplitPolicy::for_spec(&spec);
        for t in [1024, 2048, 4096, 8192, 16384] {
            if select_mode(t, &policy) != SplitMode::Overlap {
                continue;
            }
            let batch = BatchShape::prefill(t);
            let lat = |mode| -> Result<f64> {
                let o = IterationOptions::new(mode, &spec);
                Ok(iteration_timeline(&batch, &spec, p, &o)?
                    .1
                    .iteration_latency)
            };
            let (tw, fo, mm) = (
                lat(BaselineMode::TokenWeave)?,
                lat(BaselineMode::FuseOnly)?,
                lat(BaselineMode::Multimem)?,
            );
            c.expect(tw <= fo && fo <= mm, || {
                format!("{} t={t} tw={tw:e} fo={fo:e} mm={mm:e}", spec.name)
            });
        }
    }
    Ok(c)
}

fn batching_invariants(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut c = CheckResult::new("workloads.batching_invariants");
    let trace = sharegpt_like(300, opts.seed);
    let expected: usize = trace
        .iter()
        .map(|r| r.prompt_tokens + r.output_tokens)
        .sum();
    for chunk in [256, 2048] {
        let batches = form_batches(&trace, chunk, DEFAULT_MAX_ACTIVE)?;
        let total: usize = batches.iter().map(|b| b.total_tokens).sum();
        c.expect(total == expected, || {
            format!("seed={} chunk={chunk} {total} != {expected}", opts.seed)
        });
        c.expect(
            batches
                .iter()
                .all(|b| b.total_tokens <= chunk && b.total_tokens > 0),
            || format!("seed={} chunk={chunk} batch over budget", opts.seed),
        );
        let mut first = vec![usize::MAX; trace.len()];
        for (i, b) in batches.iter().enumerate() {
            for s in &b.prefill_token_slices {
                first[s.request] = first[s.request].min(i);
            }
        }
        c.expect(first.windows(2).all(|w| w[0] <= w[1]), || {
            format!("seed={} chunk={chunk} FCFS", opts.seed)
        });
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        let opts = VerifyOptions {
            quick: true,
            instances: 3,
            ..Default::default()
        };
        let report = run_verify(&opts).unwrap();
        for c in &report.checks {
            assert!(c.passed(), "{}: {:?}", c.check, c.failures.first());
        }
        let csv = report.to_csv().unwrap();
        assert!(csv.starts_with("check,cases,max_abs_error,limit,status,first_failure\n"));
    }

    #[test]
    fn corrupted_map_is_contract_error() {
        let opts = VerifyOptions {
            corrupt_shard_map: true,
            ..Default::default()
        };
        assert!(matches!(
            run_verify(&opts),
            Err(crate::Error::Core(tpweave_core::Error::Contract(_)))
        ));
    }

    #[test]
    fn failures_are_reported() {
        let mut c = CheckResult::numeric("x", 1e-5);
        c.error(1e-3, || "case".into());
        assert!(!c.passed());
        let csv = VerifyReport { checks: vec![c] }.to_csv().unwrap();
        assert!(csv.contains("FAIL"));
    }
}
