//! Simulated tensor-parallel collectives over in-process rank buffers.
//!
//! Reductions always add ranks in ascending order (`rank 0 + rank 1 + ...`),
//! so every collective here is bitwise deterministic and
//! `all_gather(reduce_scatter(g))` reproduces `all_reduce(g)` exactly.
//!
//! The residual stream is stored token-sharded: rank `r` only holds the rows
//! of its [`ShardMap`] range, and only [`fused_allreduce_rmsnorm`] reads or
//! writes it.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{normalize_token, NormParams, TokenMatrix};

/// Contiguous token ranges, one per rank, covering `[0, num_tokens)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardMap {
    ranges: Vec<Range<usize>>,
    num_tokens: usize,
}

impl ShardMap {
    /// Validates an explicit list of per-rank ranges.
    pub fn from_ranges(ranges: Vec<Range<usize>>, num_tokens: usize) -> Result<Self> {
        let map = Self { ranges, num_tokens };
        map.validate()?;
        Ok(map)
    }

    /// Builds a map without validation. Used to exercise the contract checks
    /// of the collectives.
    #[doc(hidden)]
    pub fn from_ranges_unchecked(ranges: Vec<Range<usize>>, num_tokens: usize) -> Self {
        Self { ranges, num_tokens }
    }

    /// Checks contiguity, ordering and coverage of `[0, num_tokens)`.
    pub fn validate(&self) -> Result<()> {
        let mut next = 0usize;
        for (rank, r) in self.ranges.iter().enumerate() {
            if r.start != next || r.end < r.start {
                return Err(Error::Contract(format!(
                    "shard range of rank {rank} is {}..{}, expected to start at token {next}",
                    r.start, r.end
                )));
            }
            next = r.end;
        }
        if next != self.num_tokens {
            return Err(Error::Contract(format!(
                "shard ranges cover 0..{next}, expected 0..{}",
                self.num_tokens
            )));
        }
        Ok(())
    }

    /// Per-rank token ranges in rank order.
    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    /// Range owned by `rank`.
    pub fn range(&self, rank: usize) -> Range<usize> {
        self.ranges[rank].clone()
    }

    /// Number of ranks.
    pub fn world_size(&self) -> usize {
        self.ranges.len()
    }

    /// Total tokens covered.
    pub fn num_tokens(&self) -> usize {
        self.num_tokens
    }
}

/// Splits `num_tokens` into `world_size` contiguous ranges. Every rank gets
/// `num_tokens / world_size` tokens and the first `num_tokens % world_size`
/// ranks get one more.
pub fn token_shard_map(num_tokens: usize, world_size: usize) -> Result<ShardMap> {
    if world_size < 2 {
        return Err(Error::Config(format!(
            "world size must be at least 2, got {world_size}"
        )));
    }
    let base = num_tokens / world_size;
    let extra = num_tokens % world_size;
    let mut ranges = Vec::with_capacity(world_size);
    let mut start = 0;
    for rank in 0..world_size {
        let len = base + usize::from(rank < extra);
        ranges.push(start..start + len);
        start += len;
    }
    ShardMap::from_ranges(ranges, num_tokens)
}

/// Per-rank buffers of a simulated tensor-parallel group.
#[derive(Debug, Clone, PartialEq)]
pub struct RankGroup {
    inputs: Vec<TokenMatrix>,
    residual_shards: Vec<TokenMatrix>,
}

impl RankGroup {
    /// A group with per-rank partial activations and no residual state.
    pub fn new(inputs: Vec<TokenMatrix>) -> Result<Self> {
        check_inputs(&inputs)?;
        Ok(Self {
            inputs,
            residual_shards: Vec::new(),
        })
    }

    /// A group whose residual stream `residual` is sharded across ranks per
    /// `shards`; rank `r` keeps only its own token rows.
    pub fn with_residual(
        inputs: Vec<TokenMatrix>,
        residual: &TokenMatrix,
        shards: &ShardMap,
    ) -> Result<Self> {
        check_inputs(&inputs)?;
        check_map(shards, inputs.len(), &inputs[0])?;
        if residual.shape() != inputs[0].shape() {
            return Err(Error::Dimension(format!(
                "residual {:?} vs inputs {:?}",
                residual.shape(),
                inputs[0].shape()
            )));
        }
        let residual_shards = shards
            .ranges()
            .iter()
            .map(|r| residual.slice_rows(r.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            inputs,
            residual_shards,
        })
    }

    /// Number of ranks.
    pub fn world_size(&self) -> usize {
        self.inputs.len()
    }

    /// `(num_tokens, hidden)` shared by every rank.
    pub fn shape(&self) -> (usize, usize) {
        self.inputs[0].shape()
    }

    /// Per-rank partial activations.
    pub fn inputs(&self) -> &[TokenMatrix] {
        &self.inputs
    }

    /// Per-rank residual shards (empty if the group carries no residual).
    pub fn residual_shards(&self) -> &[TokenMatrix] {
        &self.residual_shards
    }

    /// Mutable residual shards, for callers that drive ranks themselves.
    pub fn residual_shards_mut(&mut self) -> &mut [TokenMatrix] {
        &mut self.residual_shards
    }

    /// Inputs and mutable residual shards at once.
    pub fn parts_mut(&mut self) -> (&[TokenMatrix], &mut [TokenMatrix]) {
        (&self.inputs, &mut self.residual_shards)
    }

    /// Installs the next layer's partial activations, keeping the residual.
    pub fn replace_inputs(&mut self, inputs: Vec<TokenMatrix>) -> Result<()> {
        check_inputs(&inputs)?;
        if inputs.len() != self.inputs.len() || inputs[0].shape() != self.shape() {
            return Err(Error::Dimension(format!(
                "replacement inputs {}x{:?} vs group {}x{:?}",
                inputs.len(),
                inputs[0].shape(),
                self.inputs.len(),
                self.shape()
            )));
        }
        self.inputs = inputs;
        Ok(())
    }
}

fn check_inputs(inputs: &[TokenMatrix]) -> Result<()> {
    if inputs.len() < 2 {
        return Err(Error::Config(format!(
            "world size must be at least 2, got {}",
            inputs.len()
        )));
    }
    let shape = inputs[0].shape();
    for (rank, m) in inputs.iter().enumerate() {
        if m.shape() != shape {
            return Err(Error::Dimension(format!(
                "rank {rank} holds {:?}, rank 0 holds {shape:?}",
                m.shape()
            )));
        }
    }
    Ok(())
}

fn check_map(shards: &ShardMap, world_size: usize, like: &TokenMatrix) -> Result<()> {
    shards.validate()?;
    if shards.world_size() != world_size {
        return Err(Error::Contract(format!(
            "shard map has {} ranges for {world_size} ranks",
            shards.world_size()
        )));
    }
    if shards.num_tokens() != like.num_tokens() {
        return Err(Error::Contract(format!(
            "shard map covers {} tokens, tensors hold {}",
            shards.num_tokens(),
            like.num_tokens()
        )));
    }
    Ok(())
}

/// Rank-ascending sum of element `idx` across all ranks.
#[inline]
fn reduce_at(inputs: &[TokenMatrix], idx: usize) -> f32 {
    let mut acc = inputs[0].values()[idx];
    for m in &inputs[1..] {
        acc += m.values()[idx];
    }
    acc
}

fn reduce_rows(inputs: &[TokenMatrix], rows: Range<usize>, out: &mut [f32]) {
    let hidden = inputs[0].hidden();
    let base = rows.start * hidden;
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = reduce_at(inputs, base + k);
    }
}

/// Elementwise sum of every rank's input; the value every rank receives.
pub fn all_reduce(group: &RankGroup) -> Result<TokenMatrix> {
    check_inputs(&group.inputs)?;
    let (tokens, hidden) = group.shape();
    let mut out = TokenMatrix::zeros(tokens, hidden)?;
    reduce_rows(&group.inputs, 0..tokens, out.values_mut());
    Ok(out)
}

/// Rank `r` receives the reduced rows of its shard range.
pub fn reduce_scatter(group: &RankGroup, shards: &ShardMap) -> Result<Vec<TokenMatrix>> {
    check_inputs(&group.inputs)?;
    check_map(shards, group.world_size(), &group.inputs[0])?;
    let hidden = group.shape().1;
    shards
        .ranges()
        .iter()
        .map(|r| {
            let mut shard = TokenMatrix::zeros(r.len(), hidden)?;
            reduce_rows(&group.inputs, r.clone(), shard.values_mut());
            Ok(shard)
        })
        .collect()
}

/// Concatenates per-rank shards in token order.
pub fn all_gather(shards: &[TokenMatrix], map: &ShardMap) -> Result<TokenMatrix> {
    map.validate()?;
    if shards.len() != map.world_size() {
        return Err(Error::Dimension(format!(
            "{} shards for a {}-rank map",
            shards.len(),
            map.world_size()
        )));
    }
    let hidden = shards
        .first()
        .map(TokenMatrix::hidden)
        .ok_or_else(|| Error::Dimension("no shards to gather".into()))?;
    let mut values = Vec::with_capacity(map.num_tokens() * hidden);
    for (rank, (shard, range)) in shards.iter().zip(map.ranges()).enumerate() {
        if shard.num_tokens() != range.len() || shard.hidden() != hidden {
            return Err(Error::Dimension(format!(
                "rank {rank} shard is {:?}, map expects ({}, {hidden})",
                shard.shape(),
                range.len()
            )));
        }
        values.extend_from_slice(shard.values());
    }
    TokenMatrix::new(map.num_tokens(), hidden, values)
}

/// Work of one rank inside the fused AllReduce-RMSNorm: reduce the owned
/// rows, add the residual shard, normalize, overwrite the residual shard with
/// the pre-norm sum and write normalized rows into `out_rows`.
///
/// `out_rows` must hold exactly `range.len() * hidden` values. Ranks touch
/// disjoint rows, so callers may run them concurrently.
pub fn fused_rank_step(
    inputs: &[TokenMatrix],
    range: Range<usize>,
    residual_shard: &mut TokenMatrix,
    params: &NormParams,
    out_rows: &mut [f32],
) -> Result<()> {
    let hidden = inputs[0].hidden();
    if residual_shard.shape() != (range.len(), hidden) {
        return Err(Error::Contract(format!(
            "residual shard {:?} does not match owned range {}..{}",
            residual_shard.shape(),
            range.start,
            range.end
        )));
    }
    if out_rows.len() != range.len() * hidden {
        return Err(Error::Dimension(format!(
            "output slice of {} values for {} rows",
            out_rows.len(),
            range.len()
        )));
    }
    let mut reduced = alloc::vec![0.0f32; hidden];
    let mut next_residual = alloc::vec![0.0f32; hidden];
    for (local, token) in range.enumerate() {
        reduce_rows(inputs, token..token + 1, &mut reduced);
        if let Some(index) = reduced.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "reduced input",
                token,
                index,
            });
        }
        let row = &mut out_rows[local * hidden..(local + 1) * hidden];
        normalize_token(
            &reduced,
            residual_shard.row(local),
            params,
            row,
            &mut next_residual,
        );
        residual_shard
            .row_mut(local)
            .copy_from_slice(&next_residual);
    }
    Ok(())
}

/// Checks that a group, norm weights and shard map can be fused together.
pub fn check_fused_contract(
    group: &RankGroup,
    params: &NormParams,
    shards: &ShardMap,
) -> Result<()> {
    check_inputs(&group.inputs)?;
    check_map(shards, group.world_size(), &group.inputs[0])?;
    let hidden = group.shape().1;
    if params.hidden() != hidden {
        return Err(Error::Dimension(format!(
            "norm weight of length {} for hidden size {hidden}",
            params.hidden()
        )));
    }
    if group.residual_shards.len() != group.world_size() {
        return Err(Error::Contract(format!(
            "{} residual shards for {} ranks",
            group.residual_shards.len(),
            group.world_size()
        )));
    }
    for (rank, (shard, range)) in group
        .residual_shards
        .iter()
        .zip(shards.ranges())
        .enumerate()
    {
        if shard.shape() != (range.len(), hidden) {
            return Err(Error::Contract(format!(
                "rank {rank} residual shard {:?} does not match owned range {}..{}",
                shard.shape(),
                range.start,
                range.end
            )));
        }
        if let Some((t, index)) = shard.first_non_finite() {
            return Err(Error::NonFinite {
                what: "residual",
                token: range.start + t,
                index,
            });
        }
    }
    Ok(())
}

/// Fused AllReduce + residual-add + RMSNorm.
///
/// Semantically `rmsnorm_residual(all_reduce(inputs), residual)`, executed
/// the way the fused kernel does it: each rank reduces only its owned token
/// rows, normalizes them, overwrites its residual shard with the pre-norm sum
/// and contributes its normalized rows to the replicated output. Ranks run
/// sequentially in rank order.
pub fn fused_allreduce_rmsnorm(
    group: &mut RankGroup,
    params: &NormParams,
    shards: &ShardMap,
) -> Result<TokenMatrix> {
    check_fused_contract(group, params, shards)?;
    let (tokens, hidden) = group.shape();
    let mut output = TokenMatrix::zeros(tokens, hidden)?;
    let out = output.values_mut();
    for (rank, range) in shards.ranges().iter().enumerate() {
        fused_rank_step(
            &group.inputs,
            range.clone(),
            &mut group.residual_shards[rank],
            params,
            &mut out[range.start * hidden..range.end * hidden],
        )?;
    }
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rmsnorm_residual;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_group(seed: u64, n: usize, t: usize, h: usize) -> (Vec<TokenMatrix>, TokenMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = || TokenMatrix::from_fn(t, h, |_, _| rng.random_range(-1.0f32..1.0)).unwrap();
        let inputs = (0..n).map(|_| m()).collect();
        (inputs, m())
    }

    #[test]
    fn shard_map_even_split() {
        let m = token_shard_map(8, 4).unwrap();
        assert_eq!(m.ranges(), &[0..2, 2..4, 4..6, 6..8]);
    }

    #[test]
    fn shard_map_remainder_goes_to_low_ranks() {
        let m = token_shard_map(10, 4).unwrap();
        assert_eq!(m.ranges(), &[0..3, 3..6, 6..8, 8..10]);
    }

    #[test]
    fn shard_map_fewer_tokens_than_ranks() {
        let m = token_shard_map(3, 8).unwrap();
        assert_eq!(m.ranges()[..3], [0..1, 1..2, 2..3]);
        assert!(m.ranges()[3..].iter().all(|r| r.is_empty() && r.start == 3));
    }

    #[test]
    fn shard_map_rejects_single_rank() {
        assert!(matches!(token_shard_map(8, 1), Err(Error::Config(_))));
    }

    #[test]
    fn shard_map_validation() {
        assert!(ShardMap::from_ranges(vec![0..2, 3..4], 4).is_err());
        assert!(ShardMap::from_ranges(vec![0..2, 2..3], 4).is_err());
        assert!(ShardMap::from_ranges(vec![0..2, 2..4], 4).is_ok());
    }

    #[test]
    fn all_reduce_of_identical_ones() {
        let g = RankGroup::new(vec![TokenMatrix::filled(3, 5, 1.0).unwrap(); 4]).unwrap();
        let s = all_reduce(&g).unwrap();
        assert!(s.values().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn all_reduce_of_rank_constants() {
        let inputs = (0..4)
            .map(|r| TokenMatrix::filled(2, 3, r as f32).unwrap())
            .collect();
        let s = all_reduce(&RankGroup::new(inputs).unwrap()).unwrap();
        assert!(s.values().iter().all(|&v| v == 6.0));
    }

    #[test]
    fn all_reduce_matches_scalar_sum() {
        let (inputs, _) = random_group(11, 8, 32, 64);
        let g = RankGroup::new(inputs.clone()).unwrap();
        let s = all_reduce(&g).unwrap();
        for idx in 0..32 * 64 {
            let mut acc = 0.0f64;
            for m in &inputs {
                acc += m.values()[idx] as f64;
            }
            assert!((s.values()[idx] as f64 - acc).abs() <= 1e-6);
        }
    }

    #[test]
    fn mismatched_rank_shapes_are_rejected() {
        let err = RankGroup::new(vec![
            TokenMatrix::zeros(2, 2).unwrap(),
            TokenMatrix::zeros(3, 2).unwrap(),
        ]);
        assert!(matches!(err, Err(Error::Dimension(_))));
        assert!(matches!(
            RankGroup::new(vec![TokenMatrix::zeros(2, 2).unwrap()]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn reduce_scatter_small_case() {
        let g = RankGroup::new(vec![TokenMatrix::filled(2, 2, 1.0).unwrap(); 2]).unwrap();
        let map = token_shard_map(2, 2).unwrap();
        let parts = reduce_scatter(&g, &map).unwrap();
        assert_eq!(parts[0].values(), &[2.0, 2.0]);
        assert_eq!(parts[1].values(), &[2.0, 2.0]);
        assert_eq!(parts[0].num_tokens(), 1);
    }

    #[test]
    fn reduce_scatter_is_row_slice_of_sum() {
        let (inputs, _) = random_group(5, 4, 13, 8);
        let g = RankGroup::new(inputs).unwrap();
        let map = token_shard_map(13, 4).unwrap();
        let sum = all_reduce(&g).unwrap();
        for (part, r) in reduce_scatter(&g, &map).unwrap().iter().zip(map.ranges()) {
            assert_eq!(part, &sum.slice_rows(r.clone()).unwrap());
        }
    }

    #[test]
    fn gather_of_scatter_is_all_reduce() {
        for (n, t) in [(2, 1), (4, 17), (8, 3), (8, 256)] {
            let (inputs, _) = random_group(n as u64 * 31 + t as u64, n, t, 16);
            let g = RankGroup::new(inputs).unwrap();
            let map = token_shard_map(t, n).unwrap();
            let gathered = all_gather(&reduce_scatter(&g, &map).unwrap(), &map).unwrap();
            assert_eq!(gathered, all_reduce(&g).unwrap());
        }
    }

    #[test]
    fn all_gather_simple_cases() {
        let a = TokenMatrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        let b = TokenMatrix::new(1, 2, vec![3.0, 4.0]).unwrap();
        let map = token_shard_map(2, 2).unwrap();
        let g = all_gather(&[a.clone(), b], &map).unwrap();
        assert_eq!(g.values(), &[1.0, 2.0, 3.0, 4.0]);

        // One rank owning everything is the identity.
        let whole = TokenMatrix::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let empty = TokenMatrix::zeros(0, 2).unwrap();
        let map = ShardMap::from_ranges(vec![0..3, 3..3], 3).unwrap();
        assert_eq!(all_gather(&[whole.clone(), empty], &map).unwrap(), whole);

        // Wrong shard size.
        assert!(all_gather(
            &[a.clone(), a],
            &ShardMap::from_ranges(vec![0..1, 1..3], 3).unwrap()
        )
        .is_err());
    }

    #[test]
    fn fused_symmetric_hand_case() {
        let inputs = vec![TokenMatrix::filled(2, 2, 1.0).unwrap(); 2];
        let residual = TokenMatrix::zeros(2, 2).unwrap();
        let map = token_shard_map(2, 2).unwrap();
        let mut g = RankGroup::with_residual(inputs, &residual, &map).unwrap();
        let params = NormParams::new(vec![1.0, 1.0], 0.0).unwrap();
        let out = fused_allreduce_rmsnorm(&mut g, &params, &map).unwrap();
        assert!(out.values().iter().all(|&v| v == 1.0));
        for shard in g.residual_shards() {
            assert!(shard.values().iter().all(|&v| v == 2.0));
        }
    }

    #[test]
    fn fused_zero_case() {
        let inputs = vec![TokenMatrix::zeros(3, 4).unwrap(); 4];
        let residual = TokenMatrix::zeros(3, 4).unwrap();
        let map = token_shard_map(3, 4).unwrap();
        let mut g = RankGroup::with_residual(inputs, &residual, &map).unwrap();
        let out = fused_allreduce_rmsnorm(&mut g, &NormParams::ones(4).unwrap(), &map).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
        assert!(g
            .residual_shards()
            .iter()
            .all(|s| s.values().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn fused_matches_pipeline_oracle() {
        for (n, t, h) in [(2, 1, 16), (4, 3, 64), (8, 17, 16), (4, 256, 64)] {
            let (inputs, residual) = random_group((n * t * h) as u64, n, t, h);
            let params =
                NormParams::new((0..h).map(|j| 0.5 + j as f32 / h as f32).collect(), 1e-5).unwrap();
            let map = token_shard_map(t, n).unwrap();
            let mut g = RankGroup::with_residual(inputs.clone(), &residual, &map).unwrap();
            let fused = fused_allreduce_rmsnorm(&mut g, &params, &map).unwrap();

            let sum = all_reduce(&RankGroup::new(inputs).unwrap()).unwrap();
            let (expected, expected_res) = rmsnorm_residual(&sum, &residual, &params).unwrap();
            let max_err = fused
                .values()
                .iter()
                .zip(expected.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            assert!(max_err <= 1e-5);
            let gathered_res = all_gather(g.residual_shards(), &map).unwrap();
            assert_eq!(gathered_res, expected_res);
        }
    }

    #[test]
    fn consecutive_fused_calls_use_only_owned_rows() {
        let (n, t, h) = (4, 10, 8);
        let (first, residual) = random_group(99, n, t, h);
        let (second, _) = random_group(100, n, t, h);
        let params = NormParams::ones(h).unwrap();
        let map = token_shard_map(t, n).unwrap();

        let mut g = RankGroup::with_residual(first.clone(), &residual, &map).unwrap();
        fused_allreduce_rmsnorm(&mut g, &params, &map).unwrap();
        g.replace_inputs(second.clone()).unwrap();
        let out2 = fused_allreduce_rmsnorm(&mut g, &params, &map).unwrap();

        let s1 = all_reduce(&RankGroup::new(first).unwrap()).unwrap();
        let (_, r1) = rmsnorm_residual(&s1, &residual, &params).unwrap();
        let s2 = all_reduce(&RankGroup::new(second).unwrap()).unwrap();
        let (o2, r2) = rmsnorm_residual(&s2, &r1, &params).unwrap();
        assert_eq!(out2, o2);
        assert_eq!(all_gather(g.residual_shards(), &map).unwrap(), r2);
        // Each rank's residual buffer never grew beyond its own rows.
        for (shard, range) in g.residual_shards().iter().zip(map.ranges()) {
            assert_eq!(shard.num_tokens(), range.len());
        }
    }

    #[test]
    fn fused_is_deterministic() {
        let (inputs, residual) = random_group(3, 8, 33, 64);
        let params = NormParams::ones(64).unwrap();
        let map = token_shard_map(33, 8).unwrap();
        let run = || {
            let mut g = RankGroup::with_residual(inputs.clone(), &residual, &map).unwrap();
            let out = fused_allreduce_rmsnorm(&mut g, &params, &map).unwrap();
            (out, g)
        };
        let (a, ga) = run();
        let (b, gb) = run();
        assert_eq!(
            a.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(ga, gb);
    }

    #[test]
    fn fused_rejects_corrupted_shard_map() {
        let (inputs, residual) = random_group(1, 4, 8, 4);
        let map = token_shard_map(8, 4).unwrap();
        let mut g = RankGroup::with_residual(inputs, &residual, &map).unwrap();
        let bad = ShardMap::from_ranges_unchecked(vec![0..2, 3..4, 4..6, 6..8], 8);
        let err = fused_allreduce_rmsnorm(&mut g, &NormParams::ones(4).unwrap(), &bad);
        assert!(matches!(err, Err(Error::Contract(_))));
        // A valid map that disagrees with the stored shards is also a contract error.
        let other = ShardMap::from_ranges(vec![0..1, 1..4, 4..6, 6..8], 8).unwrap();
        let err = fused_allreduce_rmsnorm(&mut g, &NormParams::ones(4).unwrap(), &other);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn fused_with_empty_shards() {
        let (inputs, residual) = random_group(8, 8, 3, 16);
        let map = token_shard_map(3, 8).unwrap();
        let params = NormParams::ones(16).unwrap();
        let mut g = RankGroup::with_residual(inputs.clone(), &residual, &map).unwrap();
        let out = fused_allreduce_rmsnorm(&mut g, &params, &map).unwrap();
        let sum = all_reduce(&RankGroup::new(inputs).unwrap()).unwrap();
        let (expected, _) = rmsnorm_residual(&sum, &residual, &params).unwrap();
        assert_eq!(out, expected);
    }
}
