//! Thread-per-rank execution of the fused collective.

use std::thread;

use tpweave_core::collectives::{check_fused_contract, fused_rank_step, RankGroup, ShardMap};
use tpweave_core::numerics::{NormParams, TokenMatrix};

/// [`tpweave_core::collectives::fused_allreduce_rmsnorm`] with one scoped
/// thread per rank. Every rank reads the shared inputs and writes only its
/// own output rows and residual shard, so the result is bitwise identical to
/// the sequential version.
pub fn fused_allreduce_rmsnorm_parallel(
    group: &mut RankGroup,
    params: &NormParams,
    shards: &ShardMap,
) -> tpweave_core::Result<TokenMatrix> {
    check_fused_contract(group, params, shards)?;
    let (tokens, hidden) = group.shape();
    let mut output = TokenMatrix::zeros(tokens, hidden)?;
    let (inputs, residuals) = group.parts_mut();
    let mut rest = output.values_mut();
    let mut rows = Vec::with_capacity(shards.world_size());
    for range in shards.ranges() {
        let (mine, tail) = rest.split_at_mut(range.len() * hidden);
        rows.push(mine);
        rest = tail;
    }
    thread::scope(|s| {
        let handles: Vec<_> = shards
            .ranges()
            .iter()
            .zip(residuals.iter_mut())
            .zip(rows)
            .map(|((range, residual), out)| {
                s.spawn(move || fused_rank_step(inputs, range.clone(), residual, params, out))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("rank thread panicked"))
            .collect::<tpweave_core::Result<Vec<()>>>()
    })?;
    Ok(output)
}

/// Maps `items` on scoped worker threads and returns the results in item
/// order, so output does not depend on scheduling.
pub fn ordered_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len().max(1));
    let chunk = items.len().div_ceil(threads).max(1);
    let f = &f;
    thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}
