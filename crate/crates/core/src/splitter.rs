//! Two-way token splitting: the selective-enable threshold, the wave-aware
//! prefix size, and where sequences straddle the split.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LayerSpec;
use crate::wavemodel::{wave_count, HardwareProfile};

/// How a batch runs through the layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplitMode {
    /// Whole batch, no fused kernel (baselines).
    NoSplit,
    /// Whole batch with the fused AllReduce-RMSNorm.
    FusedOnly,
    /// Prefix and suffix splits overlapped on two streams.
    Overlap,
}

/// Threshold and offset grid of the split policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPolicy {
    /// Smallest batch that is split and overlapped.
    pub threshold_tokens: usize,
    /// Offsets tried by [`smart_offset_sweep`], ascending.
    #[serde(default = "default_grid")]
    pub offset_grid: Vec<usize>,
}

fn default_grid() -> Vec<usize> {
    vec![0, 64, 128, 192, 256, 512]
}

impl SplitPolicy {
    /// Dense models: split from 1K tokens.
    pub fn dense() -> Self {
        Self {
            threshold_tokens: 1024,
            offset_grid: default_grid(),
        }
    }

    /// MoE models: split from 4K tokens.
    pub fn moe() -> Self {
        Self {
            threshold_tokens: 4096,
            ..Self::dense()
        }
    }

    /// The default policy for a layer shape.
    pub fn for_spec(spec: &LayerSpec) -> Self {
        if spec.is_moe() {
            Self::moe()
        } else {
            Self::dense()
        }
    }

    /// Checks threshold and grid order.
    pub fn validate(&self) -> Result<()> {
        if self.threshold_tokens == 0 {
            return Err(Error::Config("threshold_tokens must be at least 1".into()));
        }
        if self.offset_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "offset_grid must be strictly ascending, got {:?}",
                self.offset_grid
            )));
        }
        Ok(())
    }
}

/// The two-way split of one batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    /// T.
    pub total_tokens: usize,
    /// Tokens in the prefix split.
    pub prefix_tokens: usize,
    /// Tokens in the suffix split.
    pub suffix_tokens: usize,
    /// `prefix_tokens - ceil(T / 2)`.
    pub offset: i64,
    /// Execution mode.
    pub mode: SplitMode,
    /// For each sequence of the batch, how many of its tokens are in the
    /// prefix split. Empty until [`place_sequence_boundaries`] runs.
    pub partial_sequence_boundaries: Vec<usize>,
}

impl SplitPlan {
    /// Plan with the given prefix size. `prefix_tokens` is clamped to T.
    pub fn new(total_tokens: usize, prefix_tokens: usize, mode: SplitMode) -> Self {
        let prefix_tokens = prefix_tokens.min(total_tokens);
        Self {
            total_tokens,
            prefix_tokens,
            suffix_tokens: total_tokens - prefix_tokens,
            offset: prefix_tokens as i64 - total_tokens.div_ceil(2) as i64,
            mode,
            partial_sequence_boundaries: Vec::new(),
        }
    }

    /// Unsplit plan.
    pub fn whole(total_tokens: usize, mode: SplitMode) -> Self {
        Self::new(total_tokens, total_tokens, mode)
    }

    /// Equal split, the prefix taking the odd token.
    pub fn equal(total_tokens: usize) -> Self {
        Self::new(total_tokens, total_tokens.div_ceil(2), SplitMode::Overlap)
    }

    /// Split at `ceil(T / 2) + offset`.
    pub fn with_offset(total_tokens: usize, offset: i64) -> Self {
        let prefix = (total_tokens.div_ceil(2) as i64 + offset).clamp(0, total_tokens as i64);
        Self::new(total_tokens, prefix as usize, SplitMode::Overlap)
    }

    /// True when both splits hold tokens.
    pub fn is_split(&self) -> bool {
        self.prefix_tokens > 0 && self.suffix_tokens > 0
    }

    /// The sequence cut by the split: `(index, tokens in prefix, tokens in
    /// suffix)`.
    pub fn straddler(&self, lengths: &[usize]) -> Option<(usize, usize, usize)> {
        self.partial_sequence_boundaries
            .iter()
            .zip(lengths)
            .enumerate()
            .find(|(_, (p, l))| **p > 0 && **p < **l)
            .map(|(i, (p, l))| (i, *p, l - p))
    }
}

/// Overlap at or above the threshold, fused-only below it.
pub fn select_mode(num_tokens: usize, policy: &SplitPolicy) -> SplitMode {
    if num_tokens >= policy.threshold_tokens {
        SplitMode::Overlap
    } else {
        SplitMode::FusedOnly
    }
}

/// A GEMM family that is run once per split: column tiles and a weight for
/// the wave cost (usually the wave duration).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveTerm {
    /// CTAs per row tile.
    pub columns: usize,
    /// Cost of one wave.
    pub weight: f64,
}

/// Wave-aware prefix size over a set of GEMMs.
///
/// Candidates are tile-aligned prefixes that leave the suffix nonempty. The
/// winner minimizes the weighted wave total of both splits, then prefers a
/// prefix whose reference (first) GEMM ends in a full wave, then the prefix
/// closest to `ceil(T / 2)`, then the larger one. If the unsplit reference
/// GEMM is a single wave the whole batch goes to the prefix. With no
/// candidate the equal split is returned.
pub fn smart_prefix(
    num_tokens: usize,
    terms: &[WaveTerm],
    sms: usize,
    tile_tokens: usize,
) -> usize {
    let rows = num_tokens.div_ceil(tile_tokens);
    let half = num_tokens.div_ceil(2);
    let Some(reference) = terms.first() else {
        return half;
    };
    if wave_count(rows * reference.columns, sms) <= 1 {
        return num_tokens;
    }
    let cost = |r: usize| -> f64 {
        terms
            .iter()
            .map(|t| {
                let waves =
                    wave_count(r * t.columns, sms) + wave_count((rows - r) * t.columns, sms);
                waves as f64 * t.weight
            })
            .sum()
    };
    let mut best: Option<(f64, bool, usize, usize)> = None;
    for r in 1..rows {
        let prefix = r * tile_tokens;
        if prefix >= num_tokens {
            break;
        }
        let key = (
            cost(r),
            (r * reference.columns) % sms != 0,
            prefix.abs_diff(half),
            r,
        );
        let better = match best {
            None => true,
            Some(b) => {
                key.0 < b.0 - 1e-15
                    || (key.0 <= b.0 + 1e-15
                        && ((key.1, key.2) < (b.1, b.2)
                            || ((key.1, key.2) == (b.1, b.2) && key.3 > b.3)))
            }
        };
        if better {
            best = Some(key);
        }
    }
    best.map_or(half, |b| b.3 * tile_tokens)
}

/// Signed offset from `ceil(T / 2)` of the wave-aware prefix for the
/// profile's reference GEMM (`cta_columns` CTAs per row tile) on all SMs.
/// A single-wave batch returns `floor(T / 2)`: everything in the prefix.
pub fn smart_offset_analytic(num_tokens: usize, profile: &HardwareProfile) -> i64 {
    let term = WaveTerm {
        columns: profile.cta_columns,
        weight: 1.0,
    };
    let prefix = smart_prefix(num_tokens, &[term], profile.num_sms, profile.tile_tokens);
    prefix as i64 - num_tokens.div_ceil(2) as i64
}

/// Total reference-GEMM waves of a split.
pub fn split_waves(prefix: usize, suffix: usize, profile: &HardwareProfile) -> usize {
    let c = |t: usize| crate::wavemodel::cta_count(t, profile);
    wave_count(c(prefix), profile.num_sms) + wave_count(c(suffix), profile.num_sms)
}

/// Profiling sweep over the policy grid: evaluates `forward(T_a, T_b)` at
/// `T_a = ceil(T/2) + offset`, `T_b = floor(T/2) - offset` and returns the
/// fastest offset. Offsets at or above `floor(T/2)` are skipped; ties go to
/// the smaller offset; no feasible offset gives 0.
pub fn smart_offset_sweep(
    num_tokens: usize,
    policy: &SplitPolicy,
    mut forward: impl FnMut(usize, usize) -> f64,
) -> usize {
    let half = num_tokens / 2;
    let mut best: Option<(f64, usize)> = None;
    for &offset in &policy.offset_grid {
        if offset >= half {
            continue;
        }
        let time = forward(num_tokens.div_ceil(2) + offset, half - offset);
        if best.is_none_or(|(t, _)| time < t) {
            best = Some((time, offset));
        }
    }
    best.map_or(0, |(_, o)| o)
}

/// Records, for every sequence of the flattened batch, how many of its tokens
/// fall in the prefix split.
pub fn place_sequence_boundaries(lengths: &[usize], plan: &SplitPlan) -> Result<SplitPlan> {
    let total: usize = lengths.iter().sum();
    if total != plan.total_tokens {
        return Err(Error::Dimension(format!(
            "sequence lengths sum to {total}, plan has {} tokens",
            plan.total_tokens
        )));
    }
    let mut start = 0;
    let boundaries = lengths
        .iter()
        .map(|&len| {
            let in_prefix = plan.prefix_tokens.saturating_sub(start).min(len);
            start += len;
            in_prefix
        })
        .collect();
    Ok(SplitPlan {
        partial_sequence_boundaries: boundaries,
        ..plan.clone()
    })
}
