//! Seeded synthetic traces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use tpweave_core::workloads::{synth_trace, Request};

/// A synthetic trace description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SyntheticTrace {
    /// Identical requests.
    Fixed {
        /// Requests.
        count: usize,
        /// Prompt length.
        prompt_tokens: usize,
        /// Output length.
        output_tokens: usize,
    },
    /// Log-normal prompt and output lengths shaped like chat traffic.
    Sharegpt {
        /// Requests.
        count: usize,
    },
}

/// Median prompt length of the chat-like trace.
pub const SHAREGPT_PROMPT_MEDIAN: f64 = 300.0;
/// Median output length of the chat-like trace.
pub const SHAREGPT_OUTPUT_MEDIAN: f64 = 200.0;
/// Log-space standard deviation of both lengths.
pub const SHAREGPT_SIGMA: f64 = 1.0;

impl SyntheticTrace {
    /// Label used in reports.
    pub fn label(&self) -> String {
        match self {
            SyntheticTrace::Fixed {
                prompt_tokens,
                output_tokens,
                ..
            } => {
                format!("fixed-{prompt_tokens}x{output_tokens}")
            }
            SyntheticTrace::Sharegpt { .. } => "sharegpt-like".into(),
        }
    }

    /// Generates the requests; `seed` only matters for random traces.
    pub fn generate(&self, seed: u64) -> Vec<Request> {
        match *self {
            SyntheticTrace::Fixed {
                count,
                prompt_tokens,
                output_tokens,
            } => synth_trace(count, prompt_tokens, output_tokens),
            SyntheticTrace::Sharegpt { count } => sharegpt_like(count, seed),
        }
    }
}

/// Chat-like trace: prompt lengths clamped to [4, 8192] and output lengths
/// to [1, 2048], both log-normal around the medians above.
pub fn sharegpt_like(count: usize, seed: u64) -> Vec<Request> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prompt = LogNormal::new(SHAREGPT_PROMPT_MEDIAN.ln(), SHAREGPT_SIGMA).expect("valid sigma");
    let output = LogNormal::new(SHAREGPT_OUTPUT_MEDIAN.ln(), SHAREGPT_SIGMA).expect("valid sigma");
    (0..count)
        .map(|id| {
            let p: f64 = prompt.sample(&mut rng);
            let o: f64 = output.sample(&mut rng);
            Request {
                id,
                prompt_tokens: (p.round() as usize).clamp(4, 8192),
                output_tokens: (o.round() as usize).clamp(1, 2048),
                arrival: 0.0,
            }
        })
        .collect()
}
