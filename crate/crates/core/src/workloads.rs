//! Requests, chunked-prefill batch formation and throughput simulation.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LayerSpec;
use crate::scheduler::{iteration_latency, BatchShape, IterationOptions};
use crate::wavemodel::{AttentionSegment, HardwareProfile};

/// Default cap on requests in flight.
pub const DEFAULT_MAX_ACTIVE: usize = 256;

/// One inference request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    /// Position in the trace.
    pub id: usize,
    /// Prompt length.
    pub prompt_tokens: usize,
    /// Tokens to generate.
    pub output_tokens: usize,
    /// Arrival time, seconds.
    pub arrival: f64,
}

impl Request {
    /// Checks lengths and arrival.
    pub fn validate(&self) -> Result<()> {
        if self.prompt_tokens == 0 {
            return Err(Error::Config(format!(
                "request {}: prompt_tokens must be at least 1",
                self.id
            )));
        }
        if !(self.arrival.is_finite() && self.arrival >= 0.0) {
            return Err(Error::Config(format!(
                "request {}: arrival {} must be finite and non-negative",
                self.id, self.arrival
            )));
        }
        Ok(())
    }
}

/// `count` identical requests arriving at time 0.
pub fn synth_trace(count: usize, prompt_len: usize, output_len: usize) -> Vec<Request> {
    (0..count)
        .map(|id| Request {
            id,
            prompt_tokens: prompt_len,
            output_tokens: output_len,
            arrival: 0.0,
        })
        .collect()
}

/// Prefill tokens `[start, start + len)` of one request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefillSlice {
    /// Request id.
    pub request: usize,
    /// First prompt position.
    pub start: usize,
    /// Tokens.
    pub len: usize,
}

/// One decode token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeSlot {
    /// Request id.
    pub request: usize,
    /// Tokens already in the KV cache.
    pub context: usize,
}

/// Tokens of one iteration.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IterationBatch {
    /// Prefill chunks.
    pub prefill_token_slices: Vec<PrefillSlice>,
    /// Decode tokens with their contexts.
    pub decodes: Vec<DecodeSlot>,
    /// `decodes.len()`.
    pub decode_token_count: usize,
    /// Prefill plus decode tokens.
    pub total_tokens: usize,
}

impl IterationBatch {
    /// Attention shape: decodes first, then prefill chunks.
    pub fn shape(&self) -> BatchShape {
        let mut segments: Vec<AttentionSegment> = self
            .decodes
            .iter()
            .map(|d| AttentionSegment {
                tokens: 1,
                context: d.context,
            })
            .collect();
        segments.extend(self.prefill_token_slices.iter().map(|s| AttentionSegment {
            tokens: s.len,
            context: s.start,
        }));
        BatchShape::new(segments, self.prefill_token_slices.is_empty())
    }
}

/// What the batch former does next.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    /// Run this batch.
    Run(IterationBatch),
    /// Nothing runnable before this arrival time.
    Idle(f64),
    /// Every request finished.
    Done,
}

#[derive(Debug, Clone)]
struct Progress {
    prefilled: usize,
    generated: usize,
}

/// FCFS chunked-prefill batch former with decode-first packing.
///
/// Each iteration first gives one token to every decoding request (in
/// admission order, up to the chunk budget), then fills the remaining budget
/// with prefill chunks of admitted requests in arrival order. A request
/// decodes `output_tokens` times after its last prefill chunk and then
/// leaves. At most `max_active` requests are in flight.
#[derive(Debug, Clone)]
pub struct BatchFormer {
    requests: Vec<Request>,
    progress: Vec<Progress>,
    chunk_size: usize,
    max_active: usize,
    next_arrival: usize,
    active: VecDeque<usize>,
}

impl BatchFormer {
    /// Former over `requests`, which are processed in arrival order (stable
    /// for equal times).
    pub fn new(requests: &[Request], chunk_size: usize, max_active: usize) -> Result<Self> {
        if chunk_size == 0 {
            return Err(Error::Config("chunk_size must be at least 1".into()));
        }
        if max_active == 0 {
            return Err(Error::Config("max_active must be at least 1".into()));
        }
        for r in requests {
            r.validate()?;
        }
        let mut requests = requests.to_vec();
        requests.sort_by(|a, b| a.arrival.total_cmp(&b.arrival));
        let progress = requests
            .iter()
            .map(|_| Progress {
                prefilled: 0,
                generated: 0,
            })
            .collect();
        Ok(Self {
            requests,
            progress,
            chunk_size,
            max_active,
            next_arrival: 0,
            active: VecDeque::new(),
        })
    }

    /// Next iteration at time `now`.
    pub fn next_step(&mut self, now: f64) -> Step {
        while self.next_arrival < self.requests.len()
            && self.active.len() < self.max_active
            && self.requests[self.next_arrival].arrival <= now
        {
            self.active.push_back(self.next_arrival);
            self.next_arrival += 1;
        }
        if self.active.is_empty() {
            return match self.requests.get(self.next_arrival) {
                Some(r) => Step::Idle(r.arrival),
                None => Step::Done,
            };
        }
        let mut batch = IterationBatch::default();
        let mut budget = self.chunk_size;
        // (request index, prefill tokens; 0 for a decode)
        let mut picked = Vec::new();
        for &i in &self.active {
            if budget == 0 {
                break;
            }
            let (r, p) = (&self.requests[i], &self.progress[i]);
            if p.prefilled == r.prompt_tokens && p.generated < r.output_tokens {
                batch.decodes.push(DecodeSlot {
                    request: r.id,
                    context: r.prompt_tokens + p.generated,
                });
                picked.push((i, 0));
                budget -= 1;
            }
        }
        for &i in &self.active {
            if budget == 0 {
                break;
            }
            let (r, p) = (&self.requests[i], &self.progress[i]);
            if p.prefilled < r.prompt_tokens {
                let len = (r.prompt_tokens - p.prefilled).min(budget);
                batch.prefill_token_slices.push(PrefillSlice {
                    request: r.id,
                    start: p.prefilled,
                    len,
                });
                picked.push((i, len));
                budget -= len;
            }
        }
        batch.decode_token_count = batch.decodes.len();
        batch.total_tokens = self.chunk_size - budget;
        for (i, len) in picked {
            match len {
                0 => self.progress[i].generated += 1,
                n => self.progress[i].prefilled += n,
            }
        }
        let (reqs, prog) = (&self.requests, &self.progress);
        self.active.retain(|&i| {
            prog[i].prefilled < reqs[i].prompt_tokens || prog[i].generated < reqs[i].output_tokens
        });
        Step::Run(batch)
    }
}

/// All batches of a trace, ignoring arrival times.
pub fn form_batches(
    requests: &[Request],
    chunk_size: usize,
    max_active: usize,
) -> Result<Vec<IterationBatch>> {
    let mut former = BatchFormer::new(requests, chunk_size, max_active)?;
    let mut out = Vec::new();
    loop {
        match former.next_step(f64::INFINITY) {
            Step::Run(b) => out.push(b),
            Step::Idle(_) => unreachable!("all requests have arrived at infinity"),
            Step::Done => return Ok(out),
        }
    }
}

/// Outcome of [`simulate_throughput`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    /// Prompt plus output tokens processed.
    pub total_tokens: usize,
    /// Prefill tokens processed.
    pub prefill_tokens: usize,
    /// Decode tokens processed.
    pub decode_tokens: usize,
    /// Iterations run.
    pub iterations: usize,
    /// Simulated seconds, idle gaps included.
    pub total_time: f64,
    /// `total_tokens / total_time`.
    pub tokens_per_second: f64,
    /// Mean of `iteration_latencies`.
    pub mean_iteration_latency: f64,
    /// Latency of every iteration, seconds.
    pub iteration_latencies: Vec<f64>,
}

/// Runs a trace through the batch former and the iteration model.
pub fn simulate_throughput(
    trace: &[Request],
    spec: &LayerSpec,
    profile: &HardwareProfile,
    options: &IterationOptions,
    chunk_size: usize,
    max_active: usize,
) -> Result<ThroughputReport> {
    let mut former = BatchFormer::new(trace, chunk_size, max_active)?;
    let (mut now, mut prefill, mut decode) = (0.0f64, 0usize, 0usize);
    let mut latencies = Vec::new();
    loop {
        match former.next_step(now) {
            Step::Run(batch) => {
                let lat = iteration_latency(&batch.shape(), spec, profile, options)?;
                prefill += batch.total_tokens - batch.decode_token_count;
                decode += batch.decode_token_count;
                latencies.push(lat);
                now += lat;
            }
            Step::Idle(t) => now = now.max(t),
            Step::Done => break,
        }
    }
    let expected: usize = trace
        .iter()
        .map(|r| r.prompt_tokens + r.output_tokens)
        .sum();
    let total = prefill + decode;
    if total != expected {
        return Err(Error::Contract(format!(
            "token conservation violated: batched {total}, trace holds {expected}"
        )));
    }
    let n = latencies.len();
    Ok(ThroughputReport {
        total_tokens: total,
        prefill_tokens: prefill,
        decode_tokens: decode,
        iterations: n,
        total_time: now,
        tokens_per_second: if now > 0.0 { total as f64 / now } else { 0.0 },
        mean_iteration_latency: if n > 0 {
            latencies.iter().sum::<f64>() / n as f64
        } else {
            0.0
        },
        iteration_latencies: latencies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn synth_examples() {
        let t = synth_trace(128, 2048, 128);
        assert_eq!(t.len(), 128);
        assert!(t
            .iter()
            .all(|r| r.prompt_tokens == 2048 && r.output_tokens == 128));
        assert_eq!(synth_trace(1, 1, 0).len(), 1);
        assert!(synth_trace(0, 5, 5).is_empty());
    }

    #[test]
    fn long_prompt_chunks() {
        let b = form_batches(&synth_trace(1, 4096, 0), 2048, 256).unwrap();
        assert_eq!(b.len(), 2);
        assert!(b
            .iter()
            .all(|x| x.total_tokens == 2048 && x.decode_token_count == 0));
        assert_eq!(b[1].prefill_token_slices[0].start, 2048);
    }

    #[test]
    fn prefill_then_decodes() {
        let b = form_batches(&synth_trace(1, 100, 3), 2048, 256).unwrap();
        assert_eq!(b.len(), 4);
        assert_eq!(b[0].total_tokens, 100);
        for (i, x) in b[1..].iter().enumerate() {
            assert_eq!(x.total_tokens, 1);
            assert_eq!(x.decodes[0].context, 100 + i);
            assert!(x.shape().decode_only);
        }
    }

    #[test]
    fn decodes_take_priority() {
        let reqs = synth_trace(3, 10, 5);
        let b = form_batches(&reqs, 12, 256).unwrap();
        // first batch: 10 + 2 of the second prompt
        assert_eq!(b[0].prefill_token_slices.len(), 2);
        // second batch: one decode, then prefill
        assert_eq!(b[1].decode_token_count, 1);
        assert_eq!(b[1].prefill_token_slices[0].request, 1);
    }

    #[test]
    fn idle_until_arrival() {
        let reqs = [Request {
            id: 0,
            prompt_tokens: 4,
            output_tokens: 0,
            arrival: 2.5,
        }];
        let mut f = BatchFormer::new(&reqs, 8, 4).unwrap();
        assert_eq!(f.next_step(0.0), Step::Idle(2.5));
        assert!(matches!(f.next_step(2.5), Step::Run(_)));
        assert_eq!(f.next_step(3.0), Step::Done);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(BatchFormer::new(&synth_trace(1, 4, 1), 0, 4).is_err());
        assert!(BatchFormer::new(&synth_trace(1, 0, 1), 8, 4).is_err());
    }

    proptest! {
        #[test]
        fn conservation_and_bounds(
            lens in proptest::collection::vec((1usize..300, 0usize..20), 0..30),
            chunk in 1usize..600,
            cap in 1usize..8,
        ) {
            let reqs: Vec<Request> = lens.iter().enumerate()
                .map(|(id, &(p, o))| Request { id, prompt_tokens: p, output_tokens: o, arrival: 0.0 })
                .collect();
            let batches = form_batches(&reqs, chunk, cap).unwrap();
            let total: usize = batches.iter().map(|b| b.total_tokens).sum();
            prop_assert_eq!(total, lens.iter().map(|(p, o)| p + o).sum::<usize>());
            let mut started = vec![false; reqs.len()];
            for b in &batches {
                prop_assert!(b.total_tokens <= chunk);
                let pre: usize = b.prefill_token_slices.iter().map(|s| s.len).sum();
                prop_assert_eq!(b.total_tokens, pre + b.decode_token_count);
                for s in &b.prefill_token_slices {
                    // FCFS: every earlier request has begun prefill
                    prop_assert!(started[..s.request].iter().all(|&x| x));
                    started[s.request] = true;
                }
            }
        }
    }
}
