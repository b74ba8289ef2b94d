//! Reference semantics and cost modeling for overlapped tensor-parallel
//! inference.
//!
//! The crate is `no_std` (it needs `alloc`) and holds everything that is pure
//! computation:
//!
//! * [`numerics`]: single-precision fused residual-add + RMSNorm.
//! * [`collectives`]: simulated N-rank AllReduce / ReduceScatter / AllGather
//!   and the fused AllReduce-RMSNorm operator.
//! * [`wavemodel`]: analytic GPU cost model (CTAs, waves, memory-bound
//!   kernels, collectives) and its least-squares calibration.
//! * [`splitter`]: two-way token splitting and the selective-enable policy.
//! * [`scheduler`]: two-stream event simulation of one forward iteration.
//! * [`workloads`]: chunked-prefill batch formation and throughput runs.
//!
//! File formats, the CLI and threaded rank execution live in the `tpweave`
//! crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![deny(missing_docs)]

extern crate alloc;

pub mod collectives;
pub mod error;
pub mod model;
pub mod numerics;
pub mod scheduler;
pub mod splitter;
pub mod wavemodel;
pub mod workloads;

pub use error::{Error, Result};
pub use model::LayerSpec;
pub use numerics::{NormParams, TokenMatrix};
