//! File formats, run configuration, parallel rank execution and the report
//! generators behind the `tpweave` command-line tool.
//!
//! The models themselves live in [`tpweave_core`]; this crate adds what needs
//! `std`: files, threads, CSV and JSON.

#![deny(missing_docs)]

pub mod config;
pub mod error;
pub mod formats;
pub mod parallel;
pub mod reports;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
pub use tpweave_core as core;
