//! Run configuration file and command-line overrides.
//!
//! Every field is optional; see [`RunConfig::default`] for the values used
//! when a field is absent. Unknown fields are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tpweave_core::model::LayerSpec;
use tpweave_core::scheduler::{BaselineMode, IterationOptions, SplitStrategy};
use tpweave_core::splitter::SplitPolicy;
use tpweave_core::wavemodel::HardwareProfile;
use tpweave_core::workloads::DEFAULT_MAX_ACTIVE;

use crate::error::{read, Error, Result};
use crate::formats::load_profile;
use crate::synth::SyntheticTrace;

/// A model preset name or an explicit layer shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelChoice {
    /// One of [`LayerSpec::PRESETS`].
    Preset(String),
    /// Explicit shape.
    Custom(LayerSpec),
}

impl ModelChoice {
    /// The layer shape this choice names.
    pub fn resolve(&self) -> Result<LayerSpec> {
        let spec = match self {
            ModelChoice::Preset(name) => LayerSpec::preset(name).ok_or_else(|| {
                tpweave_core::Error::Config(format!(
                    "unknown model preset '{name}', expected one of {:?}",
                    LayerSpec::PRESETS
                ))
            })?,
            ModelChoice::Custom(spec) => spec.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Model preset or shape.
    pub model: ModelChoice,
    /// Built-in profile name, profile JSON file or calibration table file.
    pub profile: String,
    /// Split policy; the model's default when absent.
    pub policy: Option<SplitPolicy>,
    /// Prefix sizing of the overlapped schedule.
    pub split_strategy: SplitStrategy,
    /// Token budget per iteration.
    pub chunk_size: usize,
    /// Chunk sizes of the throughput command; `[chunk_size]` when absent.
    pub chunk_sizes: Option<Vec<usize>>,
    /// Mode restriction: microbench zeroes the AllReduce under `nocomm`,
    /// throughput reports only this mode. All modes when absent.
    pub mode: Option<BaselineMode>,
    /// Seed of every randomized input.
    pub seed: u64,
    /// Output file; stdout when absent.
    pub out: Option<PathBuf>,
    /// Token counts of the latency command.
    pub token_sweep: Vec<usize>,
    /// Hidden size of the microbench command; the table's when absent.
    pub hidden: Option<usize>,
    /// Trace file of the throughput command. Replaces `synthetic` when set.
    pub trace: Option<PathBuf>,
    /// Generated traces of the throughput command.
    pub synthetic: Vec<SyntheticTrace>,
    /// Concurrent request cap of the batch former.
    pub max_active_requests: usize,
    /// RMSNorm epsilon of the verify suite.
    pub epsilon: f32,
    /// Random instances per fused-collective case in verify.
    pub verify_instances: usize,
    /// Verify only world size 2 with fewer instances.
    pub verify_quick: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelChoice::Preset("llama-70b".into()),
            profile: "h100".into(),
            policy: None,
            split_strategy: SplitStrategy::Smart,
            chunk_size: 2048,
            chunk_sizes: None,
            mode: None,
            seed: 0,
            out: None,
            token_sweep: (10..=15).map(|k| 1usize << k).collect(),
            hidden: None,
            trace: None,
            synthetic: vec![
                SyntheticTrace::Fixed {
                    count: 128,
                    prompt_tokens: 2048,
                    output_tokens: 128,
                },
                SyntheticTrace::Sharegpt { count: 1000 },
            ],
            max_active_requests: DEFAULT_MAX_ACTIVE,
            epsilon: 1e-5,
            verify_instances: 50,
            verify_quick: false,
        }
    }
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    /// `--profile`.
    pub profile: Option<String>,
    /// `--mode`.
    pub mode: Option<BaselineMode>,
    /// `--chunk-size`.
    pub chunk_size: Option<usize>,
    /// `--seed`.
    pub seed: Option<u64>,
    /// `--out`.
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Parses a config document; `path` only labels errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.into(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Reads a config file.
    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read(path)?, path)
    }

    /// Applies flag values.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(p) = &o.profile {
            self.profile = p.clone();
        }
        if o.mode.is_some() {
            self.mode = o.mode;
        }
        if let Some(c) = o.chunk_size {
            self.chunk_size = c;
            self.chunk_sizes = None;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if o.out.is_some() {
            self.out = o.out.clone();
        }
    }

    /// Checks values and that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Error::Core(tpweave_core::Error::Config(m));
        self.model.resolve()?;
        self.policy()?.validate()?;
        if self.chunk_sizes().contains(&0) {
            return Err(cfg("chunk sizes must be at least 1".into()));
        }
        if self.token_sweep.contains(&0) {
            return Err(cfg("token_sweep entries must be at least 1".into()));
        }
        if self.max_active_requests == 0 {
            return Err(cfg("max_active_requests must be at least 1".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(cfg(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            )));
        }
        if let Some(t) = &self.trace {
            if !t.exists() {
                return Err(Error::Io {
                    path: t.clone(),
                    source: std::io::Error::from(std::io::ErrorKind::NotFound),
                });
            }
        }
        Ok(())
    }

    /// Resolved layer shape.
    pub fn spec(&self) -> Result<LayerSpec> {
        self.model.resolve()
    }

    /// Resolved hardware profile.
    pub fn hardware(&self) -> Result<HardwareProfile> {
        load_profile(&self.profile)
    }

    /// Policy in effect.
    pub fn policy(&self) -> Result<SplitPolicy> {
        Ok(match &self.policy {
            Some(p) => p.clone(),
            None => SplitPolicy::for_spec(&self.spec()?),
        })
    }

    /// Iteration options for one mode.
    pub fn options(&self, mode: BaselineMode) -> Result<IterationOptions> {
        Ok(IterationOptions {
            mode,
            policy: self.policy()?,
            strategy: self.split_strategy,
        })
    }

    /// Chunk sizes of the throughput command.
    pub fn chunk_sizes(&self) -> Vec<usize> {
        self.chunk_sizes
            .clone()
            .unwrap_or_else(|| vec![self.chunk_size])
    }
}
