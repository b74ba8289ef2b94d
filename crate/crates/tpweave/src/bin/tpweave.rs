use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use tpweave::config::{ModelChoice, Overrides, RunConfig};
use tpweave::core::scheduler::{BaselineMode, SplitStrategy};
use tpweave::core::wavemodel::MAX_FUSED_OVERHEAD;
use tpweave::formats::load_table;
use tpweave::reports::{self, rows_to_csv, rows_to_json};
use tpweave::verify::{run_verify, VerifyOptions};

/// Tensor-parallel inference cost model: fused collective checks, kernel
/// tables, latency sweeps, throughput simulation and calibration.
#[derive(Parser)]
#[command(name = "tpweave", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in profile name (h100, b200), profile file or calibration table file.
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Execution mode.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<BaselineMode>,
    /// Iteration token budget.
    #[arg(long, global = true)]
    chunk_size: Option<usize>,
    /// Seed of randomized inputs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Model preset (llama-70b, qwen-72b, mixtral-8x22b, qwen3-235b).
    #[arg(long, global = true)]
    model: Option<String>,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn parse_mode(s: &str) -> Result<BaselineMode, String> {
    s.parse().map_err(|e: tpweave::core::Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Fused-collective equivalence sweep and invariant suites.
    Verify {
        /// World size 2 only, at most 10 instances per case.
        #[arg(long)]
        quick: bool,
        /// Random instances per fused case.
        #[arg(long)]
        instances: Option<usize>,
        /// Inject a corrupted shard map (negative test).
        #[arg(long, hide = true)]
        corrupt_shard_map: bool,
    },
    /// Modeled AllReduce, RMSNorm and fused kernel times.
    Microbench {
        /// Hidden size of the modeled tensors.
        #[arg(long)]
        hidden: Option<usize>,
    },
    /// Iteration latency of every mode over a token sweep.
    Latency {
        /// Token counts, comma separated.
        #[arg(long, value_delimiter = ',')]
        tokens: Option<Vec<usize>>,
        /// Split at ceil(T/2) instead of the smart offset.
        #[arg(long)]
        equal_split: bool,
    },
    /// Trace-driven throughput of every mode.
    Throughput {
        /// Trace file (JSON lines); the configured synthetic traces otherwise.
        trace: Option<PathBuf>,
        /// Chunk sizes, comma separated.
        #[arg(long, value_delimiter = ',')]
        chunk_sizes: Option<Vec<usize>>,
        /// Split at ceil(T/2) instead of the smart offset.
        #[arg(long)]
        equal_split: bool,
    },
    /// Fits a hardware profile to a microbenchmark table.
    Calibrate {
        /// Calibration table file (JSON).
        table: PathBuf,
    },
}

fn emit(config: &RunConfig, text: &str) -> anyhow::Result<()> {
    match &config.out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let g = &cli.global;
    let mut config = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.apply(&Overrides {
        profile: g.profile.clone(),
        mode: g.mode,
        chunk_size: g.chunk_size,
        seed: g.seed,
        out: g.out.clone(),
    });
    if let Some(m) = &g.model {
        config.model = ModelChoice::Preset(m.clone());
    }
    let json = g.format == Format::Json;
    match cli.command {
        Command::Verify {
            quick,
            instances,
            corrupt_shard_map,
        } => {
            config.validate()?;
            let opts = VerifyOptions {
                seed: config.seed,
                instances: instances.unwrap_or(config.verify_instances),
                quick: quick || config.verify_quick,
                epsilon: config.epsilon,
                corrupt_shard_map,
            };
            let report = run_verify(&opts)?;
            emit(&config, &report.to_csv()?)?;
            for c in report.checks.iter().filter(|c| !c.passed()) {
                eprintln!("FAIL {}: {}", c.check, c.failures.join("; "));
            }
            return Ok(report.passed());
        }
        Command::Microbench { hidden } => {
            if hidden.is_some() {
                config.hidden = hidden;
            }
            config.validate()?;
            let m = reports::microbench(&config)?;
            let text = if json {
                format!("{}\n", serde_json::to_string_pretty(&m)?)
            } else {
                m.to_csv()?
            };
            emit(&config, &text)?;
        }
        Command::Latency {
            tokens,
            equal_split,
        } => {
            if let Some(t) = tokens {
                config.token_sweep = t;
            }
            if equal_split {
                config.split_strategy = SplitStrategy::Equal;
            }
            config.validate()?;
            let rows = reports::latency(&config)?;
            emit(
                &config,
                &if json {
                    rows_to_json(&rows)?
                } else {
                    rows_to_csv(&rows)?
                },
            )?;
        }
        Command::Throughput {
            trace,
            chunk_sizes,
            equal_split,
        } => {
            if trace.is_some() {
                config.trace = trace;
            }
            if chunk_sizes.is_some() {
                config.chunk_sizes = chunk_sizes;
            }
            if equal_split {
                config.split_strategy = SplitStrategy::Equal;
            }
            config.validate()?;
            let rows = reports::throughput(&config)?;
            emit(
                &config,
                &if json {
                    rows_to_json(&rows)?
                } else {
                    rows_to_csv(&rows)?
                },
            )?;
        }
        Command::Calibrate { table } => {
            config.validate()?;
            let table = load_table(&table)?;
            let (fit, profile_json, rows) = reports::calibrate_table(&config, &table)?;
            let residuals = if json {
                rows_to_json(&rows)?
            } else {
                rows_to_csv(&rows)?
            };
            match &config.out {
                Some(path) => {
                    std::fs::write(path, &profile_json)
                        .with_context(|| format!("writing {}", path.display()))?;
                    print!("{residuals}");
                }
                None => {
                    print!("{profile_json}");
                    eprint!("{residuals}");
                }
            }
            if let Some(g) = fit.fused_overhead_unclamped {
                if !(0.0..=MAX_FUSED_OVERHEAD).contains(&g) {
                    eprintln!(
                        "note: fused overhead {g:.4} clamped to {:.4}",
                        fit.profile.fused_overhead_fraction
                    );
                }
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
