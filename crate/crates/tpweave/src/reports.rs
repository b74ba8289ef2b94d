//! The microbench, latency, throughput and calibrate reports.
//!
//! Column orders are fixed; the README lists them. Times are rounded to
//! nanoseconds (3 decimals of µs) and ratios to 4 decimals, so repeated runs
//! are byte-identical.

use serde::Serialize;
use tpweave_core::scheduler::{iteration_timeline, BaselineMode, BatchShape};
use tpweave_core::splitter::SplitMode;
use tpweave_core::wavemodel::{
    calibrate, predict_us, Calibration, CalibrationTable, HardwareProfile, SeriesKind,
};
use tpweave_core::workloads::{simulate_throughput, Request};

use crate::config::RunConfig;
use crate::formats::{load_trace, profile_to_string};
use crate::parallel::ordered_map;
use crate::Result;

/// Token counts of the microbench table when the profile has no table.
pub const MICROBENCH_TOKENS: [usize; 10] =
    [64, 128, 256, 512, 1024, 2048, 4096, 8192, 16384, 32768];

fn round(x: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (x * s).round() / s
}

fn us(seconds: f64) -> f64 {
    round(seconds * 1e6, 3)
}

/// Text of an in-memory CSV writer.
pub(crate) fn csv_string(w: csv::Writer<Vec<u8>>) -> String {
    let bytes = w.into_inner().expect("writing to memory cannot fail");
    String::from_utf8(bytes).expect("csv of utf-8 fields is utf-8")
}

/// CSV of serializable rows, header from the field names.
pub fn rows_to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(csv_string(w))
}

/// Pretty JSON array of rows, newline terminated.
pub fn rows_to_json<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(rows)?;
    s.push('\n');
    Ok(s)
}

/// One row of the microbench table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MicrobenchRow {
    /// `AR`, `RMSNorm`, `AR+RMSNorm`, `Fused` or `Speedup`.
    pub series: &'static str,
    /// `us` or `x`.
    pub unit: &'static str,
    /// One value per token count; `None` is printed blank.
    pub values: Vec<Option<f64>>,
}

/// Modeled kernel times laid out like the measured table: one column per
/// token count, one row per series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Microbench {
    /// Profile name.
    pub profile: String,
    /// Hidden size.
    pub hidden: usize,
    /// Column token counts.
    pub tokens: Vec<usize>,
    /// Rows in fixed order.
    pub rows: Vec<MicrobenchRow>,
}

impl Microbench {
    /// Wide CSV: `series,unit,<tokens...>`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["series".to_string(), "unit".to_string()];
        header.extend(self.tokens.iter().map(usize::to_string));
        w.write_record(&header)?;
        for r in &self.rows {
            let decimals = if r.unit == "x" { 4 } else { 3 };
            let mut rec = vec![r.series.to_string(), r.unit.to_string()];
            rec.extend(
                r.values
                    .iter()
                    .map(|v| v.map(|x| format!("{x:.decimals$}")).unwrap_or_default()),
            );
            w.write_record(&rec)?;
        }
        Ok(csv_string(w))
    }

    /// The row of a series.
    pub fn row(&self, series: &str) -> Option<&MicrobenchRow> {
        self.rows.iter().find(|r| r.series == series)
    }
}

/// Builds the microbench table. Columns are the token counts of the
/// profile's built-in table, or [`MICROBENCH_TOKENS`]. With mode `nocomm`
/// the AllReduce is zero and the fused and speedup rows are blank.
pub fn microbench(config: &RunConfig) -> Result<Microbench> {
    let profile = config.hardware()?;
    let table = HardwareProfile::builtin_table(&config.profile);
    let tokens = table
        .as_ref()
        .map_or(MICROBENCH_TOKENS.to_vec(), CalibrationTable::token_counts);
    let hidden = config
        .hidden
        .or(table.as_ref().map(|t| t.hidden))
        .unwrap_or(profile.reference_hidden);
    let nocomm = config.mode == Some(BaselineMode::NoComm);
    let mut rows: Vec<MicrobenchRow> = ["AR", "RMSNorm", "AR+RMSNorm", "Fused", "Speedup"]
        .into_iter()
        .map(|series| MicrobenchRow {
            series,
            unit: if series == "Speedup" { "x" } else { "us" },
            values: Vec::new(),
        })
        .collect();
    for &t in &tokens {
        let p = |k| predict_us(k, t, hidden, &profile);
        let ar = if nocomm {
            0.0
        } else {
            p(SeriesKind::AllReduce)
        };
        let rn = p(SeriesKind::RmsNorm);
        let fused = (!nocomm).then(|| p(SeriesKind::Fused));
        let speedup = fused.map(|f| round((ar + rn) / f, 4));
        let values = [
            Some(round(ar, 3)),
            Some(round(rn, 3)),
            Some(round(ar + rn, 3)),
            fused.map(|f| round(f, 3)),
            speedup,
        ];
        for (row, v) in rows.iter_mut().zip(values) {
            row.values.push(v);
        }
    }
    Ok(Microbench {
        profile: profile.name,
        hidden,
        tokens,
        rows,
    })
}

/// One row of the latency sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyRow {
    /// Prefill tokens in the batch.
    pub tokens: usize,
    /// Iteration latency per mode, µs.
    pub default_us: f64,
    /// Multimem baseline, µs.
    pub multimem_us: f64,
    /// Communication removed, µs.
    pub nocomm_us: f64,
    /// Fused kernel only, µs.
    pub fuseonly_us: f64,
    /// Fused kernel plus overlap, µs.
    pub tokenweave_us: f64,
    /// `multimem_us / default_us`.
    pub speedup_default: f64,
    /// `multimem_us / nocomm_us`.
    pub speedup_nocomm: f64,
    /// `multimem_us / fuseonly_us`.
    pub speedup_fuseonly: f64,
    /// `multimem_us / tokenweave_us`.
    pub speedup_tokenweave: f64,
    /// `overlap` or `fused_only`.
    pub tokenweave_plan: &'static str,
    /// Tokens in the first split.
    pub tokenweave_prefix: usize,
    /// Tokens in the second split.
    pub tokenweave_suffix: usize,
}

/// Iteration latency of one prefill batch per token count and mode.
pub fn latency(config: &RunConfig) -> Result<Vec<LatencyRow>> {
    let spec = config.spec()?;
    let profile = config.hardware()?;
    let options: Vec<_> = BaselineMode::ALL
        .iter()
        .map(|&m| config.options(m))
        .collect::<Result<_>>()?;
    let rows = ordered_map(&config.token_sweep, |&t| -> Result<LatencyRow> {
        let batch = BatchShape::prefill(t);
        let mut lat = [0.0; 5];
        let mut plan = None;
        for (i, o) in options.iter().enumerate() {
            let (p, tl) = iteration_timeline(&batch, &spec, &profile, o)?;
            lat[i] = tl.iteration_latency;
            if o.mode == BaselineMode::TokenWeave {
                plan = Some(p);
            }
        }
        let plan = plan.expect("tokenweave is one of the modes");
        let [default, multimem, nocomm, fuseonly, tokenweave] = lat;
        let speedup = |x: f64| round(multimem / x, 4);
        Ok(LatencyRow {
            tokens: t,
            default_us: us(default),
            multimem_us: us(multimem),
            nocomm_us: us(nocomm),
            fuseonly_us: us(fuseonly),
            tokenweave_us: us(tokenweave),
            speedup_default: speedup(default),
            speedup_nocomm: speedup(nocomm),
            speedup_fuseonly: speedup(fuseonly),
            speedup_tokenweave: speedup(tokenweave),
            tokenweave_plan: if plan.mode == SplitMode::Overlap {
                "overlap"
            } else {
                "fused_only"
            },
            tokenweave_prefix: plan.prefix_tokens,
            tokenweave_suffix: plan.suffix_tokens,
        })
    });
    rows.into_iter().collect()
}

/// One row of the throughput report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputRow {
    /// Trace label.
    pub trace: String,
    /// Mode.
    pub mode: BaselineMode,
    /// Iteration token budget.
    pub chunk_size: usize,
    /// Requests in the trace.
    pub requests: usize,
    /// Prompt plus output tokens.
    pub total_tokens: usize,
    /// Iterations run.
    pub iterations: usize,
    /// Simulated time, seconds (6 decimals).
    pub total_time_s: f64,
    /// Throughput, tokens/s (1 decimal).
    pub tokens_per_s: f64,
    /// Mean iteration latency, µs.
    pub mean_iteration_latency_us: f64,
    /// Throughput over the Multimem throughput on the same trace and chunk.
    pub speedup_vs_multimem: f64,
}

/// Traces of the throughput command: the trace file if set, else the
/// configured synthetic traces.
pub fn throughput_traces(config: &RunConfig) -> Result<Vec<(String, Vec<Request>)>> {
    if let Some(path) = &config.trace {
        let label = path.file_name().map_or_else(
            || path.display().to_string(),
            |n| n.to_string_lossy().into(),
        );
        return Ok(vec![(label, load_trace(path)?)]);
    }
    Ok(config
        .synthetic
        .iter()
        .map(|s| (s.label(), s.generate(config.seed)))
        .collect())
}

/// Runs every trace, chunk size and mode through the batch former and the
/// iteration model. Rows are ordered by trace, chunk size, then mode.
pub fn throughput(config: &RunConfig) -> Result<Vec<ThroughputRow>> {
    let spec = config.spec()?;
    let profile = config.hardware()?;
    let modes: Vec<BaselineMode> = match config.mode {
        Some(m) => vec![m],
        None => BaselineMode::ALL.to_vec(),
    };
    let traces = throughput_traces(config)?;
    let mut jobs = Vec::new();
    for (ti, _) in traces.iter().enumerate() {
        for chunk in config.chunk_sizes() {
            let mut ms = modes.clone();
            if !ms.contains(&BaselineMode::Multimem) {
                ms.push(BaselineMode::Multimem);
            }
            jobs.extend(ms.into_iter().map(|m| (ti, chunk, m)));
        }
    }
    let reports = ordered_map(&jobs, |&(ti, chunk, mode)| {
        let options = config.options(mode)?;
        Ok(simulate_throughput(
            &traces[ti].1,
            &spec,
            &profile,
            &options,
            chunk,
            config.max_active_requests,
        )?)
    });
    let reports: Vec<_> = reports.into_iter().collect::<Result<_>>()?;
    let find = |ti: usize, chunk: usize, mode: BaselineMode| {
        let i = jobs
            .iter()
            .position(|&j| j == (ti, chunk, mode))
            .expect("job was run");
        &reports[i]
    };
    let mut rows = Vec::new();
    for &(ti, chunk, mode) in &jobs {
        if !modes.contains(&mode) {
            continue;
        }
        let r = find(ti, chunk, mode);
        let base = find(ti, chunk, BaselineMode::Multimem);
        rows.push(ThroughputRow {
            trace: traces[ti].0.clone(),
            mode,
            chunk_size: chunk,
            requests: traces[ti].1.len(),
            total_tokens: r.total_tokens,
            iterations: r.iterations,
            total_time_s: round(r.total_time, 6),
            tokens_per_s: round(r.tokens_per_second, 1),
            mean_iteration_latency_us: us(r.mean_iteration_latency),
            speedup_vs_multimem: round(r.tokens_per_second / base.tokens_per_second, 4),
        });
    }
    Ok(rows)
}

/// One row of the calibration residual report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRow {
    /// Series name from the table.
    pub series: String,
    /// Tokens.
    pub tokens: usize,
    /// Measured µs.
    pub measured_us: f64,
    /// Modeled µs.
    pub predicted_us: f64,
    /// `(predicted - measured) / measured`, 4 decimals.
    pub relative_error: f64,
}

/// Base profile of a calibration: `h100` and `b200` name the structural
/// bases; anything else is loaded as a profile.
pub fn calibration_base(name: &str) -> Result<HardwareProfile> {
    match name {
        "h100" => Ok(HardwareProfile::h100_base()),
        "b200" => Ok(HardwareProfile::b200_base()),
        other => crate::formats::load_profile(other),
    }
}

/// Fits `table` on the configured base profile. Returns the fit, the
/// profile JSON and the residual rows.
pub fn calibrate_table(
    config: &RunConfig,
    table: &CalibrationTable,
) -> Result<(Calibration, String, Vec<ResidualRow>)> {
    let mut fit = calibrate(table, &calibration_base(&config.profile)?)?;
    if !table.name.is_empty() {
        fit.profile.name = table.name.clone();
    }
    let rows = fit
        .residuals
        .iter()
        .map(|r| ResidualRow {
            series: r.series.clone(),
            tokens: r.tokens,
            measured_us: r.measured_us,
            predicted_us: round(r.predicted_us, 3),
            relative_error: round(r.relative_error, 4),
        })
        .collect();
    let json = profile_to_string(&fit.profile);
    Ok((fit, json, rows))
}
