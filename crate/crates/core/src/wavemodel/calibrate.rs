use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::kernels::{collective_time, rmsnorm_time, CollectiveKind, NormLayout};
use super::profile::{HardwareProfile, MAX_FUSED_OVERHEAD};

/// One measured kernel time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    /// Tokens in the measured tensor.
    pub tokens: usize,
    /// Measured time, microseconds.
    pub microseconds: f64,
}

/// A named row of measurements.
///
/// Recognized names: `allreduce`, `rmsnorm`, `fused`, `reduce_scatter`,
/// `all_gather`. Other series (such as `allreduce+rmsnorm`) are reported
/// against the model but not fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSeries {
    /// Series name.
    pub name: String,
    /// Measurements.
    pub points: Vec<CalibrationPoint>,
}

/// A microbenchmark table for one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    /// Table name.
    #[serde(default)]
    pub name: String,
    /// Hidden size of the measured tensors.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Element size of the measured tensors.
    #[serde(default = "default_bpe")]
    pub bytes_per_element: usize,
    /// Measured rows.
    pub series: Vec<CalibrationSeries>,
}

fn default_hidden() -> usize {
    8192
}

fn default_bpe() -> usize {
    2
}

/// Series a table can feed into the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    /// Plain AllReduce.
    AllReduce,
    /// Unsharded RMSNorm.
    RmsNorm,
    /// Fused AllReduce-RMSNorm.
    Fused,
    /// ReduceScatter.
    ReduceScatter,
    /// AllGather.
    AllGather,
    /// Sequential AllReduce then RMSNorm.
    AllReduceThenNorm,
}

impl SeriesKind {
    /// Classifies a series name; `None` for unknown names.
    pub fn from_name(name: &str) -> Option<Self> {
        let key: String = name
            .chars()
            .filter(|c| c.is_ascii_alphanumeric() || *c == '+')
            .map(|c| c.to_ascii_lowercase())
            .collect();
        match key.as_str() {
            "allreduce" | "ar" => Some(SeriesKind::AllReduce),
            "rmsnorm" | "rn" | "norm" => Some(SeriesKind::RmsNorm),
            "fused" | "fusedarnorm" | "fusedallreducermsnorm" => Some(SeriesKind::Fused),
            "reducescatter" | "rs" => Some(SeriesKind::ReduceScatter),
            "allgather" | "ag" => Some(SeriesKind::AllGather),
            "allreduce+rmsnorm" | "ar+rn" | "ar+rmsnorm" => Some(SeriesKind::AllReduceThenNorm),
            _ => None,
        }
    }
}

impl CalibrationTable {
    /// First series of the given kind.
    pub fn find(&self, kind: SeriesKind) -> Option<&CalibrationSeries> {
        self.series
            .iter()
            .find(|s| SeriesKind::from_name(&s.name) == Some(kind))
    }

    /// Measured microseconds of a series at a token count.
    pub fn lookup(&self, kind: SeriesKind, tokens: usize) -> Option<f64> {
        self.find(kind)?
            .points
            .iter()
            .find(|p| p.tokens == tokens)
            .map(|p| p.microseconds)
    }

    /// Token counts of the AllReduce series, ascending.
    pub fn token_counts(&self) -> Vec<usize> {
        let mut t: Vec<usize> = self
            .find(SeriesKind::AllReduce)
            .map(|s| s.points.iter().map(|p| p.tokens).collect())
            .unwrap_or_default();
        t.sort_unstable();
        t.dedup();
        t
    }

    fn check(&self) -> Result<()> {
        if self.hidden == 0 || self.bytes_per_element == 0 {
            return Err(Error::Calibration(
                "hidden and bytes_per_element must be positive".into(),
            ));
        }
        for s in &self.series {
            if let Some(p) = s
                .points
                .iter()
                .find(|p| !(p.microseconds.is_finite() && p.microseconds > 0.0))
            {
                return Err(Error::Calibration(format!(
                    "series '{}' has non-positive time {} at {} tokens",
                    s.name, p.microseconds, p.tokens
                )));
            }
        }
        Ok(())
    }
}

/// Model-vs-measurement comparison at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResidual {
    /// Series name as given in the table.
    pub series: String,
    /// Tokens.
    pub tokens: usize,
    /// Measured microseconds.
    pub measured_us: f64,
    /// Modeled microseconds.
    pub predicted_us: f64,
    /// `(predicted - measured) / measured`.
    pub relative_error: f64,
}

/// Result of [`calibrate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Fitted profile.
    pub profile: HardwareProfile,
    /// Per-point residuals of every series in the table.
    pub residuals: Vec<FitResidual>,
    /// Fused overhead the data prefers before the cap is applied.
    pub fused_overhead_unclamped: Option<f64>,
}

impl Calibration {
    /// Largest absolute relative error of a series.
    pub fn max_relative_error(&self, series: &str) -> Option<f64> {
        self.residuals
            .iter()
            .filter(|r| r.series == series)
            .map(|r| libm::fabs(r.relative_error))
            .reduce(f64::max)
    }
}

/// Fits the collective, RMSNorm and fused-kernel terms of `base` to a table.
///
/// The AllReduce line is an ordinary least-squares fit of the `allreduce`
/// series. The `rmsnorm` series is fitted by relative least squares and gives
/// `norm_overhead` (intercept) and the effective HBM bandwidth (slope). The
/// fused overhead is fitted to the measured `(allreduce + rmsnorm) / fused`
/// ratios when all three series are present, else to the `fused` series
/// alone, and is clamped to `[0, MAX_FUSED_OVERHEAD]`. ReduceScatter and
/// AllGather series fit only their base latency; their per-token cost is half
/// the AllReduce one. Parameters whose series are absent keep their `base`
/// values.
pub fn calibrate(table: &CalibrationTable, base: &HardwareProfile) -> Result<Calibration> {
    table.check()?;
    let ar = table
        .find(SeriesKind::AllReduce)
        .ok_or_else(|| Error::Calibration("table has no allreduce series".into()))?;
    let ar_pts = points(ar);
    require_distinct(&ar.name, &ar_pts)?;
    let line = fit_line(&ar_pts, false)?;
    if line.slope <= 0.0 {
        return Err(Error::Calibration(format!(
            "allreduce slope {} us/token is not positive",
            line.slope
        )));
    }

    let mut profile = base.clone();
    profile.reference_hidden = table.hidden;
    profile.bytes_per_element = table.bytes_per_element;
    profile.collective_base_latency = line.intercept * 1e-6;
    profile.collective_per_token_time = line.slope * 1e-6;

    let mut norm_line = None;
    if let Some(rn) = table.find(SeriesKind::RmsNorm) {
        let pts = points(rn);
        require_distinct(&rn.name, &pts)?;
        let l = fit_line(&pts, true)?;
        if l.slope <= 0.0 {
            return Err(Error::Calibration(format!(
                "rmsnorm slope {} us/token is not positive",
                l.slope
            )));
        }
        let bytes_per_token = 3.0 * (table.hidden * table.bytes_per_element) as f64;
        profile.hbm_bandwidth_effective = bytes_per_token / (l.slope * 1e-6);
        profile.norm_overhead = l.intercept * 1e-6;
        norm_line = Some(l);
    }

    let ar_at = |t: f64| line.intercept + line.slope * t;
    let mut unclamped = None;
    if let Some(fused) = table.find(SeriesKind::Fused) {
        let fused_pts = points(fused);
        let ratios: Vec<(f64, f64)> = match norm_line {
            Some(_) => fused_pts
                .iter()
                .filter_map(|&(t, f)| {
                    let tokens = t as usize;
                    let a = table.lookup(SeriesKind::AllReduce, tokens)?;
                    let r = table.lookup(SeriesKind::RmsNorm, tokens)?;
                    Some((t, (a + r) / f))
                })
                .collect(),
            None => Vec::new(),
        };
        let cost = |g: f64| -> f64 {
            if let (Some(n), false) = (&norm_line, ratios.is_empty()) {
                ratios
                    .iter()
                    .map(|&(t, r)| {
                        let m = ar_at(t);
                        let e = (m + n.intercept + n.slope * t) / (m * (1.0 + g)) - r;
                        e * e
                    })
                    .sum()
            } else {
                fused_pts
                    .iter()
                    .map(|&(t, f)| {
                        let e = ar_at(t) * (1.0 + g) / f - 1.0;
                        e * e
                    })
                    .sum()
            }
        };
        unclamped = Some(golden_section(cost, -0.5, 0.5));
        profile.fused_overhead_fraction = golden_section(cost, 0.0, MAX_FUSED_OVERHEAD);
    }

    let half_slope = 0.5 * line.slope;
    if let Some(rs) = table.find(SeriesKind::ReduceScatter) {
        profile.reduce_scatter_base_latency = fit_intercept(&points(rs), half_slope)? * 1e-6;
    }
    if let Some(ag) = table.find(SeriesKind::AllGather) {
        profile.all_gather_base_latency = fit_intercept(&points(ag), half_slope)? * 1e-6;
    }

    let residuals = residuals(table, &profile);
    Ok(Calibration {
        profile,
        residuals,
        fused_overhead_unclamped: unclamped,
    })
}

/// Modeled microseconds of a series kind under a profile.
pub fn predict_us(
    kind: SeriesKind,
    tokens: usize,
    hidden: usize,
    profile: &HardwareProfile,
) -> f64 {
    let sms = profile.collective_sms;
    let norm = || rmsnorm_time(tokens, hidden, profile, NormLayout::Replicated).duration;
    let coll = |k| collective_time(k, tokens, hidden, sms, profile).duration;
    let s = match kind {
        SeriesKind::AllReduce => coll(CollectiveKind::AllReduce),
        SeriesKind::RmsNorm => norm(),
        SeriesKind::Fused => coll(CollectiveKind::FusedArNorm),
        SeriesKind::ReduceScatter => coll(CollectiveKind::ReduceScatter),
        SeriesKind::AllGather => coll(CollectiveKind::AllGather),
        SeriesKind::AllReduceThenNorm => coll(CollectiveKind::AllReduce) + norm(),
    };
    s * 1e6
}

fn residuals(table: &CalibrationTable, profile: &HardwareProfile) -> Vec<FitResidual> {
    let mut out = Vec::new();
    for s in &table.series {
        let Some(kind) = SeriesKind::from_name(&s.name) else {
            continue;
        };
        for p in &s.points {
            let predicted = predict_us(kind, p.tokens, table.hidden, profile);
            out.push(FitResidual {
                series: s.name.clone(),
                tokens: p.tokens,
                measured_us: p.microseconds,
                predicted_us: predicted,
                relative_error: (predicted - p.microseconds) / p.microseconds,
            });
        }
    }
    out
}

fn points(s: &CalibrationSeries) -> Vec<(f64, f64)> {
    s.points
        .iter()
        .map(|p| (p.tokens as f64, p.microseconds))
        .collect()
}

fn require_distinct(name: &str, pts: &[(f64, f64)]) -> Result<()> {
    let first = pts.first().map(|p| p.0);
    if pts.len() < 2 || pts.iter().all(|p| Some(p.0) == first) {
        return Err(Error::Calibration(format!(
            "series '{name}' needs at least two distinct token counts"
        )));
    }
    Ok(())
}

struct Line {
    intercept: f64,
    slope: f64,
}

/// Least squares for `y = a + b t`, ordinary or with squared relative error.
/// A negative intercept is refitted through the origin.
fn fit_line(pts: &[(f64, f64)], relative: bool) -> Result<Line> {
    let (mut s00, mut s01, mut s11, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(t, y) in pts {
        let w = if relative { 1.0 / (y * y) } else { 1.0 };
        s00 += w;
        s01 += w * t;
        s11 += w * t * t;
        r0 += w * y;
        r1 += w * t * y;
    }
    let det = s00 * s11 - s01 * s01;
    if !(det.is_finite() && det > 1e-12 * s00 * s11) {
        return Err(Error::Calibration("rank-deficient table".into()));
    }
    let (mut a, mut b) = ((r0 * s11 - r1 * s01) / det, (s00 * r1 - s01 * r0) / det);
    if a < 0.0 {
        a = 0.0;
        b = r1 / s11;
    }
    Ok(Line {
        intercept: a,
        slope: b,
    })
}

/// Relative least squares for the intercept of `y = a + slope t`.
fn fit_intercept(pts: &[(f64, f64)], slope: f64) -> Result<f64> {
    if pts.is_empty() {
        return Err(Error::Calibration("empty series".into()));
    }
    let (num, den) = pts.iter().fold((0.0, 0.0), |(n, d), &(t, y)| {
        (n + (y - slope * t) / (y * y), d + 1.0 / (y * y))
    });
    Ok((num / den).max(0.0))
}

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let (a, b) = (lo, hi);
    let r = 0.5 * (libm::sqrt(5.0) - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..100 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    let x = 0.5 * (lo + hi);
    // the cap is usually active, so the bracket ends are candidates too
    [a, x, b]
        .into_iter()
        .map(|v| (f(v), v))
        .fold(
            (f64::INFINITY, x),
            |best, c| if c.0 < best.0 { c } else { best },
        )
        .1
}
