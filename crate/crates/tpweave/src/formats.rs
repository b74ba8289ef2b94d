//! Trace, calibration-table and profile files.
//!
//! Traces are JSON lines, one request per line:
//! `{"prompt_tokens": 100, "output_tokens": 20, "arrival_s": 0.5}` with
//! `arrival_s` optional (default 0). Blank lines are skipped. Calibration
//! tables and profiles are single JSON documents.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tpweave_core::wavemodel::{calibrate, CalibrationTable, HardwareProfile};
use tpweave_core::workloads::Request;

use crate::error::{read, write, Error, Result};

#[derive(Serialize, Deserialize)]
struct TraceRecord {
    prompt_tokens: usize,
    output_tokens: usize,
    #[serde(default, skip_serializing_if = "is_zero")]
    arrival_s: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

/// Parses trace text; `path` only labels errors.
pub fn parse_trace(text: &str, path: &Path) -> Result<Vec<Request>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.into(),
            line: i + 1,
            message,
        };
        let rec: TraceRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let req = Request {
            id: out.len(),
            prompt_tokens: rec.prompt_tokens,
            output_tokens: rec.output_tokens,
            arrival: rec.arrival_s,
        };
        req.validate().map_err(|e| err(e.to_string()))?;
        out.push(req);
    }
    Ok(out)
}

/// Reads a trace file.
pub fn load_trace(path: &Path) -> Result<Vec<Request>> {
    parse_trace(&read(path)?, path)
}

/// Canonical trace text: one compact object per line, fields in schema
/// order, `arrival_s` only when nonzero.
pub fn trace_to_string(requests: &[Request]) -> String {
    let mut out = String::new();
    for r in requests {
        let rec = TraceRecord {
            prompt_tokens: r.prompt_tokens,
            output_tokens: r.output_tokens,
            arrival_s: r.arrival,
        };
        out.push_str(&serde_json::to_string(&rec).expect("plain struct serializes"));
        out.push('\n');
    }
    out
}

/// Writes a trace file in canonical form.
pub fn save_trace(path: &Path, requests: &[Request]) -> Result<()> {
    write(path, &trace_to_string(requests))
}

/// Reads a calibration table.
pub fn load_table(path: &Path) -> Result<CalibrationTable> {
    let text = read(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.into(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Resolves a profile argument: a built-in name (`h100`, `b200`), a profile
/// JSON file, or a calibration table JSON file (fitted on the H100 base).
pub fn load_profile(spec: &str) -> Result<HardwareProfile> {
    if let Some(p) = HardwareProfile::builtin(spec) {
        return Ok(p);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(tpweave_core::Error::Calibration(format!(
            "no built-in profile or file named '{spec}'"
        ))
        .into());
    }
    let text = read(path)?;
    let parse_err = |e: serde_json::Error| Error::Parse {
        path: path.into(),
        line: e.line(),
        message: e.to_string(),
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(parse_err)?;
    let profile = if value.get("series").is_some() {
        let table: CalibrationTable = serde_json::from_value(value).map_err(parse_err)?;
        calibrate(&table, &HardwareProfile::h100_base())?.profile
    } else {
        serde_json::from_value(value).map_err(parse_err)?
    };
    profile.validate()?;
    Ok(profile)
}

/// Pretty JSON of a profile, newline terminated.
pub fn profile_to_string(profile: &HardwareProfile) -> String {
    let mut s = serde_json::to_string_pretty(profile).expect("profile serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_examples() {
        let p = Path::new("t.jsonl");
        let r = parse_trace("{\"prompt_tokens\":100,\"output_tokens\":20}\n", p).unwrap();
        assert_eq!(
            (r[0].prompt_tokens, r[0].output_tokens, r[0].arrival),
            (100, 20, 0.0)
        );
        assert!(parse_trace("", p).unwrap().is_empty());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let p = Path::new("t.jsonl");
        let text = "{\"prompt_tokens\":1,\"output_tokens\":1}\n\n{\"prompt_tokens\":\"x\"}\n";
        match parse_trace(text, p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match parse_trace("{\"prompt_tokens\":0,\"output_tokens\":1}", p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn canonical_round_trip() {
        let text = "{\"prompt_tokens\":100,\"output_tokens\":20}\n{\"prompt_tokens\":7,\"output_tokens\":0,\"arrival_s\":1.25}\n";
        let r = parse_trace(text, Path::new("t")).unwrap();
        assert_eq!(trace_to_string(&r), text);
    }

    #[test]
    fn unknown_profile_is_calibration_error() {
        assert!(matches!(
            load_profile("/nonexistent/profile.json"),
            Err(Error::Core(tpweave_core::Error::Calibration(_)))
        ));
        assert_eq!(load_profile("h100").unwrap().num_sms, 132);
    }
}
