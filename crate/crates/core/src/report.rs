//! Versioned JSON report envelope shared by every batch command.
//!
//! ```json
//! { "schema_version": 1, "kind": "rank", "generated_at": "...", "data": { ... } }
//! ```
//!
//! `generated_at` is omitted in reproducible mode so identical inputs give
//! byte-identical reports.

use chrono::Utc;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::eval::format_timestamp;

pub const SCHEMA_VERSION: u64 = 1;

pub const KINDS: [&str; 9] = [
    "ingest",
    "synth",
    "rank",
    "sonorize2",
    "inc",
    "slerp-eval",
    "hist",
    "mos",
    "correlate",
];

#[derive(Debug, Serialize)]
pub struct Report<'a, T: Serialize> {
    pub schema_version: u64,
    pub kind: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<String>,
    pub data: &'a T,
}

impl<'a, T: Serialize> Report<'a, T> {
    pub fn new(kind: &'a str, data: &'a T, timestamp: bool) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind,
            generated_at: timestamp.then(|| format_timestamp(&Utc::now())),
            data,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid report: {0}")]
pub struct ReportError(pub String);

fn need<'v>(v: &'v Value, key: &str, ctx: &str) -> Result<&'v Value, ReportError> {
    v.get(key)
        .ok_or_else(|| ReportError(format!("{ctx}: missing '{key}'")))
}

fn need_array<'v>(v: &'v Value, key: &str, ctx: &str) -> Result<&'v Vec<Value>, ReportError> {
    need(v, key, ctx)?
        .as_array()
        .ok_or_else(|| ReportError(format!("{ctx}: '{key}' is not an array")))
}

fn need_number(v: &Value, key: &str, ctx: &str) -> Result<f64, ReportError> {
    need(v, key, ctx)?
        .as_f64()
        .ok_or_else(|| ReportError(format!("{ctx}: '{key}' is not a number")))
}

fn need_string<'v>(v: &'v Value, key: &str, ctx: &str) -> Result<&'v str, ReportError> {
    need(v, key, ctx)?
        .as_str()
        .ok_or_else(|| ReportError(format!("{ctx}: '{key}' is not a string")))
}

fn check_ranked(v: &Value, ctx: &str) -> Result<(), ReportError> {
    need_string(v, "query_id", ctx)?;
    need_string(v, "metric_name", ctx)?;
    let entries = need_array(v, "entries", ctx)?;
    let mut prev: Option<(f64, &str)> = None;
    for e in entries {
        let score = need_number(e, "score", ctx)?;
        let id = need_string(e, "candidate_id", ctx)?;
        if let Some((ps, pid)) = prev {
            if score < ps || (score == ps && id < pid) {
                return Err(ReportError(format!("{ctx}: entries are not sorted")));
            }
        }
        prev = Some((score, id));
    }
    Ok(())
}

/// Structural check of a parsed report.
pub fn validate(report: &Value) -> Result<(), ReportError> {
    let version = report
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| ReportError("missing schema_version".into()))?;
    if version != SCHEMA_VERSION {
        return Err(ReportError(format!("unsupported schema_version {version}")));
    }
    let kind = need_string(report, "kind", "report")?;
    if !KINDS.contains(&kind) {
        return Err(ReportError(format!("unknown kind '{kind}'")));
    }
    if let Some(ts) = report.get("generated_at") {
        let ts = ts
            .as_str()
            .ok_or_else(|| ReportError("generated_at is not a string".into()))?;
        chrono::DateTime::parse_from_rfc3339(ts)
            .map_err(|e| ReportError(format!("generated_at: {e}")))?;
    }
    let data = need(report, "data", "report")?;
    match kind {
        "rank" => {
            for r in need_array(data, "results", kind)? {
                check_ranked(r, kind)?;
            }
        }
        "sonorize2" => {
            need_string(data, "chosen_audio_id", kind)?;
            check_ranked(need(data, "candidates", kind)?, kind)?;
        }
        "correlate" => {
            let r = need_number(data, "r", kind)?;
            let n = need_number(data, "n", kind)?;
            if !(-1.0..=1.0).contains(&r) || n < 2.0 {
                return Err(ReportError(format!("correlate: r={r}, n={n} out of range")));
            }
            need_string(data, "metric_name", kind)?;
        }
        "inc" => {
            for r in need_array(data, "reports", kind)? {
                let inc = need_number(r, "inc", kind)?;
                if !(-1.0 - 1e-9..=2.0 + 1e-9).contains(&inc) {
                    return Err(ReportError(format!("inc {inc} outside [-1, 2]")));
                }
            }
        }
        "hist" => {
            for h in need_array(data, "histograms", kind)? {
                let edges = need_array(h, "bin_edges", kind)?;
                let counts = need_array(h, "counts", kind)?;
                let total = need_number(h, "total", kind)?;
                let sum: f64 = counts.iter().filter_map(Value::as_f64).sum();
                if edges.len() != counts.len() + 1 || sum != total {
                    return Err(ReportError("hist: inconsistent histogram".into()));
                }
            }
        }
        "slerp-eval" => {
            let cells = need_array(data, "cells", kind)?;
            if cells.len() != 4 {
                return Err(ReportError("slerp-eval: expected 4 cells".into()));
            }
            for c in cells {
                need_number(c, "n", kind)?;
            }
        }
        "mos" => {
            for g in need_array(data, "groups", kind)? {
                need_string(g, "group", kind)?;
                need_number(g, "mean", kind)?;
            }
        }
        "ingest" | "synth" => {
            need_number(data, "dim", kind)?;
            need(data, "counts", kind)?;
        }
        _ => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn envelope_without_timestamp_is_stable() {
        let data = json!({"r": -0.5, "n": 3, "metric_name": "m"});
        let a = Report::new("correlate", &data, false).to_json();
        let b = Report::new("correlate", &data, false).to_json();
        assert_eq!(a, b);
        assert!(!a.contains("generated_at"));
        let v: Value = serde_json::from_str(&a).unwrap();
        validate(&v).unwrap();
        let with_ts: Value =
            serde_json::from_str(&Report::new("correlate", &data, true).to_json()).unwrap();
        validate(&with_ts).unwrap();
    }

    #[test]
    fn rejects_bad_reports() {
        assert!(validate(&json!({"kind": "rank", "data": {}})).is_err());
        assert!(validate(&json!({"schema_version": 2, "kind": "rank", "data": {}})).is_err());
        assert!(validate(&json!({"schema_version": 1, "kind": "nope", "data": {}})).is_err());
        let unsorted = json!({"schema_version": 1, "kind": "rank", "data": {"results": [
            {"query_id": "q", "metric_name": "m", "entries": [
                {"candidate_id": "a", "score": 0.5}, {"candidate_id": "b", "score": 0.1}]}]}});
        assert!(validate(&unsorted).is_err());
        let bad_r = json!({"schema_version": 1, "kind": "correlate",
            "data": {"r": 1.5, "n": 3, "metric_name": "m"}});
        assert!(validate(&bad_r).is_err());
    }
}
