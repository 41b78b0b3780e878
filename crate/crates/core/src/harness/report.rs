//! CSV and JSON reports.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::runs::RunOutput;
use super::ErrorRecord;
use crate::error::{Error, Result};

pub const REPORT_FORMAT: &str = "semisplit-report/1";

const CSV_HEADER: &str = "scheme,metric,dt,hbar,n_steps,value,mc_stderr,bound_value,bound_satisfied";

/// Identifies the run that produced a report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub seed: u64,
    pub version: String,
}

impl Fingerprint {
    pub fn of(output: &RunOutput) -> Self {
        Fingerprint {
            seed: output.config.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per record; missing values are empty fields.
pub fn render_csv(records: &[ErrorRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.scheme.as_str(),
            r.metric.as_str(),
            r.dt,
            opt(r.hbar),
            r.n_steps,
            r.value,
            opt(r.mc_stderr),
            opt(r.bound_value),
            opt(r.bound_satisfied),
        );
    }
    out
}

pub fn render_json(output: &RunOutput) -> Result<String> {
    let doc = json!({
        "format": REPORT_FORMAT,
        "config": output.config,
        "bounds": output.bounds,
        "fits": output.fits,
        "summary": output.summary,
        "records": output.records,
        "fingerprint": Fingerprint::of(output),
    });
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// Writes `report.csv` and `report.json` into `dir`, creating it if needed.
pub fn emit_report(output: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.csv"), render_csv(&output.records))?;
    std::fs::write(dir.join("report.json"), render_json(output)?)?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidInput(format!("malformed report: {}", msg.into()))
}

fn number_or_null(v: &Value, key: &str, i: usize) -> Result<Option<f64>> {
    match v.get(key) {
        Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => Ok(n.as_f64()),
        _ => Err(bad(format!("record {i}: `{key}` must be a number or null"))),
    }
}

/// Structural check of a parsed `report.json`.
pub fn validate_report(doc: &Value) -> Result<()> {
    let obj = doc.as_object().ok_or_else(|| bad("top level is not an object"))?;
    for key in ["format", "config", "bounds", "fits", "summary", "records", "fingerprint"] {
        if !obj.contains_key(key) {
            return Err(bad(format!("missing `{key}`")));
        }
    }
    if obj["format"] != REPORT_FORMAT {
        return Err(bad("unknown format tag"));
    }
    let fp = &obj["fingerprint"];
    if !fp["seed"].is_u64() || !fp["version"].is_string() {
        return Err(bad("fingerprint needs an integer seed and a version string"));
    }
    if !obj["fits"].is_array() || !obj["summary"].is_object() || !obj["bounds"].is_object() {
        return Err(bad("fits, summary or bounds has the wrong type"));
    }
    let records = obj["records"].as_array().ok_or_else(|| bad("records is not an array"))?;
    for (i, r) in records.iter().enumerate() {
        if !matches!(r["scheme"].as_str(), Some("lie_trotter" | "strang" | "reference")) {
            return Err(bad(format!("record {i}: bad scheme")));
        }
        if !matches!(
            r["metric"].as_str(),
            Some("w2_classical" | "l2_quantum" | "w2_husimi" | "dist1_husimi")
        ) {
            return Err(bad(format!("record {i}: bad metric")));
        }
        let dt = r["dt"].as_f64().filter(|d| *d > 0.0);
        let value = r["value"].as_f64().filter(|v| *v >= 0.0);
        let (Some(_), Some(value)) = (dt, value) else {
            return Err(bad(format!("record {i}: dt and value must be nonnegative numbers")));
        };
        if !r["n_steps"].is_u64() {
            return Err(bad(format!("record {i}: n_steps must be an integer")));
        }
        number_or_null(r, "hbar", i)?;
        number_or_null(r, "mc_stderr", i)?;
        let bound = number_or_null(r, "bound_value", i)?;
        let verdict = match &r["bound_satisfied"] {
            Value::Null => None,
            Value::Bool(b) => Some(*b),
            _ => return Err(bad(format!("record {i}: bound_satisfied must be a bool or null"))),
        };
        if verdict != bound.map(|b| value <= b) {
            return Err(bad(format!("record {i}: verdict does not match value and bound")));
        }
    }
    Ok(())
}
