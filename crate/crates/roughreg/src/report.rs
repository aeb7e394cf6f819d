//! JSON reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

const SCHEMA: &str = "1";

/// Frozen identifier of the report layout; every report embeds it.
pub fn report_schema_version() -> &'static str {
    SCHEMA
}

/// Root object `{schema, scenario, params, seed, metrics, pass}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub scenario: String,
    pub params: BTreeMap<String, String>,
    pub seed: u64,
    pub metrics: BTreeMap<String, Value>,
    pub pass: bool,
}

impl Report {
    /// Pretty JSON with sorted map keys and a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Parses a report, refusing any schema other than the current one.
    pub fn from_json(text: &str) -> Result<Report, CliError> {
        let v: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("report: {e}")))?;
        match v.get("schema").and_then(Value::as_str) {
            Some(SCHEMA) => {}
            Some(other) => {
                return Err(CliError::Config(format!(
                    "report schema {other:?} does not match this build's schema {SCHEMA:?}"
                )))
            }
            None => return Err(CliError::Config("report has no schema field".into())),
        }
        serde_json::from_value(v).map_err(|e| CliError::Config(format!("report: {e}")))
    }
}

/// JSON number, or `null` for NaN and infinities.
pub fn number(x: f64) -> Value {
    serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
}

pub fn numbers(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|x| number(*x)).collect())
}
