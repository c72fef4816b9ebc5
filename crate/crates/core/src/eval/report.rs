use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A metric with its scalar values, per-item breakdown, named curves and
/// the configuration that produced it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub seed: u64,
    pub values: BTreeMap<String, f64>,
    pub breakdown: Vec<f64>,
    pub curves: BTreeMap<String, Vec<(f64, f64)>>,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn new(metric: impl Into<String>, seed: u64) -> Self {
        Self {
            metric: metric.into(),
            seed,
            config: serde_json::Value::Null,
            ..Default::default()
        }
    }

    pub fn value(mut self, key: &str, v: f64) -> Self {
        self.values.insert(key.to_string(), v);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::config(format!("cannot serialize report: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("malformed report: {e}")))
    }

    /// `key=value` lines: metric, seed, then values in key order.
    pub fn to_text(&self) -> String {
        let mut out = format!("metric={}\nseed={}\n", self.metric, self.seed);
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k}={v}");
        }
        if !self.breakdown.is_empty() {
            let _ = writeln!(out, "items={}", self.breakdown.len());
        }
        out
    }
}

/// Two whitespace-separated columns, one point per line.
pub fn curve_text(points: &[(f64, f64)]) -> String {
    let mut out = String::new();
    for (x, y) in points {
        let _ = writeln!(out, "{x} {y}");
    }
    out
}
