use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    /// Feature extractor behind the number, or `"pixel"` for direct metrics.
    pub embedder: String,
    /// Frames per evaluated window (1 for per-frame metrics).
    pub clip_len: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config_hash: String,
    pub metrics: BTreeMap<String, MetricValue>,
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0. { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.6}")
    }
}

impl MetricReport {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self { config_hash: config_hash.into(), metrics: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: f64, std: Option<f64>, embedder: impl Into<String>, clip_len: usize) {
        self.metrics.insert(name.into(), MetricValue { value, std, embedder: embedder.into(), clip_len });
    }

    pub fn get(&self, name: &str) -> Option<&MetricValue> {
        self.metrics.get(name)
    }

    /// One `key=value` line per field.
    pub fn to_key_value(&self) -> String {
        let mut s = format!("config_hash={}\n", self.config_hash);
        for (k, m) in &self.metrics {
            let _ = writeln!(s, "{k}.value={}", fmt_f64(m.value));
            if let Some(sd) = m.std {
                let _ = writeln!(s, "{k}.std={}", fmt_f64(sd));
            }
            let _ = writeln!(s, "{k}.embedder={}", m.embedder);
            let _ = writeln!(s, "{k}.clip_len={}", m.clip_len);
        }
        s
    }

    /// JSON with infinities encoded as strings.
    pub fn to_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self).map_err(|e| Error::Numerical(e.to_string()))?;
        for (k, m) in &self.metrics {
            if !m.value.is_finite() {
                v["metrics"][k]["value"] = serde_json::Value::String(fmt_f64(m.value));
            }
        }
        serde_json::to_string_pretty(&v).map_err(|e| Error::Numerical(e.to_string()))
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let mut v: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Format { path: path.into(), reason: e.to_string() })?;
        if let Some(metrics) = v.get_mut("metrics").and_then(|m| m.as_object_mut()) {
            for m in metrics.values_mut() {
                let parsed = match m.get("value").and_then(|x| x.as_str()) {
                    Some("inf") => Some(f64::MAX),
                    Some("-inf") => Some(f64::MIN),
                    _ => None,
                };
                if let Some(p) = parsed {
                    m["value"] = serde_json::json!(p);
                }
            }
        }
        let mut report: Self = serde_json::from_value(v).map_err(|e| Error::Format { path: path.into(), reason: e.to_string() })?;
        for m in report.metrics.values_mut() {
            if m.value == f64::MAX {
                m.value = f64::INFINITY;
            } else if m.value == f64::MIN {
                m.value = f64::NEG_INFINITY;
            }
        }
        Ok(report)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let kv = dir.join("metrics.txt");
        std::fs::write(&kv, self.to_key_value()).map_err(|e| Error::io(&kv, e))?;
        let js = dir.join("metrics.json");
        std::fs::write(&js, self.to_json()?).map_err(|e| Error::io(&js, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}

/// Markdown table with one row per report and one column per metric name.
pub fn comparison_table(reports: &[(String, MetricReport)]) -> String {
    let names: std::collections::BTreeSet<&String> = reports.iter().flat_map(|(_, r)| r.metrics.keys()).collect();
    let mut s = String::from("| run |");
    for n in &names {
        let _ = write!(s, " {n} |");
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(names.len()));
    s.push('\n');
    for (label, r) in reports {
        let _ = write!(s, "| {label} |");
        for n in &names {
            match r.metrics.get(*n) {
                Some(m) => match m.std {
                    Some(sd) => {
                        let _ = write!(s, " {} ± {} |", fmt_f64(m.value), fmt_f64(sd));
                    }
                    None => {
                        let _ = write!(s, " {} |", fmt_f64(m.value));
                    }
                },
                None => s.push_str(" - |"),
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_with_infinity() -> Result<()> {
        let mut r = MetricReport::new("abc");
        r.insert("psnr", f64::INFINITY, None, "pixel", 1);
        r.insert("fvd16", 12.5, None, "random-conv3d(seed=0)", 16);
        r.insert("is", 2.0, Some(0.1), "softmax", 16);
        let back = MetricReport::from_json(&r.to_json()?, Path::new("m.json"))?;
        assert_eq!(back, r);
        assert!(r.to_key_value().contains("psnr.value=inf"));
        assert!(comparison_table(&[("a".into(), r)]).contains("2.000000 ± 0.100000"));
        Ok(())
    }
}
