use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use mcdm_core::metrics::{comparison_table, MetricReport};

use crate::ablation::AblationTable;

/// Metric files named directly or found inside run directories; every run under
/// `cache` when `inputs` is empty.
pub fn collect_reports(inputs: &[PathBuf], cache: &Path) -> Result<Vec<(String, MetricReport, Option<AblationTable>)>> {
    let mut dirs: Vec<PathBuf> = Vec::new();
    if inputs.is_empty() {
        if let Ok(entries) = std::fs::read_dir(cache) {
            for e in entries.flatten() {
                if e.path().join("metrics.json").exists() || e.path().join("ablation.json").exists() {
                    dirs.push(e.path());
                }
            }
        }
        dirs.sort();
    } else {
        for p in inputs {
            dirs.push(if p.is_file() { p.parent().map(Path::to_path_buf).unwrap_or_default() } else { p.clone() });
        }
    }
    if dirs.is_empty() {
        bail!("no metric reports found under {}", cache.display());
    }
    let mut out = Vec::new();
    for d in dirs {
        let label = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| d.display().to_string());
        let metrics = d.join("metrics.json");
        let report = if metrics.exists() { MetricReport::read(&metrics)? } else { MetricReport::new(label.clone()) };
        let abl = d.join("ablation.json");
        let table = if abl.exists() { Some(serde_json::from_str(&std::fs::read_to_string(&abl)?)?) } else { None };
        if !metrics.exists() && table.is_none() {
            bail!("{} holds neither metrics.json nor ablation.json", d.display());
        }
        out.push((label, report, table));
    }
    Ok(out)
}

pub fn render(reports: &[(String, MetricReport, Option<AblationTable>)]) -> String {
    let mut s = String::from("# Metrics\n\n");
    let with_metrics: Vec<(String, MetricReport)> =
        reports.iter().filter(|(_, r, _)| !r.metrics.is_empty()).map(|(l, r, _)| (l.clone(), r.clone())).collect();
    s.push_str(&comparison_table(&with_metrics));
    let mut embedders: Vec<String> = with_metrics
        .iter()
        .flat_map(|(_, r)| r.metrics.iter().map(|(k, m)| format!("- {k}: {} (clip length {})", m.embedder, m.clip_len)))
        .collect();
    embedders.sort();
    embedders.dedup();
    if !embedders.is_empty() {
        s.push_str("\nFeature extractors:\n");
        s.push_str(&embedders.join("\n"));
        s.push('\n');
    }
    for (label, _, table) in reports {
        if let Some(t) = table {
            s.push_str(&format!("\n# Ablation ({label})\n\n"));
            s.push_str(&t.to_markdown());
        }
    }
    s
}
