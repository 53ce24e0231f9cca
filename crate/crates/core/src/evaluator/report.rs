use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::OverallReport;
use crate::error::{DymlError, Result};

pub const REPORT_SCHEMA: &str = "dyml-report/1";

/// Provenance attached to an emitted report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub config_hash: String,
    pub seed: u64,
    pub method: String,
    /// The resolved configuration, defaults included.
    pub config: serde_json::Value,
}

#[derive(Serialize)]
struct Envelope<'a> {
    schema: &'a str,
    #[serde(flatten)]
    report: &'a OverallReport,
}

/// Pretty JSON with a schema tag. NaN values are written as `null`.
pub fn write_report_json(path: &Path, report: &OverallReport) -> Result<()> {
    let text = serde_json::to_string_pretty(&Envelope { schema: REPORT_SCHEMA, report })
        .map_err(|e| DymlError::Format(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:.12}")
    }
}

/// One row per scale plus an `overall` row.
pub fn report_csv(report: &OverallReport) -> String {
    let (hash, seed, method) = match &report.meta {
        Some(m) => (m.config_hash.clone(), m.seed.to_string(), m.method.clone()),
        None => (String::new(), String::new(), String::new()),
    };
    let mut out = String::from("schema,config_hash,seed,method,scale");
    for k in &report.ranks {
        let _ = write!(out, ",R@{k}");
    }
    out.push_str(",mAP,ASI,queries,skipped\n");
    let prefix = format!("{REPORT_SCHEMA},{hash},{seed},{method}");
    for s in &report.scales {
        let _ = write!(out, "{prefix},{}", s.scale);
        for &c in &s.cmc {
            let _ = write!(out, ",{}", num(c));
        }
        let _ = writeln!(out, ",{},,{},{}", num(s.map), s.queries, s.skipped);
    }
    let _ = write!(out, "{prefix},overall");
    for &c in &report.cmc {
        let _ = write!(out, ",{}", num(c));
    }
    let _ = writeln!(out, ",{},{},{},0", num(report.map), num(report.asi), report.num_queries);
    out
}

pub fn write_report_csv(path: &Path, report: &OverallReport) -> Result<()> {
    std::fs::write(path, report_csv(report))?;
    Ok(())
}
