//! Per-round experiment records and their JSON-lines serialization.
//!
//! One line per round, stable field order (maps are sorted), so a rerun
//! with the same seed reproduces the file byte for byte.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::server::HeadAggregation;

/// What one aggregation did to one head, reduced to serializable facts.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HeadDiagnostics {
    /// Normalized weight per kept submission tag.
    pub kept: BTreeMap<String, f64>,
    pub discarded: Vec<String>,
    pub global_before: f64,
    pub global_after: f64,
    pub updated: bool,
}

impl From<&HeadAggregation> for HeadDiagnostics {
    fn from(h: &HeadAggregation) -> Self {
        HeadDiagnostics {
            kept: h.weights.kept.clone(),
            discarded: h.weights.discarded.iter().cloned().collect(),
            global_before: h.global_before,
            global_after: h.global_after,
            updated: h.updated,
        }
    }
}

/// Everything measured in one global round.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RoundReport {
    /// 1-based, strictly increasing within a run.
    pub round: usize,
    pub protocol: String,
    /// Mean training loss per phase, keyed by phase name; phases that did
    /// not run are absent.
    pub losses: BTreeMap<String, f64>,
    /// Validation score per head after this round's aggregation.
    pub validation: BTreeMap<String, f64>,
    pub test_auroc: BTreeMap<String, f64>,
    pub test_auprc: BTreeMap<String, f64>,
    pub aggregation: BTreeMap<String, HeadDiagnostics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub fn write_reports<W: Write>(mut w: W, reports: &[RoundReport]) -> Result<()> {
    for r in reports {
        let line = serde_json::to_string(r)
            .map_err(|e| Error::Run(format!("report serialization failed: {e}")))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_reports<R: BufRead>(r: R) -> Result<Vec<RoundReport>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let report: RoundReport = serde_json::from_str(&line)
            .map_err(|e| Error::Run(format!("line {}: bad round record: {e}", i + 1)))?;
        out.push(report);
    }
    Ok(out)
}

pub fn save_reports(path: &std::path::Path, reports: &[RoundReport]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_reports(std::io::BufWriter::new(file), reports)
}

pub fn load_reports(path: &std::path::Path) -> Result<Vec<RoundReport>> {
    let file = std::fs::File::open(path)?;
    read_reports(std::io::BufReader::new(file))
}
