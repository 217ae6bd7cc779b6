//! Report files: per-cell accuracy CSVs, the latency-vs-N CSV, and the JSON
//! run manifest. Files are written atomically (temp file + rename).

use std::fs;
use std::path::{Path, PathBuf};

use fstl_core::latency::{CurveRow, CURVE_CSV_HEADER};
use fstl_core::protocols::{ProtocolKind, RoundRecord};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

pub const ACCURACY_CSV_HEADER: &str =
    "round,protocol,n_vus,train_loss,test_accuracy,latency_s,uplink_params,downlink_params";

/// Renders one cell's round records as CSV.
pub fn accuracy_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from(ACCURACY_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.round,
            r.protocol,
            r.n_vus,
            r.train_loss,
            r.test_accuracy,
            r.latency_s,
            r.uplink_params,
            r.downlink_params
        ));
    }
    out
}

/// Renders the latency sweep as CSV.
pub fn latency_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from(CURVE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

pub fn cell_csv_name(protocol: ProtocolKind, n_vus: u32) -> String {
    format!("accuracy_{}_n{}.csv", protocol.name().to_ascii_lowercase(), n_vus)
}

/// Writes a file atomically within its directory.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Status of one (protocol, N) sweep cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellOutcome {
    pub protocol: ProtocolKind,
    pub n_vus: u32,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    pub rounds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_accuracy: Option<f64>,
}

/// The run manifest: everything needed to replay the run byte-for-byte
/// (plus wall-clock fields, which naturally vary between runs).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact_version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub cells: Vec<CellOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain_weights: Option<String>,
    pub wall_clock_s: f64,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn any_failed(&self) -> bool {
        self.cells.iter().any(|c| c.status != "ok")
    }
}

/// Prints a human-readable summary of a run directory's manifest.
pub fn summarize(dir: &Path) -> Result<String> {
    let manifest = Manifest::load(&dir.join("manifest.json"))?;
    let mut out = String::new();
    out.push_str(&format!(
        "run: seed {} | version {} | {:.1}s wall clock\n",
        manifest.seed, manifest.artifact_version, manifest.wall_clock_s
    ));
    out.push_str(&format!("out_dir: {}\n", manifest.config.out_dir.display()));
    out.push_str("cells:\n");
    for c in &manifest.cells {
        let acc = c
            .final_accuracy
            .map(|a| format!("{:.4}", a))
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "  {:>4} n={:<3} {:>6} rounds={:<3} final_accuracy={}\n",
            c.protocol.name(),
            c.n_vus,
            c.status,
            c.rounds,
            acc
        ));
        if let Some(err) = &c.error {
            out.push_str(&format!("       error: {err}\n"));
        }
    }
    if let Some(latency) = &manifest.latency_csv {
        out.push_str(&format!("latency curve: {latency}\n"));
    }
    Ok(out)
}

/// Resolves a manifest-relative file path.
pub fn resolve_in(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
