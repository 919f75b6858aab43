//! Machine-readable evaluation report.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalEntry {
    pub frame: u32,
    pub camera: u32,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub entries: Vec<EvalEntry>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvalReport {
    pub fn from_entries(entries: Vec<EvalEntry>) -> EvalReport {
        let n = entries.len().max(1) as f64;
        let mean_psnr = entries.iter().map(|e| e.psnr).sum::<f64>() / n;
        let mean_ssim = entries.iter().map(|e| e.ssim).sum::<f64>() / n;
        EvalReport {
            entries,
            mean_psnr,
            mean_ssim,
        }
    }
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Schema(format!("report serialization: {e}")))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}
