//! Desk-scale studies: accuracy comparison across modes and learning rates,
//! response-time measurement, and proximity traces.

mod comparison;
mod proximity;
pub mod svg;
mod timing;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub use comparison::{
    median, run_comparison, write_comparison, CellResult, ComparisonConfig, ComparisonReport, MedianRow,
    OrderingVerdict, REFERENCE_TABLE,
};
pub use proximity::{
    detect_proximity, object_preset, proximity_csv, run_proximity, write_proximity, ProximityConfig,
    ProximityTrace, OBJECT_PRESETS,
};
pub use timing::{
    run_timing, timing_csv, write_timing, LatencyStats, ReceptionConstants, TimingConfig, TimingReport, TimingRow,
    REFERENCE_TIMING, TIMING_HEADER,
};

/// Writes `index.csv` listing `artifacts` relative to `dir`.
pub fn write_index(dir: &Path, artifacts: &[PathBuf]) -> Result<PathBuf> {
    let mut out = String::from("artifact\n");
    for a in artifacts {
        let rel = a.strip_prefix(dir).unwrap_or(a);
        out.push_str(&format!("{}\n", rel.display()));
    }
    let path = dir.join("index.csv");
    std::fs::write(&path, out).map_err(Error::io(&path))?;
    Ok(path)
}
