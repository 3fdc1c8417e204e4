//! On-disk layout of built summaries and sketch directories.

use std::path::Path;

use serde::{Deserialize, Serialize};

use cts_core::inference::SketchSet;
use cts_core::program::ProgramGraph;
use cts_core::{Error, Result, TTSketch};

/// `build.json`: what `cts build` wrote.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildManifest {
    pub task: String,
    pub programs: Vec<SummaryEntry>,
    pub total_elements: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub id: String,
    pub dims: Vec<usize>,
    pub elements: u64,
    pub node_count: usize,
    pub file: String,
}

impl BuildManifest {
    pub fn load(dir: &Path) -> Result<BuildManifest> {
        let path = dir.join("build.json");
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Internal(format!("manifest encode: {e}")))?;
        std::fs::write(dir.join("build.json"), json)?;
        Ok(())
    }
}

/// `sketches.json`: what `cts sketch` wrote.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SketchIndex {
    pub task: String,
    pub rank: String,
    pub seed: u64,
    pub ids: Vec<String>,
}

impl SketchIndex {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Internal(format!("index encode: {e}")))?;
        std::fs::write(dir.join("sketches.json"), json)?;
        Ok(())
    }
}

/// Per-sub-program error report emitted next to the sketches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SketchReport {
    pub entries: Vec<SketchReportEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SketchReportEntry {
    pub id: String,
    pub ranks: Vec<usize>,
    pub parameter_count: usize,
    /// sqrt of summed squared truncation errors.
    pub error_bound: f64,
    /// Dense reconstruction error, when within the element budget.
    pub frobenius_error: Option<f64>,
    /// Largest entrywise deviation, when within the element budget.
    pub max_abs_deviation: Option<f64>,
}

impl SketchReport {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Internal(format!("report encode: {e}")))?;
        std::fs::write(dir.join("sketch_report.json"), json)?;
        Ok(())
    }
}

/// Loads the sketch of every distinct sub-program the graph uses.
pub fn load_sketches_for(graph: &ProgramGraph, dir: &Path) -> Result<SketchSet> {
    let mut set = SketchSet::new();
    for sp in &graph.programs {
        let id = sp.id();
        if set.get(&id).is_some() {
            continue;
        }
        let sketch = TTSketch::load(dir, &id)?;
        set.insert(id, sketch);
    }
    Ok(set)
}
