use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stages::{write_json, STAGES};
use super::PipelineError;

/// Accuracy of one stage's model against the analytic Greeks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub stage: String,
    pub values_r2: f64,
    pub deltas_r2: f64,
    pub gammas_r2: f64,
    pub parameter_count: usize,
    pub hidden_widths: Vec<usize>,
    pub grid: usize,
    /// Per-point evaluation CSV, relative to the run directory.
    pub per_point: String,
    pub config_hash: String,
    /// Excluded from reproducibility comparisons.
    pub wall_time_s: f64,
}

impl RunReport {
    /// The report with timing removed, for run-to-run comparison.
    pub fn without_timing(&self) -> RunReport {
        RunReport {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub stages: Vec<RunReport>,
    pub missing: Vec<String>,
}

impl Summary {
    pub fn get(&self, stage: &str) -> Option<&RunReport> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    /// Values/Deltas/Gammas rows by stage columns.
    pub fn markdown(&self) -> String {
        let mut s = String::from("| R² |");
        for r in &self.stages {
            s += &format!(" {} |", r.stage);
        }
        s += "\n|---|";
        s += &"---:|".repeat(self.stages.len());
        s.push('\n');
        for (label, f) in rows() {
            s += &format!("| {label} |");
            for r in &self.stages {
                s += &format!(" {:.6} |", f(r));
            }
            s.push('\n');
        }
        s
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("metric");
        for r in &self.stages {
            s += &format!(",{}", r.stage);
        }
        s.push('\n');
        for (label, f) in rows() {
            s += &label.to_lowercase();
            for r in &self.stages {
                s += &format!(",{}", f(r));
            }
            s.push('\n');
        }
        s
    }
}

fn rows() -> [(&'static str, fn(&RunReport) -> f64); 3] {
    [
        ("Values", |r| r.values_r2),
        ("Deltas", |r| r.deltas_r2),
        ("Gammas", |r| r.gammas_r2),
    ]
}

/// Collects the stage reports present in `dir` and writes `summary.md`,
/// `summary.csv` and `summary.json`. Missing stages are skipped with a warning.
pub fn cmd_report(dir: &Path) -> Result<Summary, PipelineError> {
    let mut stages = Vec::new();
    let mut missing = Vec::new();
    for stage in STAGES {
        let path = dir.join(format!("{stage}.report.json"));
        match std::fs::read(&path) {
            Ok(bytes) => {
                let r: RunReport =
                    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Corrupt {
                        path: path.clone(),
                        msg: e.to_string(),
                    })?;
                stages.push(r);
            }
            Err(_) => {
                log::warn!("no report for stage {stage}; column omitted");
                missing.push(stage.to_string());
            }
        }
    }
    if stages.is_empty() {
        return Err(PipelineError::MissingArtifact(dir.join("baseline.report.json")));
    }
    let summary = Summary { stages, missing };
    let put = |name: &str, text: String| {
        std::fs::write(dir.join(name), text).map_err(|e| PipelineError::Io {
            path: dir.join(name),
            msg: e.to_string(),
        })
    };
    put("summary.md", summary.markdown())?;
    put("summary.csv", summary.csv())?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}
