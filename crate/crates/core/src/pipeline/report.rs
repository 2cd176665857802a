use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::artifacts as a;
use super::config::ExperimentConfig;
use super::stages::{io_err, read_json, write_json};
use super::StageFailure;
use crate::judge::{write_comparison, ComparisonRow, JudgeStats};
use crate::metrics::{write_roc_csv, ConfusionCounts, MetricsReport, RocPoint};
use crate::model::ModelConfig;
use crate::objectives::LossKind;
use crate::session::ClassCounts;
use crate::train::TrainingCurve;

/// Everything needed to audit or repeat a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub seeds: BTreeMap<String, u64>,
    pub dataset: BTreeMap<String, ClassCounts>,
    /// sha256 of `split_manifest.json`.
    pub manifest_hash: String,
    pub vocab_hash: String,
    /// Model config with the vocabulary size resolved.
    pub model: ModelConfig,
    pub loss: LossKind,
    pub curve: TrainingCurve,
    pub best_epoch: usize,
    pub eval_split: String,
    pub metrics: BTreeMap<String, MetricsReport>,
    pub confusion: ConfusionCounts,
    pub roc: Vec<RocPoint>,
    pub comparison: Vec<ComparisonRow>,
    pub judge: Option<JudgeStats>,
    pub wall_clock_secs: BTreeMap<String, f64>,
    pub artifacts: Vec<String>,
}

impl RunReport {
    pub fn load(path: &Path) -> Result<Self, StageFailure> {
        read_json(path)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let arm = self.config.arm.map_or("-", |a| a.name());
        let _ = writeln!(s, "seed {}  arm {arm}  loss {}", self.config.seed, self.loss);
        for (name, c) in &self.dataset {
            let _ = writeln!(s, "{name:<6} {:>6} windows, {:>5} anomalous", c.total, c.anomalous);
        }
        let _ = writeln!(s, "best epoch {} of {}", self.best_epoch, self.curve.epochs.len());
        if !self.curve.skipped.is_empty() {
            let _ = writeln!(s, "skipped steps {:?}", self.curve.skipped);
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<16} {:>8} {:>9} {:>6} {:>6} {:>6}", "model", "accuracy", "precision", "recall", "f1", "auc");
        for r in &self.comparison {
            let m = &r.metrics;
            let auc = m.auc.map_or("-".to_string(), |v| format!("{v:.3}"));
            let _ = writeln!(
                s,
                "{:<16} {:>8.3} {:>9.3} {:>6.3} {:>6.3} {auc:>6}",
                r.model, m.accuracy, m.precision, m.recall, m.f1
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{} confusion", self.eval_split);
        s.push_str(&self.confusion.grid());
        let total: f64 = self.wall_clock_secs.values().sum();
        let _ = writeln!(s, "\nwall clock {total:.1}s");
        s
    }
}

/// Writes `report.json`, `comparison.csv`, `curve.csv`, `roc.csv`,
/// `confusion.txt` and `summary.txt` from the report alone.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<(), StageFailure> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_json(&dir.join(a::REPORT), report)?;
    write_comparison(&dir.join(a::COMPARISON), &report.comparison)?;
    report.curve.write_steps(&dir.join(a::CURVE))?;
    let roc = dir.join(a::ROC);
    write_roc_csv(&roc, &report.roc).map_err(io_err(&roc))?;
    let confusion = dir.join(a::CONFUSION);
    fs::write(&confusion, report.confusion.grid()).map_err(io_err(&confusion))?;
    let summary = dir.join(a::SUMMARY);
    fs::write(&summary, report.summary()).map_err(io_err(&summary))
}
