//! Stage orchestration: parse, sessionize, dataset, train, eval, judge,
//! compare, report, plus the three-arm ablation.
//!
//! Every stage reads only files written by earlier stages into the output
//! directory, so any stage can be rerun on its own or a run can resume from
//! a named stage.

mod ablation;
mod config;
mod report;
mod stages;

pub use ablation::{run_ablation, AblationReport, AblationRow, TextVocab, TEXT_VOCAB_CAP};
pub use config::{apply_override, derive_seed, Arm, DatasetConfig, ExperimentConfig, JudgeSettings, Paths, WindowConfig};
pub use report::{emit_report, RunReport};
pub use stages::{run_pipeline, run_stage, Stage};

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::drain::DrainError;
use crate::judge::JudgeError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::session::SessionError;
use crate::train::TrainError;

/// Artifact file names inside the output directory.
pub mod artifacts {
    pub const TEMPLATES: &str = "templates.csv";
    pub const STRUCTURED: &str = "structured.csv";
    pub const REJECTS: &str = "rejects.log";
    pub const PARSE_SUMMARY: &str = "parse_summary.json";
    pub const SESSIONS: &str = "sessions.jsonl";
    pub const WINDOWS: &str = "windows.jsonl";
    pub const SESSION_SUMMARY: &str = "sessions_summary.json";
    pub const DATASET: &str = "dataset.jsonl";
    pub const SPLIT_MANIFEST: &str = "split_manifest.json";
    pub const TEXT_VOCAB: &str = "text_vocab.json";
    pub const CHECKPOINT: &str = "checkpoint.json";
    pub const CURVE: &str = "curve.csv";
    pub const EPOCHS: &str = "epochs.csv";
    pub const TRAIN_SUMMARY: &str = "train_summary.json";
    pub const SCORES: &str = "scores.csv";
    pub const METRICS: &str = "metrics.json";
    pub const ROC: &str = "roc.csv";
    pub const CONFUSION: &str = "confusion.txt";
    pub const EVAL_SUMMARY: &str = "eval_summary.json";
    pub const VERDICTS: &str = "judge_verdicts.jsonl";
    pub const JUDGE_SUMMARY: &str = "judge_summary.json";
    pub const COMPARISON: &str = "comparison.csv";
    pub const COMPARISON_JSON: &str = "comparison.json";
    pub const REPORT: &str = "report.json";
    pub const SUMMARY: &str = "summary.txt";
    pub const RESOLVED_CONFIG: &str = "config.resolved.json";
    pub const ABLATION: &str = "ablation.csv";
}

/// Root cause of a failed stage.
#[derive(Debug, Error)]
pub enum StageFailure {
    #[error(transparent)]
    Drain(#[from] DrainError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Invalid(String),
}

impl StageFailure {
    /// Missing or malformed inputs, as opposed to a stage that ran and failed.
    pub fn is_data_error(&self) -> bool {
        match self {
            StageFailure::Drain(e) => matches!(e, DrainError::Io { .. } | DrainError::Csv { .. }),
            StageFailure::Session(e) => matches!(
                e,
                SessionError::Io { .. }
                    | SessionError::Format { .. }
                    | SessionError::ClassVanished { .. }
                    | SessionError::NotEnoughSamples { .. }
                    | SessionError::UnlabeledSession(_)
            ),
            StageFailure::Judge(e) => matches!(e, JudgeError::FixtureMissing { .. } | JudgeError::UnknownEventId { .. }),
            StageFailure::Metrics(_) | StageFailure::Io { .. } | StageFailure::Json { .. } => true,
            _ => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: StageFailure,
    },
}

impl PipelineError {
    /// 1 usage/config, 2 data error, 3 stage failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Stage { source, .. } if source.is_data_error() => 2,
            PipelineError::Stage { .. } => 3,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            PipelineError::Config(_) => None,
        }
    }
}
