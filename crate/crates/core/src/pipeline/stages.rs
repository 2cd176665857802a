use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::ablation::{encode_text_windows, window_texts, TextVocab};
use super::artifacts as a;
use super::config::ExperimentConfig;
use super::report::{emit_report, RunReport};
use super::{PipelineError, StageFailure};
use crate::drain::{export_rejects, export_structured, export_templates, import_structured, import_templates, parse_file};
use crate::judge::{
    build_prompt, classify_remote, compare, template_table, write_comparison, write_verdicts, ComparisonRow, HttpTransport,
    JudgeStats, Predictions, Verdict,
};
use crate::metrics::{roc_curve, write_roc_csv, MetricsReport, RocPoint, DEFAULT_THRESHOLD};
use crate::model::{hash_bytes, pretrain_lm, Checkpoint, ModelConfig, ModelParams, PretrainReport};
use crate::session::{
    build_sessions, draw_test_set, read_label_table, read_windows, split, stratified_sample, windowize_all, write_windows,
    DatasetSplit, LabeledWindow, Session, SplitManifest, NUM_SPECIALS,
};
use crate::train::{evaluate, train, TrainingCurve};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Parse,
    Sessionize,
    Dataset,
    Train,
    Eval,
    Judge,
    Compare,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Parse,
        Stage::Sessionize,
        Stage::Dataset,
        Stage::Train,
        Stage::Eval,
        Stage::Judge,
        Stage::Compare,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Parse => "parse",
            Stage::Sessionize => "sessionize",
            Stage::Dataset => "dataset",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Judge => "judge",
            Stage::Compare => "compare",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

pub(super) fn io_err(path: &Path) -> impl Fn(io::Error) -> StageFailure + '_ {
    move |source| StageFailure::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Pretty JSON with a trailing newline.
pub(super) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StageFailure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| StageFailure::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub(super) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StageFailure> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| StageFailure::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), StageFailure> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|source| StageFailure::Json {
            path: path.to_path_buf(),
            source,
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub(super) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StageFailure> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for line in io::BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| StageFailure::Json {
            path: path.to_path_buf(),
            source,
        })?);
    }
    Ok(out)
}

pub(super) fn hash_file(path: &Path) -> Result<String, StageFailure> {
    Ok(hash_bytes(&fs::read(path).map_err(io_err(path))?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(super) struct ParseSummary {
    pub lines: usize,
    pub parsed: usize,
    pub rejects: usize,
    pub templates: usize,
    pub multi_block_lines: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(super) struct SessionSummary {
    pub sessions: usize,
    pub anomalous_sessions: usize,
    pub quarantined: Vec<String>,
    pub rows_without_block: usize,
    pub windows: usize,
    pub anomalous_windows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(super) struct TrainSummary {
    pub arm: Option<String>,
    pub model: ModelConfig,
    pub vocab_hash: String,
    pub manifest_hash: String,
    pub best_epoch: usize,
    pub curve: TrainingCurve,
    pub pretrain: Option<PretrainReport>,
    pub seeds: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(super) struct EvalSummary {
    /// `test` when a test set was drawn, `val` otherwise.
    pub eval_split: String,
    pub metrics: BTreeMap<String, MetricsReport>,
    pub untrained: MetricsReport,
    pub roc: Vec<RocPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(super) struct JudgeSummary {
    pub enabled: bool,
    pub model: String,
    pub eval_split: String,
    pub stats: Option<JudgeStats>,
}

fn seeds(config: &ExperimentConfig) -> BTreeMap<String, u64> {
    ["dataset", "init", "pretrain", "train"]
        .into_iter()
        .map(|s| (s.to_string(), config.stage_seed(s)))
        .collect()
}

fn parse_stage(config: &ExperimentConfig) -> Result<(), StageFailure> {
    let corpus = parse_file(&config.paths.logs, &config.drain)?;
    export_templates(&config.out(a::TEMPLATES), corpus.tree.templates())?;
    export_structured(&config.out(a::STRUCTURED), &corpus.rows)?;
    export_rejects(&config.out(a::REJECTS), &corpus.rejects)?;
    let summary = ParseSummary {
        lines: corpus.rows.len() + corpus.rejects.len(),
        parsed: corpus.rows.len(),
        rejects: corpus.rejects.len(),
        templates: corpus.tree.templates().len(),
        multi_block_lines: corpus.multi_block_lines,
    };
    log::info!(
        "parsed {} lines into {} templates ({} rejected)",
        summary.parsed,
        summary.templates,
        summary.rejects
    );
    write_json(&config.out(a::PARSE_SUMMARY), &summary)
}

fn sessionize_stage(config: &ExperimentConfig) -> Result<(), StageFailure> {
    let labels = read_label_table(&config.paths.labels)?;
    let rows = import_structured(&config.out(a::STRUCTURED))?;
    let build = build_sessions(&rows, &labels);
    if !build.quarantined.is_empty() {
        log::warn!("{} block(s) have no label and were left out", build.quarantined.len());
    }
    let windows = windowize_all(&build.sessions, config.window.length, config.window.stride)?;
    write_jsonl(&config.out(a::SESSIONS), &build.sessions)?;
    write_windows(&config.out(a::WINDOWS), &windows)?;
    let summary = SessionSummary {
        sessions: build.sessions.len(),
        anomalous_sessions: build.sessions.iter().filter(|s| s.label == 1).count(),
        quarantined: build.quarantined,
        rows_without_block: build.rows_without_block,
        windows: windows.len(),
        anomalous_windows: windows.iter().filter(|w| w.label == 1).count(),
    };
    log::info!("{} sessions, {} windows", summary.sessions, summary.windows);
    write_json(&config.out(a::SESSION_SUMMARY), &summary)
}

fn dataset_stage(config: &ExperimentConfig) -> Result<(), StageFailure> {
    let windows = read_windows(&config.out(a::WINDOWS))?;
    let seed = config.stage_seed("dataset");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = match config.dataset.sample_size {
        Some(n) => stratified_sample(&windows, n, &mut rng)?,
        None => windows.clone(),
    };
    let mut ds = split(&pool, config.dataset.train_fraction, seed, &mut rng)?;
    if config.dataset.test_size > 0 {
        let used: HashSet<&str> = pool.iter().map(|w| w.window_id.as_str()).collect();
        ds.test = draw_test_set(
            &windows,
            &used,
            config.dataset.test_size,
            config.dataset.test_anomaly_rate,
            &mut rng,
        )?;
    }
    let all: Vec<LabeledWindow> = ds.train.iter().chain(&ds.val).chain(&ds.test).cloned().collect();
    write_windows(&config.out(a::DATASET), &all)?;
    let manifest = SplitManifest::of(&ds);
    log::info!(
        "dataset: {} train / {} val / {} test",
        ds.train.len(),
        ds.val.len(),
        ds.test.len()
    );
    write_json(&config.out(a::SPLIT_MANIFEST), &manifest)
}

fn load_split(config: &ExperimentConfig) -> Result<DatasetSplit, StageFailure> {
    let manifest: SplitManifest = read_json(&config.out(a::SPLIT_MANIFEST))?;
    let windows = read_windows(&config.out(a::DATASET))?;
    Ok(manifest.resolve(&windows)?)
}

/// Model inputs for one run: the split in the arm's token space, the
/// resolved model config and the vocabulary hash.
struct Inputs {
    split: DatasetSplit,
    model: ModelConfig,
    vocab_hash: String,
}

fn prepare_inputs(config: &ExperimentConfig, build_vocab: bool) -> Result<Inputs, StageFailure> {
    let split = load_split(config)?;
    let mut model = config.model.clone();
    if !config.uses_text() {
        let templates = import_templates(&config.out(a::TEMPLATES))?;
        let max_id = templates.iter().map(|t| t.event_id).max().map_or(0, |m| m + 1);
        model.vocab_size = (NUM_SPECIALS + max_id) as usize;
        model.validate()?;
        model.check_window(config.window.length)?;
        return Ok(Inputs {
            split,
            model,
            vocab_hash: hash_file(&config.out(a::TEMPLATES))?,
        });
    }

    let seq_len = model.max_seq_len - 1;
    let sessions: Vec<Session> = read_jsonl(&config.out(a::SESSIONS))?;
    let texts = |ws: &[LabeledWindow]| window_texts(config, &sessions, ws);
    let (train_t, val_t, test_t) = (texts(&split.train)?, texts(&split.val)?, texts(&split.test)?);
    let vocab_path = config.out(a::TEXT_VOCAB);
    let vocab = if build_vocab {
        let v = TextVocab::build(&train_t, super::ablation::TEXT_VOCAB_CAP);
        write_json(&vocab_path, &v)?;
        v
    } else {
        read_json(&vocab_path)?
    };
    model.vocab_size = vocab.size();
    model.validate()?;
    let split = DatasetSplit {
        train: encode_text_windows(&vocab, &split.train, &train_t, seq_len),
        val: encode_text_windows(&vocab, &split.val, &val_t, seq_len),
        test: encode_text_windows(&vocab, &split.test, &test_t, seq_len),
        ..split
    };
    Ok(Inputs {
        split,
        model,
        vocab_hash: hash_file(&vocab_path)?,
    })
}

fn initial_params(config: &ExperimentConfig, model: &ModelConfig) -> Result<ModelParams, StageFailure> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.stage_seed("init"));
    Ok(ModelParams::init(model, &mut rng)?)
}

fn train_stage(config: &ExperimentConfig) -> Result<(), StageFailure> {
    let inputs = prepare_inputs(config, true)?;
    let mut params = initial_params(config, &inputs.model)?;
    let mut pretrain = None;
    if config.pretrain.steps > 0 {
        let corpus: Vec<Vec<u32>> = inputs.split.train.iter().map(|w| w.event_ids.clone()).collect();
        let mut pconfig = config.pretrain.clone();
        pconfig.seed = config.stage_seed("pretrain");
        let (p, report) = pretrain_lm(params, &inputs.model, &corpus, &pconfig)?;
        log::info!(
            "pretraining: held-out loss {:.4} -> {:.4}",
            report.initial_heldout_loss,
            report.final_heldout_loss
        );
        params = p;
        pretrain = Some(report);
    }
    let mut tconfig = config.train.clone();
    tconfig.seed = config.stage_seed("train");
    tconfig.loss = config.effective_loss();
    let outcome = train(params, &inputs.model, &inputs.split, &tconfig)?;

    Checkpoint::new(&inputs.model, &outcome.best, tconfig.seed, &inputs.vocab_hash).save(&config.out(a::CHECKPOINT))?;
    outcome.curve.write_steps(&config.out(a::CURVE))?;
    outcome.curve.write_epochs(&config.out(a::EPOCHS))?;
    let summary = TrainSummary {
        arm: config.arm.map(|arm| arm.name().to_string()),
        model: inputs.model,
        vocab_hash: inputs.vocab_hash,
        manifest_hash: hash_file(&config.out(a::SPLIT_MANIFEST))?,
        best_epoch: outcome.best_epoch,
        curve: outcome.curve,
        pretrain,
        seeds: seeds(config),
    };
    write_json(&config.out(a::TRAIN_SUMMARY), &summary)
}

/// The split that eval, judge and compare report on.
fn eval_windows(split: &DatasetSplit) -> (&'static str, &[LabeledWindow]) {
    if split.test.is_empty() {
        ("val", &split.val)
    } else {
        ("test", &split.test)
    }
}

fn labels(windows: &[LabeledWindow]) -> Vec<u8> {
    windows.iter().map(|w| w.label).collect()
}

fn eval_stage(config: &ExperimentConfig) -> Result<(), StageFailure> {
    let inputs = prepare_inputs(config, false)?;
    let checkpoint = Checkpoint::load(&config.out(a::CHECKPOINT), Some(&inputs.vocab_hash))?;
    if checkpoint.config != inputs.model {
        return Err(StageFailure::Invalid("checkpoint model config differs from the resolved config".into()));
    }
    let params = checkpoint.model_params()?;
    let loss = config.effective_loss();

    let mut metrics = BTreeMap::new();
    for (name, ws) in [("val", &inputs.split.val), ("test", &inputs.split.test)] {
        if ws.is_empty() {
            continue;
        }
        let (scores, _) = evaluate(&params, &inputs.model, ws, &loss)?;
        metrics.insert(name.to_string(), MetricsReport::from_scores(&scores, &labels(ws), DEFAULT_THRESHOLD)?);
    }

    let (eval_split, ws) = eval_windows(&inputs.split);
    let (scores, _) = evaluate(&params, &inputs.model, ws, &loss)?;
    let untrained = initial_params(config, &inputs.model)?;
    let (base_scores, _) = evaluate(&untrained, &inputs.model, ws, &loss)?;
    let y = labels(ws);

    let path = config.out(a::SCORES);
    let mut w = csv::Writer::from_path(&path).map_err(|e| StageFailure::Invalid(format!("{}: {e}", path.display())))?;
    let rows = (|| -> Result<(), csv::Error> {
        w.write_record(["window_id", "label", "score", "untrained_score"])?;
        for ((win, s), b) in ws.iter().zip(&scores).zip(&base_scores) {
            w.write_record([win.window_id.clone(), win.label.to_string(), s.to_string(), b.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })();
    rows.map_err(|e| StageFailure::Invalid(format!("{}: {e}", path.display())))?;

    let roc = if y.contains(&0) && y.contains(&1) {
        roc_curve(&scores, &y)?
    } else {
        Vec::new()
    };
    write_roc_csv(&config.out(a::ROC), &roc).map_err(io_err(&config.out(a::ROC)))?;
    let report = &metrics[eval_split];
    fs::write(config.out(a::CONFUSION), report.counts.grid()).map_err(io_err(&config.out(a::CONFUSION)))?;
    log::info!(
        "{eval_split}: f1 {:.4} precision {:.4} recall {:.4} ({})",
        report.f1,
        report.precision,
        report.recall,
        report.counts
    );
    write_json(&config.out(a::METRICS), &metrics)?;
    let summary = EvalSummary {
        eval_split: eval_split.to_string(),
        untrained: MetricsReport::from_scores(&base_scores, &y, DEFAULT_THRESHOLD)?,
        metrics,
        roc,
    };
    write_json(&config.out(a::EVAL_SUMMARY), &summary)
}

fn judge_stage(config: &ExperimentConfig) -> Result<(), StageFailure> {
    let split = load_split(config)?;
    let (eval_split, ws) = eval_windows(&split);
    let mut summary = JudgeSummary {
        enabled: config.judge.enabled,
        model: config.judge.config.model.clone(),
        eval_split: eval_split.to_string(),
        stats: None,
    };
    if !config.judge.enabled {
        log::info!("judge disabled");
        let _ = fs::remove_file(config.out(a::VERDICTS));
        return write_json(&config.out(a::JUDGE_SUMMARY), &summary);
    }
    let templates = import_templates(&config.out(a::TEMPLATES))?;
    let table = template_table(&templates);
    let prompts = ws
        .iter()
        .map(|w| Ok((w.window_id.clone(), build_prompt(w, &table, &config.judge.config.instruction)?)))
        .collect::<Result<Vec<_>, StageFailure>>()?;
    let transport = HttpTransport::new(&config.judge.config)?;
    let run = classify_remote(&config.judge.config, &prompts, &transport)?;
    write_verdicts(&config.out(a::VERDICTS), &run.verdicts)?;
    log::info!(
        "judge: {} verdicts ({} live, {} cached, {} fixtures, {} unparseable)",
        run.verdicts.len(),
        run.stats.live,
        run.stats.cache,
        run.stats.fixture,
        run.stats.unparseable
    );
    summary.stats = Some(run.stats);
    write_json(&config.out(a::JUDGE_SUMMARY), &summary)
}

fn read_scores(path: &Path) -> Result<(HashMap<String, f64>, HashMap<String, f64>), StageFailure> {
    let bad = |e: &dyn fmt::Display| StageFailure::Invalid(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(&e))?;
    let mut trained = HashMap::new();
    let mut untrained = HashMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(&e))?;
        let num = |i: usize| rec.get(i).unwrap_or("").parse::<f64>().map_err(|e| bad(&e));
        let id = rec.get(0).unwrap_or("").to_string();
        trained.insert(id.clone(), num(2)?);
        untrained.insert(id, num(3)?);
    }
    Ok((trained, untrained))
}

fn compare_stage(config: &ExperimentConfig) -> Result<(), StageFailure> {
    let split = load_split(config)?;
    let (_, ws) = eval_windows(&split);
    let (trained, untrained) = read_scores(&config.out(a::SCORES))?;
    let judge: JudgeSummary = read_json(&config.out(a::JUDGE_SUMMARY))?;
    let verdicts: Vec<Verdict> = if judge.enabled {
        read_jsonl(&config.out(a::VERDICTS))?
    } else {
        Vec::new()
    };
    let mut models = vec![
        ("untrained", Predictions::Scores(&untrained)),
        ("classifier", Predictions::Scores(&trained)),
    ];
    if judge.enabled {
        models.push((judge.model.as_str(), Predictions::Verdicts(&verdicts)));
    }
    let rows = compare(&models, ws)?;
    write_comparison(&config.out(a::COMPARISON), &rows)?;
    write_json(&config.out(a::COMPARISON_JSON), &rows)
}

fn list_artifacts(dir: &Path) -> Result<Vec<String>, StageFailure> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        if entry.file_type().map_err(io_err(dir))?.is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    for extra in [a::REPORT, a::SUMMARY, a::COMPARISON, a::CURVE, a::ROC, a::CONFUSION] {
        names.push(extra.to_string());
    }
    names.sort();
    names.dedup();
    Ok(names)
}

fn report_stage(config: &ExperimentConfig) -> Result<(), StageFailure> {
    let manifest: SplitManifest = read_json(&config.out(a::SPLIT_MANIFEST))?;
    let train: TrainSummary = read_json(&config.out(a::TRAIN_SUMMARY))?;
    let eval: EvalSummary = read_json(&config.out(a::EVAL_SUMMARY))?;
    let comparison: Vec<ComparisonRow> = read_json(&config.out(a::COMPARISON_JSON))?;
    let judge: JudgeSummary = read_json(&config.out(a::JUDGE_SUMMARY))?;
    let timings: BTreeMap<String, f64> = read_json(&config.out(TIMINGS)).unwrap_or_default();
    let confusion = eval.metrics[&eval.eval_split].counts;
    let report = RunReport {
        config: config.clone(),
        seeds: train.seeds,
        dataset: manifest.counts,
        manifest_hash: hash_file(&config.out(a::SPLIT_MANIFEST))?,
        vocab_hash: train.vocab_hash,
        model: train.model,
        loss: config.effective_loss(),
        curve: train.curve,
        best_epoch: train.best_epoch,
        eval_split: eval.eval_split,
        metrics: eval.metrics,
        confusion,
        roc: eval.roc,
        comparison,
        judge: judge.stats,
        wall_clock_secs: timings,
        artifacts: list_artifacts(&config.paths.out_dir)?,
    };
    emit_report(&report, &config.paths.out_dir)
}

const TIMINGS: &str = "timings.json";

fn record_timing(config: &ExperimentConfig, stage: Stage, secs: f64) -> Result<(), StageFailure> {
    let path = config.out(TIMINGS);
    let mut timings: BTreeMap<String, f64> = read_json(&path).unwrap_or_default();
    timings.insert(stage.name().to_string(), secs);
    write_json(&path, &timings)
}

/// Runs one stage on the artifacts already present in the output directory.
pub fn run_stage(stage: Stage, config: &ExperimentConfig) -> Result<(), PipelineError> {
    let wrap = |source| PipelineError::Stage { stage, source };
    let out = &config.paths.out_dir;
    fs::create_dir_all(out).map_err(|e| wrap(io_err(out)(e)))?;
    write_json(&config.out(a::RESOLVED_CONFIG), config).map_err(wrap)?;
    log::info!("stage {stage}");
    let started = Instant::now();
    let result = match stage {
        Stage::Parse => parse_stage(config),
        Stage::Sessionize => sessionize_stage(config),
        Stage::Dataset => dataset_stage(config),
        Stage::Train => train_stage(config),
        Stage::Eval => eval_stage(config),
        Stage::Judge => judge_stage(config),
        Stage::Compare => compare_stage(config),
        Stage::Report => report_stage(config),
    };
    result.map_err(wrap)?;
    if stage != Stage::Report {
        record_timing(config, stage, started.elapsed().as_secs_f64()).map_err(wrap)?;
    }
    Ok(())
}

/// Runs every stage from `resume_from` (or the first) to the end and
/// returns the written report.
pub fn run_pipeline(config: &ExperimentConfig, resume_from: Option<Stage>) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let first = resume_from.unwrap_or(Stage::Parse);
    for stage in Stage::ALL.into_iter().filter(|s| *s >= first) {
        run_stage(stage, config)?;
    }
    RunReport::load(&config.out(a::REPORT)).map_err(|source| PipelineError::Stage {
        stage: Stage::Report,
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip_in_order() {
        for (i, s) in Stage::ALL.iter().enumerate() {
            assert_eq!(s.name().parse::<Stage>().unwrap(), *s);
            if i > 0 {
                assert!(Stage::ALL[i - 1] < *s);
            }
        }
        assert!("ablate".parse::<Stage>().is_err());
    }
}
