use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};

use serde::{Deserialize, Serialize};

use super::artifacts as a;
use super::config::{Arm, ExperimentConfig};
use super::report::RunReport;
use super::stages::{io_err, run_stage, Stage};
use super::{PipelineError, StageFailure};
use crate::drain::{split_header, HeaderPattern};
use crate::metrics::MetricsReport;
use crate::session::{window_spans, LabeledWindow, Session, NUM_SPECIALS, PAD, UNK};

/// Most frequent raw tokens kept for the text arm.
pub const TEXT_VOCAB_CAP: usize = 4096;

/// Word-level vocabulary over raw message tokens. Token ids start after the
/// shared specials; anything outside the list maps to UNK.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextVocab {
    pub cap: usize,
    pub tokens: Vec<String>,
}

impl TextVocab {
    /// Keeps the `cap` most frequent tokens, ties broken by the token text.
    pub fn build(docs: &[Vec<String>], cap: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for doc in docs {
            for t in doc {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(y.0)));
        ranked.truncate(cap);
        Self {
            cap,
            tokens: ranked.into_iter().map(|(t, _)| t.to_string()).collect(),
        }
    }

    pub fn size(&self) -> usize {
        NUM_SPECIALS as usize + self.tokens.len()
    }

    fn table(&self) -> HashMap<&str, u32> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), NUM_SPECIALS + i as u32))
            .collect()
    }

    /// Truncates to `len` tokens and right-pads with PAD.
    pub fn encode(&self, tokens: &[String], len: usize) -> (Vec<u32>, usize) {
        encode_with(&self.table(), tokens, len)
    }
}

fn encode_with(table: &HashMap<&str, u32>, tokens: &[String], len: usize) -> (Vec<u32>, usize) {
    let mut ids: Vec<u32> = tokens
        .iter()
        .take(len)
        .map(|t| table.get(t.as_str()).copied().unwrap_or(UNK))
        .collect();
    let pad = len - ids.len();
    ids.resize(len, PAD);
    (ids, pad)
}

/// Raw whitespace tokens of the messages behind each window, in line order.
pub(super) fn window_texts(
    config: &ExperimentConfig,
    sessions: &[Session],
    windows: &[LabeledWindow],
) -> Result<Vec<Vec<String>>, StageFailure> {
    let by_id: HashMap<&str, &Session> = sessions.iter().map(|s| (s.session_id.as_str(), s)).collect();
    let mut line_sets = Vec::with_capacity(windows.len());
    for w in windows {
        let bad = || StageFailure::Invalid(format!("window {} does not match any session", w.window_id));
        let (sid, k) = w.window_id.rsplit_once('#').ok_or_else(bad)?;
        let k: usize = k.parse().map_err(|_| bad())?;
        let session = by_id.get(sid).ok_or_else(bad)?;
        let spans = window_spans(session.line_numbers.len(), config.window.length, config.window.stride)?;
        let span = spans.get(k).ok_or_else(bad)?.clone();
        line_sets.push(&session.line_numbers[span]);
    }

    let wanted: HashSet<usize> = line_sets.iter().flat_map(|ls| ls.iter().copied()).collect();
    let pattern = HeaderPattern::new(&config.drain.header_pattern)?;
    let path = &config.paths.logs;
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut content: HashMap<usize, Vec<String>> = HashMap::with_capacity(wanted.len());
    for (idx, line) in io::BufReader::new(file).lines().enumerate() {
        let n = idx + 1;
        let line = line.map_err(io_err(path))?;
        if wanted.contains(&n) {
            let raw = split_header(&line, n, &pattern)?;
            content.insert(n, raw.content.split_whitespace().map(str::to_string).collect());
        }
    }
    line_sets
        .into_iter()
        .map(|ls| {
            let mut tokens = Vec::new();
            for n in ls {
                let words = content
                    .get(n)
                    .ok_or_else(|| StageFailure::Invalid(format!("{}: line {n} missing", path.display())))?;
                tokens.extend(words.iter().cloned());
            }
            Ok(tokens)
        })
        .collect()
}

pub(super) fn encode_text_windows(
    vocab: &TextVocab,
    windows: &[LabeledWindow],
    texts: &[Vec<String>],
    len: usize,
) -> Vec<LabeledWindow> {
    let table = vocab.table();
    windows
        .iter()
        .zip(texts)
        .map(|(w, t)| {
            let (ids, pad_len) = encode_with(&table, t, len);
            LabeledWindow {
                window_id: w.window_id.clone(),
                event_ids: ids,
                label: w.label,
                pad_len,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: Arm,
    pub input: String,
    pub loss: String,
    pub best_epoch: usize,
    /// Best-epoch validation metrics.
    pub best_val: MetricsReport,
    /// Metrics of the reported split (test when drawn, else validation).
    pub eval: MetricsReport,
    pub manifest_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub manifest_hash: String,
    pub rows: Vec<AblationRow>,
    pub reports: Vec<RunReport>,
}

const SHARED: [&str; 9] = [
    a::TEMPLATES,
    a::STRUCTURED,
    a::REJECTS,
    a::PARSE_SUMMARY,
    a::SESSIONS,
    a::WINDOWS,
    a::SESSION_SUMMARY,
    a::DATASET,
    a::SPLIT_MANIFEST,
];

pub fn arm_dir_name(arm: Arm) -> String {
    format!("arm_{}", arm.name().to_lowercase())
}

fn write_ablation_csv(path: &std::path::Path, rows: &[AblationRow]) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "arm,input,loss,accuracy,precision,recall,f1,auc,best_epoch,best_val_f1,manifest_hash")?;
    for r in rows {
        let m = &r.eval;
        let auc = m.auc.map(|v| format!("{v:.6}")).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{auc},{},{:.6},{}",
            r.arm.name(),
            r.input,
            r.loss,
            m.accuracy,
            m.precision,
            m.recall,
            m.f1,
            r.best_epoch,
            r.best_val.f1,
            r.manifest_hash
        )?;
    }
    w.flush()
}

/// Parses, sessionizes and splits once, then trains and evaluates every arm
/// on that same split in `arm_a/`, `arm_b/` and `arm_c/`.
pub fn run_ablation(config: &ExperimentConfig) -> Result<AblationReport, PipelineError> {
    config.validate()?;
    let mut base = config.clone();
    base.arm = None;
    for stage in [Stage::Parse, Stage::Sessionize, Stage::Dataset] {
        run_stage(stage, &base)?;
    }

    let mut reports = Vec::new();
    for arm in Arm::ALL {
        let mut cfg = config.clone();
        cfg.arm = Some(arm);
        cfg.judge.enabled = false;
        cfg.paths.out_dir = config.paths.out_dir.join(arm_dir_name(arm));
        cfg.validate()?;
        let copy = |name: &str| -> Result<(), StageFailure> {
            fs::create_dir_all(&cfg.paths.out_dir).map_err(io_err(&cfg.paths.out_dir))?;
            let from = base.out(name);
            fs::copy(&from, cfg.out(name)).map_err(io_err(&from))?;
            Ok(())
        };
        for name in SHARED {
            copy(name).map_err(|source| PipelineError::Stage {
                stage: Stage::Train,
                source,
            })?;
        }
        for stage in Stage::ALL.into_iter().filter(|s| *s >= Stage::Train) {
            run_stage(stage, &cfg)?;
        }
        let report = RunReport::load(&cfg.out(a::REPORT)).map_err(|source| PipelineError::Stage {
            stage: Stage::Report,
            source,
        })?;
        reports.push(report);
    }

    let manifest_hash = reports[0].manifest_hash.clone();
    if reports.iter().any(|r| r.manifest_hash != manifest_hash) {
        return Err(PipelineError::Stage {
            stage: Stage::Dataset,
            source: StageFailure::Invalid("arms saw different split manifests".into()),
        });
    }
    let rows: Vec<AblationRow> = reports
        .iter()
        .map(|r| {
            let arm = r.config.arm.expect("arm set above");
            AblationRow {
                arm,
                input: if arm.uses_text() { "raw text" } else { "event ids" }.to_string(),
                loss: r.loss.to_string(),
                best_epoch: r.best_epoch,
                best_val: r.curve.epochs[r.best_epoch - 1].metrics.clone(),
                eval: r.metrics[&r.eval_split].clone(),
                manifest_hash: r.manifest_hash.clone(),
            }
        })
        .collect();
    let path = config.out(a::ABLATION);
    write_ablation_csv(&path, &rows).map_err(|e| PipelineError::Stage {
        stage: Stage::Report,
        source: io_err(&path)(e),
    })?;
    let by_arm: BTreeMap<&str, f64> = rows.iter().map(|r| (r.arm.name(), r.eval.f1)).collect();
    log::info!("ablation f1 by arm: {by_arm:?}");
    Ok(AblationReport {
        manifest_hash,
        rows,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn vocab_ranks_by_count_then_text() {
        let v = TextVocab::build(&[doc("b a c a"), doc("b d")], 3);
        assert_eq!(v.tokens, vec!["a", "b", "c"]);
        assert_eq!(v.size(), NUM_SPECIALS as usize + 3);
        let (ids, pad) = v.encode(&doc("a zzz c"), 5);
        assert_eq!(ids, vec![NUM_SPECIALS, UNK, NUM_SPECIALS + 2, PAD, PAD]);
        assert_eq!(pad, 2);
        let (ids, pad) = v.encode(&doc("a b c a b c"), 4);
        assert_eq!((ids.len(), pad), (4, 0));
    }
}
