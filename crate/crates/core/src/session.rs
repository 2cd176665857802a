//! Block-ID sessions, fixed-length labeled windows, stratified sampling and
//! train/validation splits.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drain::StructuredRow;

/// Reserved vocabulary slots. Mined event `e` becomes token `e + NUM_SPECIALS`.
pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
/// Reserved for a final class token; the classifier reads out the last real
/// token instead, so nothing emits it today.
pub const CLS: u32 = 2;
pub const NUM_SPECIALS: u32 = 3;

pub fn token_for_event(event_id: u32) -> u32 {
    event_id + NUM_SPECIALS
}

/// Inverse of [`token_for_event`]; `None` for special tokens.
pub fn event_for_token(token: u32) -> Option<u32> {
    token.checked_sub(NUM_SPECIALS)
}

static BLOCK_ID: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"blk_-?\d+").expect("valid regex"));

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("block {0} has no entry in the label table")]
    UnlabeledSession(String),
    #[error("class {class} would receive no samples ({context})")]
    ClassVanished { class: u8, context: String },
    #[error("requested {requested} samples but only {available} are available ({context})")]
    NotEnoughSamples {
        requested: usize,
        available: usize,
        context: String,
    },
    #[error("invalid window settings: {0}")]
    BadWindow(String),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SessionError + '_ {
    move |source| SessionError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// First `blk_<digits>` (optionally negative) in a raw message.
pub fn extract_block_id(content: &str) -> Option<String> {
    BLOCK_ID.find(content).map(|m| m.as_str().to_string())
}

pub fn count_block_ids(content: &str) -> usize {
    BLOCK_ID.find_iter(content).count()
}

/// `BlockId -> is anomaly`.
pub type LabelTable = HashMap<String, bool>;

/// Reads `anomaly_label.csv` (`BlockId,Label` with `Normal`/`Anomaly`).
pub fn read_label_table(path: &Path) -> Result<LabelTable, SessionError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(io::BufReader::new(file));
    let mut table = LabelTable::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| SessionError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let (Some(block), Some(label)) = (rec.get(0), rec.get(1)) else {
            return Err(SessionError::Format {
                path: path.to_path_buf(),
                message: format!("short row {rec:?}"),
            });
        };
        let anomalous = match label.trim() {
            "Anomaly" => true,
            "Normal" => false,
            other => {
                return Err(SessionError::Format {
                    path: path.to_path_buf(),
                    message: format!("unknown label {other:?} for {block}"),
                })
            }
        };
        table.insert(block.trim().to_string(), anomalous);
    }
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    /// Raw Drain event IDs in source order.
    pub event_ids: Vec<u32>,
    /// Source line numbers, parallel to `event_ids`.
    pub line_numbers: Vec<usize>,
    pub label: u8,
}

#[derive(Clone, Debug, Default)]
pub struct SessionBuild {
    pub sessions: Vec<Session>,
    /// Block IDs missing from the label table.
    pub quarantined: Vec<String>,
    pub rows_without_block: usize,
}

/// Groups rows by block ID in order of first appearance and attaches labels.
/// Unlabeled blocks are quarantined rather than failing the run.
pub fn build_sessions(rows: &[StructuredRow], labels: &LabelTable) -> SessionBuild {
    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<&str, (Vec<u32>, Vec<usize>)> = HashMap::new();
    let mut rows_without_block = 0;
    for row in rows {
        let Some(block) = row.block_id.as_deref() else {
            rows_without_block += 1;
            continue;
        };
        let entry = grouped.entry(block).or_insert_with(|| {
            order.push(block.to_string());
            (Vec::new(), Vec::new())
        });
        entry.0.push(row.event_id);
        entry.1.push(row.line_number);
    }

    let mut build = SessionBuild {
        rows_without_block,
        ..SessionBuild::default()
    };
    for block in order {
        let (event_ids, line_numbers) = grouped.remove(block.as_str()).expect("grouped above");
        match labels.get(&block) {
            Some(&anomalous) => build.sessions.push(Session {
                session_id: block,
                event_ids,
                line_numbers,
                label: u8::from(anomalous),
            }),
            None => {
                log::warn!("{}", SessionError::UnlabeledSession(block.clone()));
                build.quarantined.push(block);
            }
        }
    }
    build
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledWindow {
    pub window_id: String,
    pub event_ids: Vec<u32>,
    pub label: u8,
    #[serde(default)]
    pub pad_len: usize,
}

impl LabeledWindow {
    /// Tokens before the right padding.
    pub fn real_tokens(&self) -> &[u32] {
        &self.event_ids[..self.event_ids.len() - self.pad_len]
    }
}

/// Start/end offsets of every window over a sequence of length `len`.
/// Windows begin at multiples of `stride`; the last one is cut short (and
/// later padded) when the tail does not fill a whole window.
pub fn window_spans(len: usize, window_length: usize, stride: usize) -> Result<Vec<Range<usize>>, SessionError> {
    if window_length == 0 || stride == 0 || stride > window_length {
        return Err(SessionError::BadWindow(format!(
            "need window_length >= 1 and 1 <= stride <= window_length, got {window_length}/{stride}"
        )));
    }
    let mut spans = Vec::new();
    let mut start = 0;
    while start < len {
        spans.push(start..(start + window_length).min(len));
        if start + window_length >= len {
            break;
        }
        start += stride;
    }
    Ok(spans)
}

/// Cuts a session into right-padded windows of vocabulary tokens, each
/// inheriting the session label.
pub fn windowize(session: &Session, window_length: usize, stride: usize) -> Result<Vec<LabeledWindow>, SessionError> {
    let spans = window_spans(session.event_ids.len(), window_length, stride)?;
    Ok(spans
        .into_iter()
        .enumerate()
        .map(|(k, span)| {
            let mut ids: Vec<u32> = session.event_ids[span].iter().map(|&e| token_for_event(e)).collect();
            let pad_len = window_length - ids.len();
            ids.resize(window_length, PAD);
            LabeledWindow {
                window_id: format!("{}#{k}", session.session_id),
                event_ids: ids,
                label: session.label,
                pad_len,
            }
        })
        .collect())
}

pub fn windowize_all(sessions: &[Session], window_length: usize, stride: usize) -> Result<Vec<LabeledWindow>, SessionError> {
    let mut out = Vec::new();
    for s in sessions {
        out.extend(windowize(s, window_length, stride)?);
    }
    Ok(out)
}

/// `floor(x + 0.5)` for non-negative `x`.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Per-class sample counts for drawing `n` from a pool with `anomalous` of
/// `total` anomalous members. Both classes round half up; the majority class
/// absorbs the difference so the counts sum to `n`.
pub fn stratified_counts(total: usize, anomalous: usize, n: usize) -> Result<(usize, usize), SessionError> {
    let normal = total - anomalous;
    let mut n_anom = round_half_up(n as f64 * anomalous as f64 / total as f64);
    let mut n_norm = round_half_up(n as f64 * normal as f64 / total as f64);
    let sum = n_anom + n_norm;
    let majority_is_normal = normal >= anomalous;
    let majority = if majority_is_normal { &mut n_norm } else { &mut n_anom };
    if sum > n {
        *majority -= sum - n;
    } else {
        *majority += n - sum;
    }
    for (class, count) in [(0u8, n_norm), (1u8, n_anom)] {
        if count == 0 {
            return Err(SessionError::ClassVanished {
                class,
                context: format!("stratified sample of {n} from {total} ({anomalous} anomalous)"),
            });
        }
    }
    Ok((n_norm, n_anom))
}

fn partition_by_class(windows: &[LabeledWindow]) -> (Vec<usize>, Vec<usize>) {
    let mut normal = Vec::new();
    let mut anomalous = Vec::new();
    for (i, w) in windows.iter().enumerate() {
        if w.label == 1 {
            anomalous.push(i);
        } else {
            normal.push(i);
        }
    }
    (normal, anomalous)
}

/// Class-proportional draw of `n` windows, uniform within each class, with
/// the result shuffled.
pub fn stratified_sample<R: Rng>(windows: &[LabeledWindow], n: usize, rng: &mut R) -> Result<Vec<LabeledWindow>, SessionError> {
    if n > windows.len() {
        return Err(SessionError::NotEnoughSamples {
            requested: n,
            available: windows.len(),
            context: "stratified sample".into(),
        });
    }
    let (mut normal, mut anomalous) = partition_by_class(windows);
    if normal.is_empty() || anomalous.is_empty() {
        return Err(SessionError::ClassVanished {
            class: u8::from(anomalous.is_empty()),
            context: "sampling pool holds a single class".into(),
        });
    }
    let (n_norm, n_anom) = stratified_counts(windows.len(), anomalous.len(), n)?;
    normal.shuffle(rng);
    anomalous.shuffle(rng);
    let mut picked: Vec<usize> = normal[..n_norm].iter().chain(&anomalous[..n_anom]).copied().collect();
    picked.shuffle(rng);
    Ok(picked.into_iter().map(|i| windows[i].clone()).collect())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<LabeledWindow>,
    pub val: Vec<LabeledWindow>,
    /// Optional held-out set drawn outside the sampled pool.
    pub test: Vec<LabeledWindow>,
    pub seed: u64,
    pub train_fraction: f64,
}

/// Per-class train/validation partition. Each class sends
/// `round_half_up(count * train_fraction)` windows to train, clamped so that
/// both sides keep at least one member of every class.
pub fn split<R: Rng>(windows: &[LabeledWindow], train_fraction: f64, seed: u64, rng: &mut R) -> Result<DatasetSplit, SessionError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(SessionError::ClassVanished {
            class: 0,
            context: format!("train fraction {train_fraction} leaves one side empty"),
        });
    }
    let (normal, anomalous) = partition_by_class(windows);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (class, mut members) in [(0u8, normal), (1u8, anomalous)] {
        if members.len() < 2 {
            return Err(SessionError::ClassVanished {
                class,
                context: format!("{} member(s) cannot cover both train and validation", members.len()),
            });
        }
        members.shuffle(rng);
        let n_train = round_half_up(members.len() as f64 * train_fraction).clamp(1, members.len() - 1);
        train.extend(members[..n_train].iter().copied());
        val.extend(members[n_train..].iter().copied());
    }
    train.shuffle(rng);
    val.shuffle(rng);
    Ok(DatasetSplit {
        train: train.into_iter().map(|i| windows[i].clone()).collect(),
        val: val.into_iter().map(|i| windows[i].clone()).collect(),
        test: Vec::new(),
        seed,
        train_fraction,
    })
}

/// Draws a test set of `size` windows at the given anomaly rate from windows
/// whose IDs are not in `exclude`.
pub fn draw_test_set<R: Rng>(
    windows: &[LabeledWindow],
    exclude: &HashSet<&str>,
    size: usize,
    anomaly_rate: f64,
    rng: &mut R,
) -> Result<Vec<LabeledWindow>, SessionError> {
    let rest: Vec<LabeledWindow> = windows
        .iter()
        .filter(|w| !exclude.contains(w.window_id.as_str()))
        .cloned()
        .collect();
    let (mut normal, mut anomalous) = partition_by_class(&rest);
    let n_anom = round_half_up(size as f64 * anomaly_rate);
    let n_norm = size - n_anom.min(size);
    for (class, want, have) in [(0u8, n_norm, normal.len()), (1u8, n_anom, anomalous.len())] {
        if want == 0 {
            return Err(SessionError::ClassVanished {
                class,
                context: format!("test set of {size} at anomaly rate {anomaly_rate}"),
            });
        }
        if want > have {
            return Err(SessionError::NotEnoughSamples {
                requested: want,
                available: have,
                context: format!("test set class {class}"),
            });
        }
    }
    normal.shuffle(rng);
    anomalous.shuffle(rng);
    let mut picked: Vec<usize> = normal[..n_norm].iter().chain(&anomalous[..n_anom]).copied().collect();
    picked.shuffle(rng);
    Ok(picked.into_iter().map(|i| rest[i].clone()).collect())
}

/// Per-split sizes, recorded in the manifest.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub total: usize,
    pub anomalous: usize,
}

impl ClassCounts {
    pub fn of(windows: &[LabeledWindow]) -> Self {
        Self {
            total: windows.len(),
            anomalous: windows.iter().filter(|w| w.label == 1).count(),
        }
    }
}

/// Window IDs per split plus the seed and counts that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train_fraction: f64,
    pub counts: BTreeMap<String, ClassCounts>,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn of(split: &DatasetSplit) -> Self {
        let ids = |ws: &[LabeledWindow]| ws.iter().map(|w| w.window_id.clone()).collect();
        let mut counts = BTreeMap::new();
        counts.insert("train".to_string(), ClassCounts::of(&split.train));
        counts.insert("val".to_string(), ClassCounts::of(&split.val));
        counts.insert("test".to_string(), ClassCounts::of(&split.test));
        Self {
            seed: split.seed,
            train_fraction: split.train_fraction,
            counts,
            train: ids(&split.train),
            val: ids(&split.val),
            test: ids(&split.test),
        }
    }

    /// Rebuilds the split from its manifest and the windows it names.
    pub fn resolve(&self, windows: &[LabeledWindow]) -> Result<DatasetSplit, SessionError> {
        let by_id: HashMap<&str, &LabeledWindow> = windows.iter().map(|w| (w.window_id.as_str(), w)).collect();
        let pick = |ids: &[String]| -> Result<Vec<LabeledWindow>, SessionError> {
            ids.iter()
                .map(|id| {
                    by_id.get(id.as_str()).map(|w| (*w).clone()).ok_or_else(|| SessionError::Format {
                        path: PathBuf::from("split_manifest.json"),
                        message: format!("window {id} not found in dataset"),
                    })
                })
                .collect()
        };
        Ok(DatasetSplit {
            train: pick(&self.train)?,
            val: pick(&self.val)?,
            test: pick(&self.test)?,
            seed: self.seed,
            train_fraction: self.train_fraction,
        })
    }
}

/// One JSON object per line: `{"window_id", "event_ids", "label"}`.
pub fn write_windows(path: &Path, windows: &[LabeledWindow]) -> Result<(), SessionError> {
    #[derive(Serialize)]
    struct Line<'a> {
        window_id: &'a str,
        event_ids: &'a [u32],
        label: u8,
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for win in windows {
        let line = Line {
            window_id: &win.window_id,
            event_ids: &win.event_ids,
            label: win.label,
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| SessionError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads windows back; `pad_len` is recomputed from trailing PAD tokens.
pub fn read_windows(path: &Path) -> Result<Vec<LabeledWindow>, SessionError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut w: LabeledWindow = serde_json::from_str(&line).map_err(|e| SessionError::Format {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?;
        w.pad_len = w.event_ids.iter().rev().take_while(|&&t| t == PAD).count();
        out.push(w);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rows(spec: &[(usize, u32, Option<&str>)]) -> Vec<StructuredRow> {
        spec.iter()
            .map(|&(l, e, b)| StructuredRow {
                line_number: l,
                event_id: e,
                block_id: b.map(str::to_string),
            })
            .collect()
    }

    fn pool(total: usize, anomalous: usize) -> Vec<LabeledWindow> {
        (0..total)
            .map(|i| LabeledWindow {
                window_id: format!("blk_{i}#0"),
                event_ids: vec![token_for_event(i as u32 % 7)],
                label: u8::from(i < anomalous),
                pad_len: 0,
            })
            .collect()
    }

    #[test]
    fn block_id_extraction() {
        assert_eq!(
            extract_block_id("Received block blk_-1608999687919862906 src: /10.250.19.102").as_deref(),
            Some("blk_-1608999687919862906")
        );
        assert_eq!(extract_block_id("Verification succeeded"), None);
        assert_eq!(extract_block_id("blk_1 and blk_2").as_deref(), Some("blk_1"));
        assert_eq!(count_block_ids("blk_1 and blk_2"), 2);
    }

    #[test]
    fn sessions_follow_first_appearance_and_labels() {
        let labels: LabelTable = [("blk_A".to_string(), false), ("blk_B".to_string(), true)].into();
        let r = rows(&[
            (1, 0, Some("blk_A")),
            (2, 1, Some("blk_B")),
            (3, 1, Some("blk_A")),
            (4, 2, None),
            (5, 0, Some("blk_C")),
            (6, 2, Some("blk_A")),
        ]);
        let built = build_sessions(&r, &labels);
        assert_eq!(built.sessions.len(), 2);
        assert_eq!(built.sessions[0].session_id, "blk_A");
        assert_eq!(built.sessions[0].event_ids, vec![0, 1, 2]);
        assert_eq!(built.sessions[0].line_numbers, vec![1, 3, 6]);
        assert_eq!(built.sessions[0].label, 0);
        assert_eq!(built.sessions[1].label, 1);
        assert_eq!(built.quarantined, vec!["blk_C".to_string()]);
        assert_eq!(built.rows_without_block, 1);
    }

    fn session(n: u32, label: u8) -> Session {
        Session {
            session_id: "blk_1".into(),
            event_ids: (0..n).collect(),
            line_numbers: (1..=n as usize).collect(),
            label,
        }
    }

    #[test]
    fn windowize_pads_the_tail() {
        let w = windowize(&session(5, 1), 3, 3).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].event_ids, vec![3, 4, 5]);
        assert_eq!(w[1].event_ids, vec![6, 7, PAD]);
        assert_eq!(w[1].pad_len, 1);
        assert_eq!(w[1].window_id, "blk_1#1");
        assert!(w.iter().all(|x| x.label == 1));
    }

    #[test]
    fn short_session_gives_one_padded_window() {
        let w = windowize(&session(2, 0), 4, 4).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].pad_len, 2);
    }

    #[test]
    fn exact_fit_with_unit_stride_gives_one_window() {
        assert_eq!(windowize(&session(3, 0), 3, 1).unwrap().len(), 1);
        assert_eq!(windowize(&session(4, 0), 3, 1).unwrap().len(), 2);
        assert!(windowize(&session(3, 0), 3, 4).is_err());
    }

    #[test]
    fn table_one_counts() {
        assert_eq!(stratified_counts(10_000, 293, 3000).unwrap(), (2912, 88));
    }

    #[test]
    fn sample_of_whole_pool_is_a_permutation() {
        let p = pool(50, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = stratified_sample(&p, 50, &mut rng).unwrap();
        let mut ids: Vec<_> = s.iter().map(|w| w.window_id.clone()).collect();
        assert_ne!(ids, p.iter().map(|w| w.window_id.clone()).collect::<Vec<_>>());
        ids.sort();
        let mut expected: Vec<_> = p.iter().map(|w| w.window_id.clone()).collect();
        expected.sort();
        assert_eq!(ids, expected);
    }

    #[test]
    fn sample_needs_both_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            stratified_sample(&pool(100, 1), 10, &mut rng),
            Err(SessionError::ClassVanished { class: 1, .. })
        ));
    }

    #[test]
    fn split_reference_counts() {
        let p = pool(3000, 88);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = split(&p, 0.9, 9, &mut rng).unwrap();
        assert_eq!(ClassCounts::of(&s.train), ClassCounts { total: 2700, anomalous: 79 });
        assert_eq!(ClassCounts::of(&s.val), ClassCounts { total: 300, anomalous: 9 });
    }

    #[test]
    fn split_keeps_one_of_each_class_in_validation() {
        let p = pool(10, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = split(&p, 0.9, 1, &mut rng).unwrap();
        assert_eq!(ClassCounts::of(&s.train).anomalous, 4);
        assert_eq!(ClassCounts::of(&s.val).anomalous, 1);
        assert!(matches!(
            split(&p, 1.0, 1, &mut rng),
            Err(SessionError::ClassVanished { .. })
        ));
    }

    #[test]
    fn manifest_round_trip() {
        let p = pool(40, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = split(&p, 0.9, 2, &mut rng).unwrap();
        let m = SplitManifest::of(&s);
        assert_eq!(m.resolve(&p).unwrap(), s);
    }

    #[test]
    fn windows_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.jsonl");
        let w = windowize(&session(5, 1), 4, 4).unwrap();
        write_windows(&path, &w).unwrap();
        assert_eq!(read_windows(&path).unwrap(), w);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(r#"{"window_id":"blk_1#0","event_ids":[3,4,5,6],"label":1}"#));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn stratification_matches_rounding_formula(
                total in 4usize..200, anomalous_frac in 0.01f64..0.5, n_frac in 0.05f64..1.0, seed in 0u64..1000
            ) {
                let anomalous = ((total as f64 * anomalous_frac) as usize).max(1);
                let n = ((total as f64 * n_frac) as usize).max(1);
                let p = pool(total, anomalous);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                // brute-force expectation: round half up per class, fix the majority
                let exp_a = ((n * anomalous) as f64 / total as f64 + 0.5).floor() as usize;
                let exp_n = ((n * (total - anomalous)) as f64 / total as f64 + 0.5).floor() as usize;
                let (mut ea, mut en) = (exp_a as i64, exp_n as i64);
                let diff = n as i64 - (ea + en);
                if total - anomalous >= anomalous { en += diff } else { ea += diff }
                match stratified_sample(&p, n, &mut rng) {
                    Ok(s) => {
                        let got = ClassCounts::of(&s);
                        prop_assert_eq!(got.total, n);
                        prop_assert_eq!(got.anomalous as i64, ea);
                        prop_assert_eq!((got.total - got.anomalous) as i64, en);
                    }
                    Err(SessionError::ClassVanished { .. }) => prop_assert!(ea == 0 || en == 0),
                    Err(e) => prop_assert!(false, "{e}"),
                }
            }

            #[test]
            fn split_is_a_disjoint_cover(total in 6usize..120, anomalous in 2usize..6, seed in 0u64..500) {
                let p = pool(total, anomalous.min(total - 2));
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let s = split(&p, 0.9, seed, &mut rng).unwrap();
                let mut ids: Vec<&str> = s.train.iter().chain(&s.val).map(|w| w.window_id.as_str()).collect();
                let n = ids.len();
                ids.sort();
                ids.dedup();
                prop_assert_eq!(ids.len(), n);
                prop_assert_eq!(n, p.len());
                for class in [0u8, 1] {
                    prop_assert!(s.val.iter().any(|w| w.label == class));
                    prop_assert!(s.train.iter().any(|w| w.label == class));
                }
            }

            #[test]
            fn windows_inherit_labels_and_keep_pad_reserved(
                events in prop::collection::vec(0u32..50, 1..40), len in 1usize..9, label in 0u8..2
            ) {
                let s = Session {
                    session_id: "blk_9".into(),
                    line_numbers: (1..=events.len()).collect(),
                    event_ids: events.clone(),
                    label,
                };
                let stride = len.div_ceil(2).max(1);
                let ws = windowize(&s, len, stride).unwrap();
                for w in &ws {
                    prop_assert_eq!(w.event_ids.len(), len);
                    prop_assert!(w.pad_len < len);
                    prop_assert_eq!(w.label, label);
                    prop_assert!(w.real_tokens().iter().all(|&t| t >= NUM_SPECIALS));
                }
                let covered: usize = ws.last().map(|w| (ws.len() - 1) * stride + len - w.pad_len).unwrap();
                prop_assert_eq!(covered, events.len());
            }
        }
    }
}
