use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{JudgeError, Verdict};
use crate::metrics::{MetricsReport, DEFAULT_THRESHOLD};
use crate::session::LabeledWindow;

/// One model's output over the test windows.
pub enum Predictions<'a> {
    /// Anomaly probabilities keyed by window id.
    Scores(&'a HashMap<String, f64>),
    Verdicts(&'a [Verdict]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub metrics: MetricsReport,
    pub unparseable: usize,
}

/// Scores every model over the identical window list with the shared
/// metrics code. Verdicts enter as 0/1 scores, so the 0.5 threshold
/// reproduces them exactly; unparseable verdicts score 0.
pub fn compare(models: &[(&str, Predictions<'_>)], windows: &[LabeledWindow]) -> Result<Vec<ComparisonRow>, JudgeError> {
    let labels: Vec<u8> = windows.iter().map(|w| w.label).collect();
    let mut rows = Vec::with_capacity(models.len());
    for (name, preds) in models {
        let gap = |w: &LabeledWindow| JudgeError::CoverageGap {
            model: name.to_string(),
            window_id: w.window_id.clone(),
        };
        let (scores, unparseable) = match preds {
            Predictions::Scores(map) => {
                let s = windows
                    .iter()
                    .map(|w| map.get(&w.window_id).copied().ok_or_else(|| gap(w)))
                    .collect::<Result<Vec<_>, _>>()?;
                (s, 0)
            }
            Predictions::Verdicts(verdicts) => {
                let by_id: HashMap<&str, &Verdict> = verdicts.iter().map(|v| (v.window_id.as_str(), v)).collect();
                let picked = windows
                    .iter()
                    .map(|w| by_id.get(w.window_id.as_str()).copied().ok_or_else(|| gap(w)))
                    .collect::<Result<Vec<_>, _>>()?;
                let unparseable = picked.iter().filter(|v| v.label.is_none()).count();
                (picked.iter().map(|v| f64::from(v.predicted())).collect(), unparseable)
            }
        };
        let metrics = MetricsReport::from_scores(&scores, &labels, DEFAULT_THRESHOLD)
            .map_err(|e| JudgeError::BadConfig(format!("{name}: {e}")))?;
        rows.push(ComparisonRow {
            model: name.to_string(),
            metrics,
            unparseable,
        });
    }
    Ok(rows)
}

/// `model,accuracy,precision,recall,f1,auc,tp,fp,fn,tn,unparseable`
pub fn write_comparison(path: &Path, rows: &[ComparisonRow]) -> Result<(), JudgeError> {
    let io_err = |source| JudgeError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    let body = (|| -> std::io::Result<()> {
        writeln!(w, "model,accuracy,precision,recall,f1,auc,tp,fp,fn,tn,unparseable")?;
        for r in rows {
            let m = &r.metrics;
            let c = &m.counts;
            let auc = m.auc.map(|a| format!("{a:.6}")).unwrap_or_default();
            writeln!(
                w,
                "{},{:.6},{:.6},{:.6},{:.6},{auc},{},{},{},{},{}",
                r.model, m.accuracy, m.precision, m.recall, m.f1, c.tp, c.fp, c.fn_, c.tn, r.unparseable
            )?;
        }
        w.flush()
    })();
    body.map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::VerdictSource;

    fn windows(labels: &[u8]) -> Vec<LabeledWindow> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| LabeledWindow {
                window_id: format!("w{i}"),
                event_ids: vec![3],
                label,
                pad_len: 0,
            })
            .collect()
    }

    fn verdict(i: usize, label: Option<u8>) -> Verdict {
        Verdict {
            window_id: format!("w{i}"),
            label,
            ambiguous: false,
            raw_response: String::new(),
            source: VerdictSource::Fixture,
        }
    }

    #[test]
    fn rows_share_the_metrics_path() {
        let ws = windows(&[1, 1, 0, 0, 0]);
        let verdicts: Vec<Verdict> = [Some(1), None, Some(1), Some(0), Some(0)]
            .into_iter()
            .enumerate()
            .map(|(i, l)| verdict(i, l))
            .collect();
        let scores: HashMap<String, f64> = ws.iter().map(|w| (w.window_id.clone(), w.label as f64 * 0.9)).collect();
        let rows = compare(
            &[("local", Predictions::Scores(&scores)), ("judge", Predictions::Verdicts(&verdicts))],
            &ws,
        )
        .unwrap();
        assert_eq!(rows[0].metrics.f1, 1.0);
        let j = &rows[1];
        assert_eq!((j.metrics.counts.tp, j.metrics.counts.fp, j.metrics.counts.fn_), (1, 1, 1));
        assert_eq!(j.unparseable, 1);
        assert_eq!(j.metrics.precision, 0.5);

        let again = compare(&[("judge", Predictions::Verdicts(&verdicts))], &ws).unwrap();
        assert_eq!(again[0], rows[1]);
    }

    #[test]
    fn missing_window_is_a_coverage_gap() {
        let ws = windows(&[1, 0]);
        let verdicts = vec![verdict(0, Some(1))];
        assert!(matches!(
            compare(&[("judge", Predictions::Verdicts(&verdicts))], &ws),
            Err(JudgeError::CoverageGap { .. })
        ));
    }
}
