use std::fs;
use std::path::Path;

use seqguard::metrics::ConfusionCounts;
use seqguard::pipeline::{artifacts, emit_report, run_pipeline, ExperimentConfig, RunReport};

const EMITTED: [&str; 6] = [
    artifacts::REPORT,
    artifacts::COMPARISON,
    artifacts::CURVE,
    artifacts::ROC,
    artifacts::CONFUSION,
    artifacts::SUMMARY,
];

fn fixture_report(out: &Path) -> RunReport {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let overrides = vec![
        ("paths.logs".to_string(), serde_json::to_string(&data.join("hdfs_fixture.log")).unwrap()),
        ("paths.labels".to_string(), serde_json::to_string(&data.join("hdfs_fixture_labels.csv")).unwrap()),
        ("paths.out_dir".to_string(), serde_json::to_string(out).unwrap()),
    ];
    let config = ExperimentConfig::load(Some(&data.join("fixture_config.json")), &overrides).unwrap();
    run_pipeline(&config, None).unwrap()
}

#[test]
fn report_reemits_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let report = fixture_report(&out);
    for name in EMITTED {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    csv::Reader::from_path(out.join(artifacts::COMPARISON)).unwrap().records().for_each(|r| {
        r.unwrap();
    });
    csv::Reader::from_path(out.join(artifacts::CURVE)).unwrap().records().for_each(|r| {
        r.unwrap();
    });

    let loaded = RunReport::load(&out.join(artifacts::REPORT)).unwrap();
    assert_eq!(loaded, report);
    let again = dir.path().join("again");
    emit_report(&loaded, &again).unwrap();
    for name in EMITTED {
        assert_eq!(fs::read(out.join(name)).unwrap(), fs::read(again.join(name)).unwrap(), "{name}");
    }
    assert_eq!(report.config.paths.out_dir, out);
    assert!(report.artifacts.iter().any(|a| a == artifacts::CHECKPOINT));
}

#[test]
fn confusion_file_shows_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut report = fixture_report(&dir.path().join("run"));
    report.confusion = ConfusionCounts {
        tp: 6,
        fp: 0,
        tn: 291,
        fn_: 3,
    };
    let out = dir.path().join("grid");
    emit_report(&report, &out).unwrap();
    let text = fs::read_to_string(out.join(artifacts::CONFUSION)).unwrap();
    assert!(text.contains("TP=6 FP=0 / FN=3 TN=291"), "{text}");
    assert!(text.contains("actual=ANOMALY"));
}
