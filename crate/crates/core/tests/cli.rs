use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use seqguard::pipeline::artifacts;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn seqguard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqguard"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn fixture_args<'a>(out: &'a str, logs: &'a str, labels: &'a str, config: &'a str) -> Vec<&'a str> {
    vec!["--config", config, "--out", out, "--logs", logs, "--labels", labels]
}

struct Fixture {
    _dir: tempfile::TempDir,
    out: String,
    logs: String,
    labels: String,
    config: String,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    Fixture {
        out: dir.path().join("out").to_string_lossy().into_owned(),
        logs: data("hdfs_fixture.log").to_string_lossy().into_owned(),
        labels: data("hdfs_fixture_labels.csv").to_string_lossy().into_owned(),
        config: data("fixture_config.json").to_string_lossy().into_owned(),
        _dir: dir,
    }
}

#[test]
fn fixture_run_writes_every_artifact() {
    let f = fixture();
    let start = Instant::now();
    let mut args = vec!["run"];
    args.extend(fixture_args(&f.out, &f.logs, &f.labels, &f.config));
    let out = seqguard(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(start.elapsed() < Duration::from_secs(60));
    for name in [
        artifacts::TEMPLATES,
        artifacts::STRUCTURED,
        artifacts::SESSIONS,
        artifacts::WINDOWS,
        artifacts::DATASET,
        artifacts::SPLIT_MANIFEST,
        artifacts::CHECKPOINT,
        artifacts::CURVE,
        artifacts::EPOCHS,
        artifacts::SCORES,
        artifacts::METRICS,
        artifacts::ROC,
        artifacts::CONFUSION,
        artifacts::COMPARISON,
        artifacts::REPORT,
        artifacts::SUMMARY,
        artifacts::RESOLVED_CONFIG,
    ] {
        assert!(Path::new(&f.out).join(name).is_file(), "missing {name}");
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("classifier"), "{stdout}");
}

#[test]
fn missing_label_file_fails_in_sessionize() {
    let f = fixture();
    let missing = format!("{}/nope.csv", f.out);
    let mut args = vec!["run"];
    args.extend(fixture_args(&f.out, &f.logs, &missing, &f.config));
    let out = seqguard(&args);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("stage `sessionize` failed"), "{stderr}");
    // partial outputs stay for inspection
    assert!(Path::new(&f.out).join(artifacts::TEMPLATES).is_file());
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(seqguard(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(seqguard(&["parse", "--depth"]).status.code(), Some(1));
    let f = fixture();
    let out = seqguard(&["parse", "--logs", &f.logs, "--out", &f.out, "--depth", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let out = seqguard(&["parse", "--config", "/definitely/not/here.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(seqguard(&["--help"]).status.code(), Some(0));
}

#[test]
fn stages_run_one_at_a_time_and_resume() {
    let f = fixture();
    let fixtures = data("judge_fixtures").to_string_lossy().into_owned();
    let mut common = fixture_args(&f.out, &f.logs, &f.labels, &f.config);
    common.extend(["--fixtures", &fixtures]);
    for stage in ["parse", "sessionize", "dataset", "train", "eval", "judge", "compare", "report"] {
        let mut args = vec![stage];
        args.extend(common.iter().copied());
        let out = seqguard(&args);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let manifest = fs::read(Path::new(&f.out).join(artifacts::SPLIT_MANIFEST)).unwrap();
    let curve = fs::read(Path::new(&f.out).join(artifacts::CURVE)).unwrap();
    let comparison = fs::read_to_string(Path::new(&f.out).join(artifacts::COMPARISON)).unwrap();
    assert!(comparison.lines().any(|l| l.starts_with("gpt-4,")), "{comparison}");

    let mut args = vec!["run", "--resume-from", "train"];
    args.extend(common.iter().copied());
    assert!(seqguard(&args).status.success());
    assert_eq!(fs::read(Path::new(&f.out).join(artifacts::SPLIT_MANIFEST)).unwrap(), manifest);
    assert_eq!(fs::read(Path::new(&f.out).join(artifacts::CURVE)).unwrap(), curve);
}

#[test]
fn stage_without_its_inputs_is_a_data_error() {
    let f = fixture();
    let mut args = vec!["train"];
    args.extend(fixture_args(&f.out, &f.logs, &f.labels, &f.config));
    let out = seqguard(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `train` failed"));
}

#[test]
fn judge_without_credentials_fails_before_any_request() {
    let f = fixture();
    let mut args = vec!["run"];
    args.extend(fixture_args(&f.out, &f.logs, &f.labels, &f.config));
    args.extend(["--set", "judge.enabled=true", "--set", "judge.api_key_env=SEQGUARD_TEST_UNSET_KEY"]);
    args.extend(["--set", "judge.endpoint=\"http://127.0.0.1:9/v1/chat/completions\""]);
    let cache = format!("{}/cache", f.out);
    args.extend(["--cache-dir", &cache]);
    let out = Command::new(env!("CARGO_BIN_EXE_seqguard"))
        .args(&args)
        .env_remove("SEQGUARD_TEST_UNSET_KEY")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("stage `judge` failed") && stderr.contains("SEQGUARD_TEST_UNSET_KEY"), "{stderr}");
}
