//! Every stage on the bundled fixture, from raw log to report.
//!
//! cargo run --example full_pipeline [-- out_dir]

use std::path::{Path, PathBuf};

use seqguard::pipeline::{run_pipeline, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out/fixture"));
    let json = |p: &Path| serde_json::to_string(p).expect("path is utf-8");
    let overrides = vec![
        ("paths.logs".to_string(), json(&data.join("hdfs_fixture.log"))),
        ("paths.labels".to_string(), json(&data.join("hdfs_fixture_labels.csv"))),
        ("paths.out_dir".to_string(), json(&out)),
        ("judge.enabled".to_string(), "true".to_string()),
        ("judge.fixtures".to_string(), json(&data.join("judge_fixtures"))),
    ];
    let config = ExperimentConfig::load(Some(&data.join("fixture_config.json")), &overrides)?;
    let report = run_pipeline(&config, None)?;
    print!("{}", report.summary());
    println!("\nartifacts in {}:", out.display());
    for a in &report.artifacts {
        println!("  {a}");
    }
    Ok(())
}
