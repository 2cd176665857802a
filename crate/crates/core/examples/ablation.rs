//! Raw text with cross-entropy, event ids with cross-entropy, and event ids
//! with focal loss, all trained on one shared split.
//!
//! cargo run --release --example ablation [-- out_dir]

use std::path::PathBuf;

use seqguard::pipeline::{run_ablation, ExperimentConfig};
use seqguard::synth::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out/ablation"));
    std::fs::create_dir_all(&out)?;
    let mut config = ExperimentConfig::default();
    config.paths.logs = out.join("synthetic.log");
    config.paths.labels = out.join("synthetic_labels.csv");
    config.paths.out_dir = out.clone();
    generate(&SynthConfig {
        sessions: 1500,
        anomaly_rate: 0.05,
        ..SynthConfig::default()
    })
    .write(&config.paths.logs, &config.paths.labels)?;

    config.window.length = 20;
    config.window.stride = 20;
    config.model.d_model = 32;
    config.model.n_layers = 1;
    config.model.d_ff = 64;
    config.model.max_seq_len = 64;
    config.train.learning_rate = 3e-3;
    config.train.epochs = 3;

    let report = run_ablation(&config)?;
    println!("split manifest {}", &report.manifest_hash[..12]);
    println!("{:<4} {:<10} {:<28} {:>6} {:>6}", "arm", "input", "loss", "f1", "auc");
    for r in &report.rows {
        let auc = r.eval.auc.map_or("-".into(), |a| format!("{a:.3}"));
        println!("{:<4} {:<10} {:<28} {:>6.3} {auc:>6}", r.arm.name(), r.input, r.loss, r.eval.f1);
    }
    println!("\nper-arm artifacts under {}", out.display());
    Ok(())
}
