//! Fine-tune the classifier on event-id windows and score the validation set.
//!
//! cargo run --release --example train_classifier

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqguard::drain::{parse_corpus, DrainConfig};
use seqguard::metrics::{MetricsReport, DEFAULT_THRESHOLD};
use seqguard::model::{ModelConfig, ModelParams};
use seqguard::objectives::{FocalParams, LossKind};
use seqguard::session::{build_sessions, split, windowize_all, LabelTable, NUM_SPECIALS};
use seqguard::synth::{generate, SynthConfig};
use seqguard::train::{evaluate, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate(&SynthConfig {
        sessions: 1500,
        anomaly_rate: 0.05,
        ..SynthConfig::default()
    });
    let parsed = parse_corpus(corpus.lines.join("\n").as_bytes(), &DrainConfig::default())?;
    let labels: LabelTable = corpus.labels.iter().cloned().collect();
    let windows = windowize_all(&build_sessions(&parsed.rows, &labels).sessions, 20, 20)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ds = split(&windows, 0.9, 1, &mut rng)?;

    let config = ModelConfig {
        vocab_size: NUM_SPECIALS as usize + parsed.tree.templates().len(),
        d_model: 32,
        n_heads: 2,
        n_layers: 1,
        d_ff: 64,
        max_seq_len: 32,
        dropout: 0.0,
    };
    let tconfig = TrainConfig {
        learning_rate: 3e-3,
        epochs: 3,
        seed: 1,
        loss: LossKind::Focal(FocalParams::default()),
        ..TrainConfig::default()
    };
    let params = ModelParams::init(&config, &mut ChaCha8Rng::seed_from_u64(2))?;
    let outcome = train(params, &config, &ds, &tconfig)?;

    for e in &outcome.curve.epochs {
        println!("epoch {}  val loss {:.4}  val f1 {:.3}", e.epoch, e.val_loss, e.metrics.f1);
    }
    let (scores, _) = evaluate(&outcome.best, &config, &ds.val, &tconfig.loss)?;
    let labels: Vec<u8> = ds.val.iter().map(|w| w.label).collect();
    let report = MetricsReport::from_scores(&scores, &labels, DEFAULT_THRESHOLD)?;
    println!("best epoch {}", outcome.best_epoch);
    print!("{}", report.counts.grid());
    println!("precision {:.3} recall {:.3} auc {:.3}", report.precision, report.recall, report.auc.unwrap_or(f64::NAN));
    Ok(())
}
