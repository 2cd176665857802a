//! Next-token pretraining on unlabeled windows before fine-tuning.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqguard::drain::{parse_corpus, DrainConfig};
use seqguard::model::{pretrain_lm, ModelConfig, ModelParams, PretrainConfig};
use seqguard::session::{build_sessions, windowize_all, LabelTable, NUM_SPECIALS};
use seqguard::synth::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate(&SynthConfig {
        sessions: 400,
        ..SynthConfig::default()
    });
    let parsed = parse_corpus(corpus.lines.join("\n").as_bytes(), &DrainConfig::default())?;
    let labels: LabelTable = corpus.labels.iter().cloned().collect();
    let windows = windowize_all(&build_sessions(&parsed.rows, &labels).sessions, 20, 20)?;
    // labels are not used here
    let seqs: Vec<Vec<u32>> = windows.into_iter().map(|w| w.event_ids).collect();

    let config = ModelConfig {
        vocab_size: NUM_SPECIALS as usize + parsed.tree.templates().len(),
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        d_ff: 32,
        max_seq_len: 32,
        dropout: 0.0,
    };
    let params = ModelParams::init(&config, &mut ChaCha8Rng::seed_from_u64(0))?;
    let pconfig = PretrainConfig {
        steps: 150,
        learning_rate: 3e-3,
        ..PretrainConfig::default()
    };
    let (_, report) = pretrain_lm(params, &config, &seqs, &pconfig)?;
    println!("{} sequences, {} steps", seqs.len(), pconfig.steps);
    println!("held-out next-token loss {:.4} -> {:.4}", report.initial_heldout_loss, report.final_heldout_loss);
    println!("held-out greedy accuracy {:.3}", report.heldout_accuracy);
    Ok(())
}
