//! Sessionize a labelled corpus, draw a stratified sample and split it.
//!
//! A synthetic pool of 10,000 blocks at 2.93 % anomalies is sampled down to
//! 3,000 windows and split 9:1.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqguard::drain::{parse_corpus, DrainConfig};
use seqguard::session::{build_sessions, split, stratified_sample, windowize_all, ClassCounts, LabelTable};
use seqguard::synth::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate(&SynthConfig {
        sessions: 10_000,
        anomaly_rate: 0.0293,
        ..SynthConfig::default()
    });
    let parsed = parse_corpus(corpus.lines.join("\n").as_bytes(), &DrainConfig::default())?;
    let labels: LabelTable = corpus.labels.iter().cloned().collect();
    let build = build_sessions(&parsed.rows, &labels);
    let windows = windowize_all(&build.sessions, 20, 20)?;

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let sample = stratified_sample(&windows, 3000, &mut rng)?;
    let ds = split(&sample, 0.9, 42, &mut rng)?;

    let show = |name: &str, c: ClassCounts| println!("{name:<7} {:>6} windows {:>5} anomalous", c.total, c.anomalous);
    println!("{} templates, {} sessions", parsed.tree.templates().len(), build.sessions.len());
    show("pool", ClassCounts::of(&windows));
    show("sample", ClassCounts::of(&sample));
    show("train", ClassCounts::of(&ds.train));
    show("val", ClassCounts::of(&ds.val));
    Ok(())
}
