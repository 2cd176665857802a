use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{forward_lm, lm_grads, ModelConfig, ModelError, ModelParams, ParamLayout};
use crate::session::PAD;
use crate::train::{adamw_step, clip_gradients, AdamWConfig, AdamWState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_grad_norm: f64,
    pub weight_decay: f64,
    /// Fraction of the corpus held out for measuring next-token loss.
    pub heldout_fraction: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 0,
            learning_rate: 1e-3,
            batch_size: 16,
            max_grad_norm: 1.0,
            weight_decay: 0.01,
            heldout_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub initial_heldout_loss: f64,
    pub final_heldout_loss: f64,
    /// Greedy next-token accuracy on the held-out slice after training.
    pub heldout_accuracy: f64,
    pub train_losses: Vec<f64>,
}

fn trimmed(seq: &[u32]) -> &[u32] {
    let real = seq.len() - seq.iter().rev().take_while(|&&t| t == PAD).count();
    &seq[..real]
}

/// Mean next-token loss and greedy accuracy over `seqs`.
fn heldout_stats(params: &ModelParams, config: &ModelConfig, seqs: &[&[u32]]) -> Result<(f64, f64), ModelError> {
    let per: Vec<(f64, usize, usize)> = seqs
        .par_iter()
        .map(|s| {
            let probs = forward_lm(params, config, s)?;
            let mut nll = 0.0;
            let mut hits = 0;
            for t in 0..s.len() - 1 {
                let row = probs.row(t);
                let target = s[t + 1] as usize;
                nll -= row[target].max(f64::MIN_POSITIVE).ln();
                let argmax = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                hits += (argmax == target) as usize;
            }
            Ok((nll, hits, s.len() - 1))
        })
        .collect::<Result<_, ModelError>>()?;
    let count: usize = per.iter().map(|p| p.2).sum::<usize>().max(1);
    let nll: f64 = per.iter().map(|p| p.0).sum();
    let hits: usize = per.iter().map(|p| p.1).sum();
    Ok((nll / count as f64, hits as f64 / count as f64))
}

/// Trains the tied LM head on unlabeled token sequences.
///
/// The last `heldout_fraction` of the corpus (after a seeded shuffle) is
/// kept aside for the before/after loss. With `steps == 0` the parameters
/// are returned untouched.
pub fn pretrain_lm(
    params: ModelParams,
    config: &ModelConfig,
    corpus: &[Vec<u32>],
    pconfig: &PretrainConfig,
) -> Result<(ModelParams, PretrainReport), ModelError> {
    config.validate()?;
    let mut usable: Vec<&[u32]> = corpus.iter().map(|s| trimmed(s)).filter(|s| s.len() >= 2).collect();
    if usable.len() < 2 {
        return Err(ModelError::SequenceTooShort);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(pconfig.seed);
    usable.shuffle(&mut rng);
    let n_held = ((usable.len() as f64 * pconfig.heldout_fraction).round() as usize).clamp(1, usable.len() - 1);
    let (train, held) = usable.split_at(usable.len() - n_held);

    let (initial, initial_acc) = heldout_stats(&params, config, held)?;
    let mut report = PretrainReport {
        initial_heldout_loss: initial,
        final_heldout_loss: initial,
        heldout_accuracy: initial_acc,
        train_losses: Vec::with_capacity(pconfig.steps),
    };
    if pconfig.steps == 0 {
        return Ok((params, report));
    }

    let layout = ParamLayout::new(config);
    let decays: Vec<bool> = (0..params.tensors.len()).map(|i| layout.decays(i)).collect();
    let adamw = AdamWConfig {
        weight_decay: pconfig.weight_decay,
        ..AdamWConfig::default()
    };
    let mut params = params;
    let mut state = AdamWState::new(&params.tensors);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();

    for step in 0..pconfig.steps {
        let mut batch = Vec::with_capacity(pconfig.batch_size);
        while batch.len() < pconfig.batch_size.min(train.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let samples: Vec<_> = batch
            .par_iter()
            .map(|&i| lm_grads(&params, config, train[i], None))
            .collect::<Result<_, _>>()?;
        let weight = 1.0 / samples.len() as f64;
        let mut grads = params.zeros_like();
        let mut loss = 0.0;
        for s in &samples {
            loss += s.loss * weight;
            for (g, sg) in grads.iter_mut().zip(&s.grads) {
                for (a, b) in g.data_mut().iter_mut().zip(sg.data()) {
                    *a += b * weight;
                }
            }
        }
        if !loss.is_finite() || clip_gradients(&mut grads, pconfig.max_grad_norm).is_err() {
            return Err(ModelError::Diverged { step });
        }
        adamw_step(&mut params.tensors, &grads, &decays, &mut state, pconfig.learning_rate, &adamw);
        report.train_losses.push(loss);
    }

    let (loss, acc) = heldout_stats(&params, config, held)?;
    report.final_heldout_loss = loss;
    report.heldout_accuracy = acc;
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn config(vocab: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab,
            d_model: 16,
            n_heads: 2,
            n_layers: 1,
            d_ff: 32,
            max_seq_len: 12,
            dropout: 0.0,
        }
    }

    #[test]
    fn zero_steps_is_identity() {
        let c = config(8);
        let p = ModelParams::init(&c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let corpus = vec![vec![3, 4, 5], vec![5, 4, 3], vec![4, 4, 4]];
        let (after, _) = pretrain_lm(p.clone(), &c, &corpus, &PretrainConfig::default()).unwrap();
        assert_eq!(after, p);
    }

    #[test]
    fn constant_language_is_learned() {
        let c = config(8);
        let p = ModelParams::init(&c, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let corpus: Vec<Vec<u32>> = (0..40).map(|_| vec![5; 10]).collect();
        let pc = PretrainConfig {
            steps: 200,
            learning_rate: 3e-3,
            batch_size: 4,
            ..PretrainConfig::default()
        };
        let (_, report) = pretrain_lm(p, &c, &corpus, &pc).unwrap();
        assert_eq!(report.heldout_accuracy, 1.0);
        assert!(report.final_heldout_loss < report.initial_heldout_loss);
    }

    #[test]
    fn uniform_source_plateaus_at_entropy() {
        let c = config(8);
        let p = ModelParams::init(&c, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        // tokens drawn uniformly from the full vocabulary except PAD
        let corpus: Vec<Vec<u32>> = (0..200).map(|_| (0..10).map(|_| rng.random_range(1..8)).collect()).collect();
        let pc = PretrainConfig {
            steps: 150,
            learning_rate: 3e-3,
            batch_size: 8,
            heldout_fraction: 0.25,
            ..PretrainConfig::default()
        };
        let (_, report) = pretrain_lm(p, &c, &corpus, &pc).unwrap();
        let floor = 7f64.ln();
        assert!(
            (report.final_heldout_loss - floor).abs() < 0.1,
            "{} vs {floor}",
            report.final_heldout_loss
        );
    }
}
