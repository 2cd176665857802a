//! Fine-tuning loop for the window classifier.

mod optim;

pub use optim::{adamw_step, clip_gradients, global_norm, lr_schedule, AdamWConfig, AdamWState, NonFiniteGradient};

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::Tensor2;
use crate::metrics::{MetricsError, MetricsReport, DEFAULT_THRESHOLD};
use crate::model::{classification_grads, forward_classifier, ModelConfig, ModelError, ModelParams, ParamLayout};
use crate::objectives::{LossKind, PROB_CLAMP};
use crate::session::{DatasetSplit, LabeledWindow};

/// Consecutive skipped steps tolerated before training aborts.
pub const MAX_CONSECUTIVE_SKIPS: usize = 3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training split has no {0} windows")]
    EmptySplit(&'static str),
    #[error("loss stayed non-finite for {skips} consecutive steps (last step {step})")]
    Diverged { step: usize, skips: usize },
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub max_grad_norm: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            epochs: 1,
            batch_size: 8,
            grad_accum_steps: 4,
            max_grad_norm: 1.0,
            warmup_fraction: 0.1,
            weight_decay: 0.01,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            seed: 0,
            loss: LossKind::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::BadConfig(m.to_string()));
        if !(self.learning_rate > 0.0) || !(self.max_grad_norm > 0.0) || !(self.adam_eps > 0.0) {
            return bad("learning_rate, max_grad_norm and adam_eps must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.grad_accum_steps == 0 {
            return bad("epochs, batch_size and grad_accum_steps must be positive");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.adam_betas.0,
            beta2: self.adam_betas.1,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Micro-batches per epoch, optimizer steps per epoch.
    pub fn steps_per_epoch(&self, train_len: usize) -> (usize, usize) {
        let micro = train_len.div_ceil(self.batch_size);
        (micro, micro.div_ceil(self.grad_accum_steps))
    }

    pub fn total_steps(&self, train_len: usize) -> usize {
        self.epochs * self.steps_per_epoch(train_len).1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub val_loss: f64,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Optimizer steps dropped because of a non-finite loss or gradient.
    pub skipped: Vec<usize>,
}

impl TrainingCurve {
    pub fn write_steps(&self, path: &Path) -> Result<(), TrainError> {
        write_file(path, |w| {
            writeln!(w, "step,loss,lr")?;
            for s in &self.steps {
                writeln!(w, "{},{},{}", s.step, s.loss, s.lr)?;
            }
            Ok(())
        })
    }

    pub fn write_epochs(&self, path: &Path) -> Result<(), TrainError> {
        write_file(path, |w| {
            writeln!(w, "epoch,val_loss,accuracy,precision,recall,f1,auc")?;
            for e in &self.epochs {
                let m = &e.metrics;
                let auc = m.auc.map(|a| a.to_string()).unwrap_or_default();
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    e.epoch, e.val_loss, m.accuracy, m.precision, m.recall, m.f1, auc
                )?;
            }
            Ok(())
        })
    }
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), TrainError> {
    let io_err = |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation F1.
    pub best: ModelParams,
    pub best_epoch: usize,
    pub last: ModelParams,
    pub curve: TrainingCurve,
}

impl TrainOutcome {
    pub fn best_record(&self) -> &EpochRecord {
        &self.curve.epochs[self.best_epoch - 1]
    }
}

/// Scores and mean loss of `params` over `windows`.
pub fn evaluate(
    params: &ModelParams,
    config: &ModelConfig,
    windows: &[LabeledWindow],
    loss: &LossKind,
) -> Result<(Vec<f64>, f64), ModelError> {
    let scores: Vec<f64> = windows
        .par_iter()
        .map(|w| forward_classifier(params, config, &w.event_ids).map(|o| o.p_anomaly))
        .collect::<Result<_, _>>()?;
    let total: f64 = scores
        .iter()
        .zip(windows)
        .map(|(&p, w)| {
            let p_true = if w.label == 1 { p } else { 1.0 - p };
            loss.sample_loss(p_true.max(PROB_CLAMP), w.label)
        })
        .sum();
    Ok((scores, total / windows.len().max(1) as f64))
}

fn dropout_seed(config: &ModelConfig, seed: u64, step: usize, index: usize) -> Option<u64> {
    (config.dropout > 0.0).then(|| {
        seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
    })
}

/// Fine-tunes `params` on `split.train`, validating after every epoch.
pub fn train(
    params: ModelParams,
    config: &ModelConfig,
    split: &DatasetSplit,
    tconfig: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    tconfig.validate()?;
    config.validate()?;
    params.check_shapes(config)?;
    if split.train.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    if split.val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }

    let layout = ParamLayout::new(config);
    let decays: Vec<bool> = (0..params.tensors.len()).map(|i| layout.decays(i)).collect();
    let adamw = tconfig.adamw();
    let total_steps = tconfig.total_steps(split.train.len());
    let group = tconfig.batch_size * tconfig.grad_accum_steps;

    let mut rng = ChaCha8Rng::seed_from_u64(tconfig.seed);
    let mut params = params;
    let mut state = AdamWState::new(&params.tensors);
    let mut curve = TrainingCurve::default();
    let mut best: Option<(ModelParams, usize, f64, f64)> = None;
    let mut step = 0usize;
    let mut consecutive_skips = 0usize;
    let mut order: Vec<usize> = (0..split.train.len()).collect();

    for epoch in 1..=tconfig.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(group) {
            let micro_batches: Vec<&[usize]> = chunk.chunks(tconfig.batch_size).collect();
            let per_window: Vec<_> = chunk
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let w = &split.train[i];
                    classification_grads(
                        &params,
                        config,
                        &w.event_ids,
                        w.label,
                        tconfig.loss,
                        dropout_seed(config, tconfig.seed, step, k),
                    )
                })
                .collect::<Result<_, _>>()?;

            // mean within each micro-batch, then mean across micro-batches
            let mut grads = params.zeros_like();
            let mut loss = 0.0;
            let mut offset = 0;
            for mb in &micro_batches {
                let weight = 1.0 / (mb.len() * micro_batches.len()) as f64;
                for sample in &per_window[offset..offset + mb.len()] {
                    loss += sample.loss * weight;
                    for (g, s) in grads.iter_mut().zip(&sample.grads) {
                        add_scaled(g, s, weight);
                    }
                }
                offset += mb.len();
            }

            let lr = lr_schedule(step, total_steps, tconfig.learning_rate, tconfig.warmup_fraction);
            let clipped = if loss.is_finite() {
                clip_gradients(&mut grads, tconfig.max_grad_norm).ok()
            } else {
                None
            };
            if clipped.is_some() {
                adamw_step(&mut params.tensors, &grads, &decays, &mut state, lr, &adamw);
                curve.steps.push(StepRecord { step, loss, lr });
                consecutive_skips = 0;
            } else {
                log::warn!("skipping optimizer step {step}: non-finite loss or gradient");
                curve.skipped.push(step);
                consecutive_skips += 1;
                if consecutive_skips >= MAX_CONSECUTIVE_SKIPS {
                    return Err(TrainError::Diverged {
                        step,
                        skips: consecutive_skips,
                    });
                }
            }
            step += 1;
        }

        let (scores, val_loss) = evaluate(&params, config, &split.val, &tconfig.loss)?;
        let labels: Vec<u8> = split.val.iter().map(|w| w.label).collect();
        let metrics = MetricsReport::from_scores(&scores, &labels, DEFAULT_THRESHOLD)?;
        log::info!(
            "epoch {epoch}: val loss {val_loss:.5} f1 {:.4} precision {:.4} recall {:.4}",
            metrics.f1,
            metrics.precision,
            metrics.recall
        );
        let f1 = metrics.f1;
        curve.epochs.push(EpochRecord {
            epoch,
            val_loss,
            metrics,
        });
        let improves = match &best {
            None => true,
            Some((_, _, bf1, bloss)) => f1 > *bf1 || (f1 == *bf1 && val_loss < *bloss),
        };
        if improves {
            best = Some((params.clone(), epoch, f1, val_loss));
        }
    }

    let (best, best_epoch, _, _) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: params,
        curve,
    })
}

fn add_scaled(acc: &mut Tensor2, x: &Tensor2, s: f64) {
    for (a, b) in acc.data_mut().iter_mut().zip(x.data()) {
        *a += b * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::objectives::FocalParams;
    use rand::Rng;

    #[test]
    fn step_counts_follow_accumulation() {
        let t = TrainConfig::default();
        assert_eq!(t.steps_per_epoch(2700), (338, 85));
        assert_eq!(t.total_steps(2700), 85);
        assert_eq!(TrainConfig { epochs: 3, ..t }.total_steps(2700), 255);
    }

    fn toy_split(seed: u64) -> DatasetSplit {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut make = |n: usize, anomalous: bool, tag: &str| -> Vec<LabeledWindow> {
            (0..n)
                .map(|i| {
                    let mut ids: Vec<u32> = (0..6).map(|_| rng.random_range(3..8)).collect();
                    if anomalous {
                        let at = rng.random_range(0..6);
                        ids[at] = 9;
                    }
                    LabeledWindow {
                        window_id: format!("{tag}{i}#0"),
                        event_ids: ids,
                        label: anomalous as u8,
                        pad_len: 0,
                    }
                })
                .collect()
        };
        let mut train = make(300, false, "tn");
        train.extend(make(100, true, "ta"));
        let mut val = make(30, false, "vn");
        val.extend(make(10, true, "va"));
        DatasetSplit {
            train,
            val,
            test: Vec::new(),
            seed,
            train_fraction: 0.75,
        }
    }

    fn toy_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 10,
            d_model: 16,
            n_heads: 2,
            n_layers: 1,
            d_ff: 32,
            max_seq_len: 8,
            dropout: 0.0,
        }
    }

    fn toy_train_config() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-2,
            epochs: 1,
            batch_size: 8,
            grad_accum_steps: 1,
            loss: LossKind::Focal(FocalParams::default()),
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_toy_reaches_perfect_f1() {
        let config = toy_config();
        let params = ModelParams::init(&config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let out = train(params, &config, &toy_split(5), &toy_train_config()).unwrap();
        assert_eq!(out.best_record().metrics.f1, 1.0, "{:?}", out.curve.epochs);
        let max_f1 = out.curve.epochs.iter().map(|e| e.metrics.f1).fold(0.0, f64::max);
        assert_eq!(out.best_record().metrics.f1, max_f1);
    }

    #[test]
    fn training_is_deterministic() {
        let config = toy_config();
        let tc = toy_train_config();
        let run = || {
            let params = ModelParams::init(&config, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
            train(params, &config, &toy_split(6), &tc).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.last, b.last);
    }

    #[test]
    fn logged_lr_follows_schedule() {
        let config = toy_config();
        let tc = TrainConfig {
            epochs: 2,
            grad_accum_steps: 2,
            ..toy_train_config()
        };
        let split = toy_split(7);
        let params = ModelParams::init(&config, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let out = train(params, &config, &split, &tc).unwrap();
        let total = tc.total_steps(split.train.len());
        assert_eq!(out.curve.steps.len(), total);
        for (i, s) in out.curve.steps.iter().enumerate() {
            assert_eq!(s.step, i);
            assert_eq!(s.lr, lr_schedule(i, total, tc.learning_rate, tc.warmup_fraction));
            assert!(s.loss.is_finite());
        }
    }

    #[test]
    fn empty_splits_are_rejected() {
        let config = toy_config();
        let params = ModelParams::init(&config, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut split = toy_split(8);
        split.val.clear();
        assert!(matches!(
            train(params, &config, &split, &toy_train_config()),
            Err(TrainError::EmptySplit("validation"))
        ));
    }
}
