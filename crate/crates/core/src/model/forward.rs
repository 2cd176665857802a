use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LayerSlot, ModelConfig, ModelError, ModelParams, ParamLayout};
use crate::kernel::{KernelError, Tape, Tensor2, Var, MASK_VALUE};
use crate::objectives::{classification_loss, sequence_cross_entropy, LossKind};
use crate::session::PAD;

/// Classifier readout for one window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierOutput {
    pub logits: [f64; 2],
    pub p_anomaly: f64,
}

/// Loss and parameter gradients for one sample.
#[derive(Debug)]
pub struct SampleGrads {
    pub loss: f64,
    /// Anomaly probability for classifier samples; unused for LM samples.
    pub p_anomaly: f64,
    pub grads: Vec<Tensor2>,
}

/// `softmax(Q Kᵀ / sqrt(d_k) + M) V` with future positions masked.
/// Returns the output and the attention weights.
pub fn causal_attention(q: &Tensor2, k: &Tensor2, v: &Tensor2, d_k: usize) -> Result<(Tensor2, Tensor2), KernelError> {
    if q.rows() != k.rows() || k.rows() != v.rows() {
        return Err(KernelError::ShapeMismatch {
            op: "causal_attention",
            left: q.shape(),
            right: v.shape(),
        });
    }
    let mut scores = q.matmul_nt(k)?;
    scores.scale_in_place(1.0 / (d_k as f64).sqrt());
    for i in 0..scores.rows() {
        for s in scores.row_mut(i).iter_mut().skip(i + 1) {
            *s = MASK_VALUE;
        }
    }
    let weights = scores.softmax_rows();
    let out = weights.matmul(v)?;
    Ok((out, weights))
}

fn attend(tape: &mut Tape, q: Var, k: Var, v: Var, d_k: usize) -> Result<Var, KernelError> {
    let scores = tape.matmul_nt(q, k)?;
    let scaled = tape.scale(scores, 1.0 / (d_k as f64).sqrt());
    let masked = tape.causal_mask(scaled);
    let weights = tape.softmax_rows(masked);
    tape.matmul(weights, v)
}

/// Strips right padding and validates the remaining tokens.
fn real_ids(config: &ModelConfig, tokens: &[u32]) -> Result<Vec<usize>, ModelError> {
    let real = tokens.len() - tokens.iter().rev().take_while(|&&t| t == PAD).count();
    if real == 0 {
        return Err(ModelError::SequenceTooShort);
    }
    if tokens.len() > config.max_seq_len {
        return Err(ModelError::SequenceTooLong {
            len: tokens.len(),
            max: config.max_seq_len,
        });
    }
    tokens[..real]
        .iter()
        .map(|&t| {
            if (t as usize) < config.vocab_size {
                Ok(t as usize)
            } else {
                Err(ModelError::TokenOutOfRange {
                    token: t,
                    vocab: config.vocab_size,
                })
            }
        })
        .collect()
}

fn maybe_dropout(tape: &mut Tape, x: Var, rate: f64, rng: &mut Option<ChaCha8Rng>) -> Var {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep: Vec<bool> = (0..tape.value(x).len()).map(|_| rng.random::<f64>() >= rate).collect();
            tape.dropout(x, &keep, rate)
        }
        _ => x,
    }
}

/// Records the decoder on `tape` and returns the final-normalized hidden
/// states, one row per token. `params` are leaves in layout order.
pub(crate) fn hidden_states(
    tape: &mut Tape,
    params: &[Var],
    config: &ModelConfig,
    ids: &[usize],
    dropout_seed: Option<u64>,
) -> Result<Var, KernelError> {
    let layout = ParamLayout::new(config);
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let d = config.d_model;
    let dh = config.head_dim();
    let positions: Vec<usize> = (0..ids.len()).collect();

    let tok = tape.gather_rows(params[ParamLayout::TOKEN_EMBEDDING], ids)?;
    let pos = tape.gather_rows(params[ParamLayout::POSITION_EMBEDDING], &positions)?;
    let mut x = tape.add(tok, pos)?;
    x = maybe_dropout(tape, x, config.dropout, &mut rng);

    for l in 0..config.n_layers {
        let p = |slot| params[layout.layer(l, slot)];
        let h = tape.layer_norm(x, p(LayerSlot::Ln1Gain), p(LayerSlot::Ln1Bias))?;
        let qkv = tape.matmul(h, p(LayerSlot::Qkv))?;
        let qkv = tape.add_row(qkv, p(LayerSlot::QkvBias))?;
        let mut heads = Vec::with_capacity(config.n_heads);
        for head in 0..config.n_heads {
            let q = tape.slice_cols(qkv, head * dh, dh)?;
            let k = tape.slice_cols(qkv, d + head * dh, dh)?;
            let v = tape.slice_cols(qkv, 2 * d + head * dh, dh)?;
            heads.push(attend(tape, q, k, v, dh)?);
        }
        let a = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
        let a = tape.matmul(a, p(LayerSlot::AttnOut))?;
        let a = tape.add_row(a, p(LayerSlot::AttnOutBias))?;
        let a = maybe_dropout(tape, a, config.dropout, &mut rng);
        x = tape.add(x, a)?;

        let h = tape.layer_norm(x, p(LayerSlot::Ln2Gain), p(LayerSlot::Ln2Bias))?;
        let f = tape.matmul(h, p(LayerSlot::Ff1))?;
        let f = tape.add_row(f, p(LayerSlot::Ff1Bias))?;
        let f = tape.gelu(f);
        let f = tape.matmul(f, p(LayerSlot::Ff2))?;
        let f = tape.add_row(f, p(LayerSlot::Ff2Bias))?;
        let f = maybe_dropout(tape, f, config.dropout, &mut rng);
        x = tape.add(x, f)?;
    }
    tape.layer_norm(x, params[layout.final_gain()], params[layout.final_bias()])
}

/// Classification head over every position (`T × 2` logits).
pub(crate) fn head_logits(tape: &mut Tape, params: &[Var], config: &ModelConfig, hidden: Var) -> Result<Var, KernelError> {
    let layout = ParamLayout::new(config);
    let z = tape.matmul(hidden, params[layout.head_weight()])?;
    tape.add_row(z, params[layout.head_bias()])
}

/// Records the classifier on `tape` and returns the `1 × 2` logits at the
/// last real token.
pub fn classifier_on_tape(
    tape: &mut Tape,
    params: &[Var],
    config: &ModelConfig,
    tokens: &[u32],
    dropout_seed: Option<u64>,
) -> Result<Var, ModelError> {
    let ids = real_ids(config, tokens)?;
    let last = ids.len() - 1;
    let hidden = hidden_states(tape, params, config, &ids, dropout_seed)?;
    let final_row = tape.select_row(hidden, last)?;
    Ok(head_logits(tape, params, config, final_row)?)
}

fn leaves(tape: &mut Tape, params: &ModelParams) -> Vec<Var> {
    params.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
}

fn readout(logits: &Tensor2) -> ClassifierOutput {
    let z = [logits.data()[0], logits.data()[1]];
    let p = crate::kernel::softmax(&z);
    ClassifierOutput { logits: z, p_anomaly: p[1] }
}

/// Logits at the last non-PAD position of a right-padded window.
pub fn forward_classifier(params: &ModelParams, config: &ModelConfig, tokens: &[u32]) -> Result<ClassifierOutput, ModelError> {
    let mut tape = Tape::new();
    let vars = leaves(&mut tape, params);
    let logits = classifier_on_tape(&mut tape, &vars, config, tokens, None)?;
    Ok(readout(tape.value(logits)))
}

/// Classifier-head logits at every real position (`T × 2`). Row `t` depends
/// only on tokens `0..=t`.
pub fn classifier_logits_by_position(params: &ModelParams, config: &ModelConfig, tokens: &[u32]) -> Result<Tensor2, ModelError> {
    let ids = real_ids(config, tokens)?;
    let mut tape = Tape::new();
    let vars = leaves(&mut tape, params);
    let hidden = hidden_states(&mut tape, &vars, config, &ids, None)?;
    let logits = head_logits(&mut tape, &vars, config, hidden)?;
    Ok(tape.value(logits).clone())
}

fn lm_logits(tape: &mut Tape, params: &[Var], config: &ModelConfig, ids: &[usize], dropout_seed: Option<u64>) -> Result<Var, KernelError> {
    let hidden = hidden_states(tape, params, config, ids, dropout_seed)?;
    tape.matmul_nt(hidden, params[ParamLayout::TOKEN_EMBEDDING])
}

/// Next-token distributions: row `t` is `P(x_{t+1} | x_0..x_t)`.
pub fn forward_lm(params: &ModelParams, config: &ModelConfig, tokens: &[u32]) -> Result<Tensor2, ModelError> {
    let ids = real_ids(config, tokens)?;
    let mut tape = Tape::new();
    let vars = leaves(&mut tape, params);
    let logits = lm_logits(&mut tape, &vars, config, &ids, None)?;
    Ok(tape.value(logits).softmax_rows())
}

/// `sum_t log P(x_t | x_<t)` over the realized tokens after the first.
pub fn sequence_log_prob(params: &ModelParams, config: &ModelConfig, tokens: &[u32]) -> Result<f64, ModelError> {
    let probs = forward_lm(params, config, tokens)?;
    let real = probs.rows();
    Ok((1..real).map(|t| probs.get(t - 1, tokens[t] as usize).ln()).sum())
}

fn collect_grads(tape: &Tape, vars: &[Var], loss: Var) -> Vec<Tensor2> {
    let mut g = tape.backward(loss);
    vars.iter()
        .map(|&v| {
            g.take(v).unwrap_or_else(|| {
                let t = tape.value(v);
                Tensor2::zeros(t.rows(), t.cols())
            })
        })
        .collect()
}

/// Classification loss on one window plus gradients for every parameter.
pub fn classification_grads(
    params: &ModelParams,
    config: &ModelConfig,
    tokens: &[u32],
    label: u8,
    kind: LossKind,
    dropout_seed: Option<u64>,
) -> Result<SampleGrads, ModelError> {
    let mut tape = Tape::new();
    let vars = leaves(&mut tape, params);
    let logits = classifier_on_tape(&mut tape, &vars, config, tokens, dropout_seed)?;
    let p_anomaly = readout(tape.value(logits)).p_anomaly;
    let loss = classification_loss(&mut tape, logits, label, kind)?;
    Ok(SampleGrads {
        loss: tape.value(loss).data()[0],
        p_anomaly,
        grads: collect_grads(&tape, &vars, loss),
    })
}

/// Mean next-token cross-entropy on one sequence plus gradients.
pub fn lm_grads(params: &ModelParams, config: &ModelConfig, tokens: &[u32], dropout_seed: Option<u64>) -> Result<SampleGrads, ModelError> {
    let ids = real_ids(config, tokens)?;
    if ids.len() < 2 {
        return Err(ModelError::SequenceTooShort);
    }
    let mut tape = Tape::new();
    let vars = leaves(&mut tape, params);
    let logits = lm_logits(&mut tape, &vars, config, &ids, dropout_seed)?;
    let targets: Vec<Option<usize>> = (0..ids.len()).map(|t| ids.get(t + 1).copied()).collect();
    let loss = sequence_cross_entropy(&mut tape, logits, &targets)?;
    Ok(SampleGrads {
        loss: tape.value(loss).data()[0],
        p_anomaly: f64::NAN,
        grads: collect_grads(&tape, &vars, loss),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::finite_difference_check;
    use crate::objectives::FocalParams;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 16,
            max_seq_len: 8,
            dropout: 0.0,
        }
    }

    fn params(config: &ModelConfig, seed: u64, std: f64) -> ModelParams {
        ModelParams::init_with_std(config, std, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn single_row_attention_returns_v() {
        let q = Tensor2::row_vector(&[0.3, -0.2]);
        let k = Tensor2::row_vector(&[1.5, 0.1]);
        let v = Tensor2::row_vector(&[4.0, -7.0]);
        let (out, _) = causal_attention(&q, &k, &v, 2).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn zero_scores_average_the_prefix() {
        let q = Tensor2::zeros(3, 2);
        let v = Tensor2::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 9.0]]);
        let (out, w) = causal_attention(&q, &q, &v, 2).unwrap();
        assert_eq!(out.row(0), &[1.0, 2.0]);
        assert!((out.get(1, 0) - 2.0).abs() < 1e-15 && (out.get(1, 1) - 3.0).abs() < 1e-15);
        assert!((out.get(2, 0) - 3.0).abs() < 1e-15 && (out.get(2, 1) - 5.0).abs() < 1e-15);
        for r in 0..3 {
            assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.row(r).iter().skip(r + 1).all(|&x| x == 0.0));
        }
    }

    #[test]
    fn future_value_rows_do_not_leak() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rand = |rng: &mut ChaCha8Rng| {
            Tensor2::from_vec(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let (q, k, mut v) = (rand(&mut rng), rand(&mut rng), rand(&mut rng));
        let (a, _) = causal_attention(&q, &k, &v, 3).unwrap();
        v.row_mut(3).iter_mut().for_each(|x| *x += 10.0);
        let (b, _) = causal_attention(&q, &k, &v, 3).unwrap();
        for r in 0..3 {
            assert_eq!(a.row(r), b.row(r));
        }
    }

    #[test]
    fn padding_and_length_errors() {
        let c = tiny();
        let p = params(&c, 0, 0.02);
        assert!(matches!(forward_classifier(&p, &c, &[0, 0, 0]), Err(ModelError::SequenceTooShort)));
        assert!(matches!(
            forward_classifier(&p, &c, &[4; 9]),
            Err(ModelError::SequenceTooLong { len: 9, max: 8 })
        ));
        assert!(matches!(forward_classifier(&p, &c, &[4, 40]), Err(ModelError::TokenOutOfRange { .. })));
    }

    #[test]
    fn fresh_model_is_near_even() {
        let c = tiny();
        let p = params(&c, 1, 0.02);
        let out = forward_classifier(&p, &c, &[3, 4, 5, 0, 0]).unwrap();
        assert!(out.p_anomaly > 0.0 && out.p_anomaly < 1.0);
        assert!((out.p_anomaly - 0.5).abs() < 0.05);
    }

    #[test]
    fn readout_ignores_padding() {
        let c = tiny();
        let p = params(&c, 2, 0.3);
        let padded = forward_classifier(&p, &c, &[3, 7, 5, 0, 0, 0]).unwrap();
        let bare = forward_classifier(&p, &c, &[3, 7, 5]).unwrap();
        assert_eq!(padded, bare);
        let by_pos = classifier_logits_by_position(&p, &c, &[3, 7, 5, 9, 11]).unwrap();
        assert_eq!(by_pos.row(2), &bare.logits);
    }

    #[test]
    fn lm_rows_are_distributions() {
        let c = tiny();
        let p = params(&c, 4, 0.3);
        let probs = forward_lm(&p, &c, &[3, 4, 5, 6]).unwrap();
        for r in 0..probs.rows() {
            assert!((probs.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_embeddings_give_uniform_lm() {
        let c = tiny();
        let mut p = params(&c, 5, 0.3);
        let t = &mut p.tensors[ParamLayout::TOKEN_EMBEDDING];
        *t = Tensor2::zeros(t.rows(), t.cols());
        let tokens = [3, 4, 5, 6, 7];
        let lp = sequence_log_prob(&p, &c, &tokens).unwrap();
        let expected = -(tokens.len() as f64 - 1.0) * (c.vocab_size as f64).ln();
        assert!((lp - expected).abs() < 1e-10, "{lp} vs {expected}");
    }

    #[test]
    fn incremental_log_prob_matches_batch() {
        let c = tiny();
        let p = params(&c, 6, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        for _ in 0..5 {
            let tokens: Vec<u32> = (0..7).map(|_| rng.random_range(3..12)).collect();
            let batch = sequence_log_prob(&p, &c, &tokens).unwrap();
            let mut step = 0.0;
            for t in 1..tokens.len() {
                let probs = forward_lm(&p, &c, &tokens[..t]).unwrap();
                step += probs.get(t - 1, tokens[t] as usize).ln();
            }
            assert!((batch - step).abs() < 1e-10);
        }
    }

    #[test]
    fn every_block_passes_gradient_check() {
        let c = tiny();
        let p = params(&c, 7, 0.3);
        let tokens = [3u32, 9, 4, 11, 5, 0];
        let kind = LossKind::Focal(FocalParams::default());
        for block in 0..p.tensors.len() {
            let f = |tape: &mut Tape, x: Var| -> Result<Var, KernelError> {
                let vars: Vec<Var> = p
                    .tensors
                    .iter()
                    .enumerate()
                    .map(|(i, t)| if i == block { x } else { tape.leaf(t.clone()) })
                    .collect();
                let logits = classifier_on_tape(tape, &vars, &c, &tokens, None).map_err(|e| match e {
                    ModelError::Kernel(k) => k,
                    other => panic!("{other}"),
                })?;
                classification_loss(tape, logits, 1, kind)
            };
            let err = finite_difference_check(f, &p.tensors[block], 1e-5).unwrap();
            assert!(err < 1e-4, "block {block}: {err}");
        }
    }

    #[test]
    fn lm_gradient_matches_finite_differences() {
        let c = tiny();
        let p = params(&c, 8, 0.3);
        let tokens = [3u32, 9, 4, 11, 5];
        let g = lm_grads(&p, &c, &tokens, None).unwrap();
        let block = ParamLayout::TOKEN_EMBEDDING;
        let h = 1e-5;
        let mut worst = 0.0_f64;
        for i in 0..p.tensors[block].len() {
            let mut plus = p.clone();
            plus.tensors[block].data_mut()[i] += h;
            let mut minus = p.clone();
            minus.tensors[block].data_mut()[i] -= h;
            let num = (lm_grads(&plus, &c, &tokens, None).unwrap().loss - lm_grads(&minus, &c, &tokens, None).unwrap().loss)
                / (2.0 * h);
            worst = worst.max(crate::kernel::relative_error(g.grads[block].data()[i], num));
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn dropout_changes_training_forward_only() {
        let c = ModelConfig { dropout: 0.3, ..tiny() };
        let p = params(&c, 9, 0.3);
        let tokens = [3u32, 9, 4, 11];
        let a = classification_grads(&p, &c, &tokens, 0, LossKind::CrossEntropy, Some(1)).unwrap();
        let b = classification_grads(&p, &c, &tokens, 0, LossKind::CrossEntropy, Some(1)).unwrap();
        let plain = classification_grads(&p, &c, &tokens, 0, LossKind::CrossEntropy, None).unwrap();
        assert_eq!(a.loss, b.loss);
        assert_ne!(a.loss, plain.loss);
    }
}
