//! Binary classification losses: focal loss and its cross-entropy baseline.
//!
//! Both operate on the probability the model assigns to the true class.
//! Focal loss scales cross-entropy by `alpha_t * (1 - p_t)^gamma`, so with
//! `alpha_t = 1, gamma = 0` the two coincide exactly.

use serde::{Deserialize, Serialize};

use crate::kernel::{softmax, KernelError, Tape, Tensor2, Var};

/// Lower clamp applied to the true-class probability before taking a log.
pub const PROB_CLAMP: f64 = 1e-12;

/// Focal loss parameters. `alpha` weights the anomaly class; the normal
/// class receives `1 - alpha`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

impl FocalParams {
    /// Class-indexed weight `alpha_t`.
    pub fn alpha_for(&self, label: u8) -> f64 {
        if label == 1 {
            self.alpha
        } else {
            1.0 - self.alpha
        }
    }
}

/// Objective used for the classification head.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Focal(FocalParams),
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::Focal(FocalParams::default())
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::CrossEntropy => f.write_str("cross_entropy"),
            LossKind::Focal(p) => write!(f, "focal(alpha={},gamma={})", p.alpha, p.gamma),
        }
    }
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::Focal(_) => "focal",
        }
    }

    /// Loss for one sample given the probability of its true class.
    pub fn sample_loss(&self, p_true: f64, label: u8) -> f64 {
        match self {
            LossKind::CrossEntropy => cross_entropy(p_true),
            LossKind::Focal(fp) => focal_loss(p_true, fp.alpha_for(label), fp.gamma),
        }
    }

    /// `(alpha_t, gamma)` such that the loss is `-alpha_t (1-p)^gamma log p`.
    fn weights(&self, label: u8) -> (f64, f64) {
        match self {
            LossKind::CrossEntropy => (1.0, 0.0),
            LossKind::Focal(fp) => (fp.alpha_for(label), fp.gamma),
        }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0)
}

pub fn cross_entropy(p_true: f64) -> f64 {
    -clamp_prob(p_true).ln()
}

/// `-alpha_t * (1 - p_t)^gamma * ln(p_t)`
pub fn focal_loss(p_true: f64, alpha_t: f64, gamma: f64) -> f64 {
    let p = clamp_prob(p_true);
    -alpha_t * (1.0 - p).powf(gamma) * p.ln()
}

/// Mean loss over a batch of `(p_true, label)` pairs.
pub fn batch_loss(kind: &LossKind, samples: &[(f64, u8)]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|&(p, y)| kind.sample_loss(p, y)).sum::<f64>() / samples.len() as f64
}

/// Derivative of the loss with respect to each logit of a softmax head.
///
/// With `p = softmax(z)` and `p_t = p[label]`:
/// `dL/dz_j = alpha_t (delta_jt - p_j) [gamma (1-p_t)^(gamma-1) p_t ln p_t - (1-p_t)^gamma]`.
/// Zero when `p_t` sits below the clamp, since the clamped loss is flat there.
pub fn loss_logit_grad(kind: &LossKind, logits: &[f64], label: usize) -> Vec<f64> {
    let probs = softmax(logits);
    let p_t = probs[label];
    if p_t < PROB_CLAMP {
        return vec![0.0; logits.len()];
    }
    let (alpha, gamma) = kind.weights(label as u8);
    let q = 1.0 - p_t;
    let focus_term = if gamma == 0.0 || q == 0.0 {
        0.0
    } else {
        gamma * q.powf(gamma - 1.0) * p_t * p_t.ln()
    };
    let common = alpha * (focus_term - q.powf(gamma));
    probs
        .iter()
        .enumerate()
        .map(|(j, &p_j)| {
            let delta = if j == label { 1.0 } else { 0.0 };
            common * (delta - p_j)
        })
        .collect()
}

/// Records the classification loss of a `1 × k` logit row on the tape.
pub fn classification_loss(tape: &mut Tape, logits: Var, label: u8, kind: LossKind) -> Result<Var, KernelError> {
    let z = tape.value(logits);
    if z.rows() != 1 || (label as usize) >= z.cols() {
        return Err(KernelError::ShapeMismatch {
            op: "classification_loss",
            left: z.shape(),
            right: (1, label as usize + 1),
        });
    }
    let probs = softmax(z.data());
    let loss = kind.sample_loss(probs[label as usize], label);
    let backward = Box::new(move |g: &Tensor2, inputs: &[&Tensor2]| {
        let grad = loss_logit_grad(&kind, inputs[0].data(), label as usize);
        let scaled: Vec<f64> = grad.iter().map(|d| d * g.data()[0]).collect();
        vec![Tensor2::row_vector(&scaled)]
    });
    Ok(tape.custom("classification_loss", &[logits], Tensor2::row_vector(&[loss]), backward))
}

/// Mean next-token cross-entropy of `T × V` logits against `targets`
/// (one per row). Rows whose target is `None` are ignored.
pub fn sequence_cross_entropy(tape: &mut Tape, logits: Var, targets: &[Option<usize>]) -> Result<Var, KernelError> {
    let z = tape.value(logits);
    if z.rows() != targets.len() {
        return Err(KernelError::ShapeMismatch {
            op: "sequence_cross_entropy",
            left: z.shape(),
            right: (targets.len(), 1),
        });
    }
    let counted = targets.iter().filter(|t| t.is_some()).count().max(1) as f64;
    let mut probs = z.softmax_rows();
    let mut total = 0.0;
    for (r, t) in targets.iter().enumerate() {
        if let Some(t) = *t {
            if t >= z.cols() {
                return Err(KernelError::IndexOutOfRange {
                    op: "sequence_cross_entropy",
                    index: t,
                    bound: z.cols(),
                });
            }
            total += cross_entropy(probs.get(r, t));
        }
    }
    // dL/dz = (p - onehot) / counted on scored rows, zero elsewhere
    for (r, t) in targets.iter().enumerate() {
        let row = probs.row_mut(r);
        match *t {
            Some(t) => {
                row[t] -= 1.0;
                row.iter_mut().for_each(|v| *v /= counted);
            }
            None => row.iter_mut().for_each(|v| *v = 0.0),
        }
    }
    let backward = Box::new(move |g: &Tensor2, _: &[&Tensor2]| {
        let mut d = probs.clone();
        d.scale_in_place(g.data()[0]);
        vec![d]
    });
    Ok(tape.custom(
        "sequence_cross_entropy",
        &[logits],
        Tensor2::row_vector(&[total / counted]),
        backward,
    ))
}
