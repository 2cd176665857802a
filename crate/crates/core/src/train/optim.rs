use serde::{Deserialize, Serialize};

use crate::kernel::Tensor2;

/// Linear warmup from 0 to `peak_lr` over `ceil(warmup_fraction * total)`
/// steps, then linear decay to 0 at `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, peak_lr: f64, warmup_fraction: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let step = step.min(total_steps);
    let warmup = (warmup_fraction * total_steps as f64).ceil() as usize;
    if step < warmup {
        peak_lr * step as f64 / warmup as f64
    } else if warmup == total_steps {
        peak_lr
    } else {
        peak_lr * (total_steps - step) as f64 / (total_steps - warmup) as f64
    }
}

/// Global L2 norm across all gradient tensors.
pub fn global_norm(grads: &[Tensor2]) -> f64 {
    grads.iter().map(Tensor2::sq_norm).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("gradient contains a non-finite value")]
pub struct NonFiniteGradient;

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm measured before clipping.
pub fn clip_gradients(grads: &mut [Tensor2], max_norm: f64) -> Result<f64, NonFiniteGradient> {
    let norm = global_norm(grads);
    if !norm.is_finite() {
        return Err(NonFiniteGradient);
    }
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale_in_place(s));
    }
    Ok(norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Clone, Debug)]
pub struct AdamWState {
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
    pub step: u64,
}

impl AdamWState {
    pub fn new(params: &[Tensor2]) -> Self {
        let zeros: Vec<Tensor2> = params.iter().map(|p| Tensor2::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One AdamW update. Decay is decoupled (`p -= lr * wd * p`) and applied
/// only where `decays[i]` is set.
pub fn adamw_step(params: &mut [Tensor2], grads: &[Tensor2], decays: &[bool], state: &mut AdamWState, lr: f64, cfg: &AdamWConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let decay = if decays[i] { 1.0 - lr * cfg.weight_decay } else { 1.0 };
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (j, (pj, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *pj = *pj * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn schedule_reference_points() {
        assert_eq!(lr_schedule(0, 100, 2e-5, 0.1), 0.0);
        assert_eq!(lr_schedule(10, 100, 2e-5, 0.1), 2e-5);
        assert!((lr_schedule(55, 100, 2e-5, 0.1) - 1.0e-5).abs() < 1e-20);
        assert_eq!(lr_schedule(100, 100, 2e-5, 0.1), 0.0);
        assert_eq!(lr_schedule(5, 100, 2e-5, 0.1), 1e-5);
        // W = ceil(0.1 * 85) = 9
        assert_eq!(lr_schedule(9, 85, 1.0, 0.1), 1.0);
        assert_eq!(lr_schedule(3, 10, 1.0, 0.0), 1.0 * 7.0 / 10.0);
    }

    #[test]
    fn clipping() {
        let mut small = vec![Tensor2::row_vector(&[0.3, 0.4])];
        assert_eq!(clip_gradients(&mut small, 1.0).unwrap(), 0.5);
        assert_eq!(small[0].data(), &[0.3, 0.4]);

        let mut big = vec![Tensor2::row_vector(&[0.0, 4.0]), Tensor2::zeros(2, 2)];
        assert_eq!(clip_gradients(&mut big, 1.0).unwrap(), 4.0);
        assert!((global_norm(&big) - 1.0).abs() < 1e-12);

        let mut bad = vec![Tensor2::row_vector(&[1.0, f64::NAN])];
        assert_eq!(clip_gradients(&mut bad, 1.0), Err(NonFiniteGradient));
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut p = vec![Tensor2::row_vector(&[1.0])];
        let g = vec![Tensor2::row_vector(&[1.0])];
        let mut st = AdamWState::new(&p);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        adamw_step(&mut p, &g, &[true], &mut st, 0.1, &cfg);
        assert!((p[0].data()[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn adamw_decay_is_decoupled() {
        let mut p = vec![Tensor2::row_vector(&[2.0]), Tensor2::row_vector(&[2.0])];
        let g = vec![Tensor2::zeros(1, 1), Tensor2::zeros(1, 1)];
        let mut st = AdamWState::new(&p);
        let cfg = AdamWConfig::default();
        adamw_step(&mut p, &g, &[true, false], &mut st, 0.1, &cfg);
        assert_eq!(p[0].data()[0], 2.0 * (1.0 - 0.001));
        assert_eq!(p[1].data()[0], 2.0);
    }

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let mut p = vec![Tensor2::from_rows(&[vec![0.5, -1.5]])];
        let before = p.clone();
        let mut st = AdamWState::new(&p);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        adamw_step(&mut p, &[Tensor2::zeros(1, 2)], &[true], &mut st, 0.1, &cfg);
        assert_eq!(p, before);
    }

    proptest! {
        #[test]
        fn schedule_bounded(step in 0usize..500, total in 1usize..500, frac in 0.0f64..0.99) {
            let lr = lr_schedule(step.min(total), total, 3e-4, frac);
            prop_assert!((0.0..=3e-4).contains(&lr));
        }

        #[test]
        fn clipped_norm_never_exceeds_max(vals in prop::collection::vec(-100.0f64..100.0, 1..20), max in 0.01f64..10.0) {
            let mut g = vec![Tensor2::row_vector(&vals)];
            clip_gradients(&mut g, max).unwrap();
            prop_assert!(global_norm(&g) <= max + 1e-9);
        }
    }
}
