//! Finite-difference check of the full classifier loss, tensor by tensor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqguard::kernel::{relative_error, DEFAULT_FD_EPS};
use seqguard::model::{classification_grads, ModelConfig, ModelParams};
use seqguard::objectives::LossKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ModelConfig {
        vocab_size: 12,
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        d_ff: 16,
        max_seq_len: 7,
        dropout: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = ModelParams::init_with_std(&config, 0.3, &mut rng);
    let tokens: Vec<u32> = (0..6).map(|_| rng.random_range(3..12)).collect();
    let kind = LossKind::Focal(Default::default());
    let loss = |p: &ModelParams| classification_grads(p, &config, &tokens, 1, kind, None).map(|g| g.loss);

    let analytic = classification_grads(&params, &config, &tokens, 1, kind, None)?;
    let layout = ModelParams::layout(&config);
    let mut probe = params.clone();
    for b in 0..params.tensors.len() {
        let mut worst = 0.0_f64;
        for i in 0..params.tensors[b].len() {
            let orig = probe.tensors[b].data()[i];
            probe.tensors[b].data_mut()[i] = orig + DEFAULT_FD_EPS;
            let plus = loss(&probe)?;
            probe.tensors[b].data_mut()[i] = orig - DEFAULT_FD_EPS;
            let minus = loss(&probe)?;
            probe.tensors[b].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * DEFAULT_FD_EPS);
            worst = worst.max(relative_error(analytic.grads[b].data()[i], numeric));
        }
        let (r, c) = params.tensors[b].shape();
        println!("{:<28} {r:>3}x{c:<3} max rel err {worst:.2e}", layout.name(b));
    }
    Ok(())
}
