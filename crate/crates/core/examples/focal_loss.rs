//! Cross-entropy against focal loss for a range of true-class probabilities.

use seqguard::objectives::{cross_entropy, focal_loss, loss_logit_grad, FocalParams, LossKind};

fn main() {
    let fp = FocalParams::default();
    println!("alpha = {}, gamma = {}", fp.alpha, fp.gamma);
    println!("{:>6} {:>12} {:>12} {:>12} {:>8}", "p", "ce", "focal(y=1)", "focal(y=0)", "ratio");
    for p in [0.05, 0.2, 0.5, 0.8, 0.9, 0.99] {
        let ce = cross_entropy(p);
        let pos = focal_loss(p, fp.alpha_for(1), fp.gamma);
        let neg = focal_loss(p, fp.alpha_for(0), fp.gamma);
        println!("{p:>6} {ce:>12.6e} {pos:>12.6e} {neg:>12.6e} {:>8.4}", pos / ce);
    }

    // gradient with respect to the two logits of one anomalous sample
    let logits = [0.4, -0.3];
    for kind in [LossKind::CrossEntropy, LossKind::Focal(fp)] {
        let g = loss_logit_grad(&kind, &logits, 1);
        println!("{kind}: dL/dz = [{:.5}, {:.5}]", g[0], g[1]);
    }
}
