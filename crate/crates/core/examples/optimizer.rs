//! Adam with margin and reconstruction losses on a single batch: the loss
//! falls as the class activations separate.
//!
//!     cargo run --release --example optimizer

use rescaps::loss::{margin_loss, reconstruction_loss, total_loss, LossConfig};
use rescaps::optim::{Adam, AdamConfig};
use rescaps::tensor::{Graph, Tensor};

fn main() -> rescaps::Result<()> {
    // three samples, four classes: lengths are squashed logits, the
    // "reconstruction" is a sigmoid of the same logits
    let labels = [0, 2, 3];
    let target = Tensor::from_f64(vec![3, 4], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0])?;
    let mut params = vec![Tensor::<f64>::full(vec![3, 4, 2], 0.1)];
    let mut adam = Adam::new(AdamConfig { learning_rate: 0.05, ..AdamConfig::default() }, &params);
    let cfg = LossConfig { recon_weight: 0.1, ..LossConfig::default() };
    for step in 0..=200 {
        let mut g = Graph::new();
        let w = g.param(params[0].clone())?;
        let caps = g.squash(w, 2)?;
        let lengths = g.norm(caps, 2)?;
        let margin = margin_loss(&mut g, lengths, &labels, &cfg)?;
        let flat = g.reshape(lengths, vec![3, 4])?;
        let recon = g.sigmoid(flat)?;
        let t = g.constant(target.clone())?;
        let recon = reconstruction_loss(&mut g, recon, t)?;
        let loss = total_loss(&mut g, margin, Some(recon), &cfg)?;
        if step % 50 == 0 {
            println!("step {step:>3}: loss {:.5}  lengths {:.2?}", g.value(loss).item(), g.value(lengths).data());
        }
        let mut grads = g.backward(loss)?;
        adam.step(&mut params, &[grads.take(w)])?;
    }
    Ok(())
}
