//! Overfits a small model to one synthetic 32×32 pair and prints the loss curve.
//!
//! `cargo run --release --example train_overfit [steps]`

use diffmf::pipeline::{build_model, synthetic_pair, ModelConfig, Trainer};

fn main() -> diffmf::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    let cfg = ModelConfig { channels: 8, lr: 1e-3, batch: 1, crop: 32, ..ModelConfig::tiny() };
    let data = [synthetic_pair(32, cfg.seed)];
    let mut trainer = Trainer::new(build_model(&cfg)?);
    println!("{} parameters", trainer.model.num_parameters());
    trainer.train(&data, steps, |_, r| {
        if r.step % 50 == 0 {
            println!("step {:>4}  total {:.5}  ssim {:.4}  text {:.4}  int {:.4}", r.step, r.total, r.ssim, r.text, r.int);
        }
        Ok(())
    })?;
    let (first, last) = (trainer.history[0].total, trainer.history.last().expect("at least one step").total);
    println!("initial {first:.5} → final {last:.5} ({:.1}%)", 100.0 * last / first);
    Ok(())
}
