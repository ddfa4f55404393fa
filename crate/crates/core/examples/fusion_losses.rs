//! The three fusion losses on hand-made images.

use diffmf::loss::{loss_total, ssim, LossOptions, LossWeights};
use diffmf::Tensor;

fn main() -> diffmf::Result<()> {
    let ir = Tensor::from_fn([1, 1, 16, 16], |[_, _, y, x]| if (4..10).contains(&x) && (5..12).contains(&y) { 0.9 } else { 0.1 });
    let vi = Tensor::from_fn([1, 1, 16, 16], |[_, _, y, x]| 0.3 + 0.2 * ((x + y) % 4) as f64 / 3.0);
    let (w, opts) = (LossWeights::default(), LossOptions::default());
    for (name, f) in [("ir", ir.clone()), ("vi", vi.clone()), ("max", ir.maximum(&vi)?), ("mean", ir.add(&vi)?.mul_scalar(0.5)?)] {
        let l = loss_total(&f, &ir, &vi, &w, opts)?;
        println!(
            "fused = {name:<4}  total {:.4}  ssim {:.4}  text {:.4}  int {:.4}",
            l.total.item()?,
            l.ssim.item()?,
            l.text.item()?,
            l.int.item()?
        );
    }
    println!("ssim(ir, ir) = {:.6}", ssim(&ir, &ir)?.item()?);
    Ok(())
}
