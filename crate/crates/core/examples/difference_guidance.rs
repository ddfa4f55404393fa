//! The difference mask and the three guidance orders on scalar features.

use diffmf::extract::{diff_mask, reweight, GuidanceMode};
use diffmf::Tensor;

fn scalar(v: f64) -> Tensor {
    Tensor::full([1, 1, 1, 1], v)
}

fn main() -> diffmf::Result<()> {
    // vi = 0, ir = 1 under a mask of 0.5
    let mask = diffmf::extract::DiffMask { mask: scalar(0.5) };
    for mode in [GuidanceMode::Default, GuidanceMode::V1, GuidanceMode::V2, GuidanceMode::None] {
        let (vi, ir) = reweight(&scalar(0.0), &scalar(1.0), &mask, mode)?;
        println!("{mode:<8} vi' = {:.3}, ir' = {:.3}", vi.item()?, ir.item()?);
    }
    let m = diff_mask(&Tensor::new([1, 1, 1, 3], vec![0.2, 0.5, 0.9])?, &Tensor::new([1, 1, 1, 3], vec![0.2, 0.1, -0.9])?)?;
    println!("tanh|vi − ir| = {:?}", m.mask.data());
    Ok(())
}
