//! Zero-order-hold discretisation and the selective scan on a toy sequence.
//!
//! An impulse fed through one state with `A = −ln 2` and `Δ = 1` decays by a
//! factor `Ā = 0.5` per step.

use diffmf::ssm::{selective_scan, zoh};
use diffmf::Tensor;

fn main() -> diffmf::Result<()> {
    for (a, delta) in [(-1.0, std::f64::consts::LN_2), (-2.0, 1.0), (-1e-9, 1.0)] {
        let (a_bar, phi) = zoh(a, delta);
        println!("A = {a:<8} Δ = {delta:.4}  →  Ā = {a_bar:.4}, B̄/B = {phi:.4}");
    }

    let len = 6;
    let x = Tensor::new([1, 1, 1, len], (0..len).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect())?;
    let delta = Tensor::full([1, 1, 1, len], 1.0);
    let a = Tensor::full([1, 1, 1, 1], -std::f64::consts::LN_2);
    let b = Tensor::full([1, 1, 1, len], 1.0 / 0.5);
    let c = Tensor::full([1, 1, 1, len], 1.0);
    let d = Tensor::zeros([1, 1, 1, 1]);
    let y = selective_scan(&x, &delta, &a, &b, &c, &d)?;
    println!("impulse response: {:?}", y.data().iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>());
    Ok(())
}
