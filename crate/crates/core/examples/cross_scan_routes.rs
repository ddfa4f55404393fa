//! The four scan routes over a 2×3 map, and the merge that undoes them.

use diffmf::ssm::{cross_merge, cross_scan};
use diffmf::Tensor;

fn main() -> diffmf::Result<()> {
    let map = Tensor::from_fn([1, 1, 2, 3], |[_, _, y, x]| (y * 3 + x) as f64);
    let routes = cross_scan(&map)?;
    for seq in &routes {
        println!("{:<13} {:?}", seq.route.name(), seq.tokens.data());
    }
    let merged = cross_merge(&routes)?;
    println!("merged (4 × input): {:?}", merged.data());
    Ok(())
}
