//! Channel realignment modes and the multi-scale spatial exchange.

use diffmf::nn::Init;
use diffmf::spatial::{realign, scale_count, ConcatAxis, RealignMode, SpatialExchange};
use diffmf::{Ctx, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> diffmf::Result<()> {
    let ir = Tensor::from_fn([1, 2, 1, 1], |[_, c, _, _]| 10.0 + c as f64);
    let vi = Tensor::from_fn([1, 2, 1, 1], |[_, c, _, _]| 20.0 + c as f64);
    for mode in RealignMode::ALL {
        let r = realign(&ir, &vi, mode, ConcatAxis::Width)?;
        println!("{mode:?}: shape {:?}, values {:?}", r.shape(), r.data());
    }

    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sx = SpatialExchange::new(&mut Init::new(&mut store, &mut rng), 2, 2, 4, 3, ConcatAxis::Width, true)?;
    let f_ir = Tensor::from_fn([1, 2, 8, 8], |[_, c, y, x]| ((x + y + c) % 3) as f64 / 3.0);
    let f_vi = Tensor::from_fn([1, 2, 8, 8], |[_, c, y, x]| ((x * y + c) % 5) as f64 / 5.0);
    let m = sx.forward(&Ctx::no_grad(&store), &f_ir, &f_vi)?;
    println!("scales used at 8×8: {}; fused shape {:?}", scale_count(8, 8, 3), m.shape());
    Ok(())
}
