//! Cross-modal exchange of the B/C projections followed by gated channel reweighting.

use diffmf::exchange::{channel_reweight, ChannelExchange, CoeffMode, ExchangeFlags, ExchangeVariant};
use diffmf::nn::Init;
use diffmf::{Ctx, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> diffmf::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f_vi = Tensor::from_fn([1, 4, 6, 6], |_| rng.gen_range(-1.0..1.0));
    let f_ir = Tensor::from_fn([1, 4, 6, 6], |_| rng.gen_range(-1.0..1.0));
    for variant in [ExchangeVariant::Mutual, ExchangeVariant::V1, ExchangeVariant::V2, ExchangeVariant::None] {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let flags = ExchangeFlags { variant, ..ExchangeFlags::default() };
        let ex = ChannelExchange::new(&mut Init::new(&mut store, &mut rng), 4, 8, true, CoeffMode::Pooled, flags)?;
        let (vi, ir) = ex.forward(&Ctx::no_grad(&store), &f_vi, &f_ir)?;
        println!("{variant:<7} mean vi_c = {:+.5}, mean ir_c = {:+.5}", vi.mean_all()?.item()?, ir.mean_all()?.item()?);
    }
    // Reweighting conserves the per-pixel sum of the two streams.
    let omega = Tensor::full([1, 4, 1, 1], 0.3);
    let (a, b) = channel_reweight(&f_ir, &f_vi, &omega)?;
    let drift = a.add(&b)?.sub(&f_ir.add(&f_vi)?)?.abs()?.sum_all()?.item()?;
    println!("conservation drift: {drift:e}");
    Ok(())
}
