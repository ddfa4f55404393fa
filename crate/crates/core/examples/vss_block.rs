//! A visual state space block on a random feature map, with its gradient.

use diffmf::nn::Init;
use diffmf::ssm::VssBlock;
use diffmf::{Ctx, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> diffmf::Result<()> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let block = VssBlock::new(&mut Init::new(&mut store, &mut rng), "vss", 8, 2, 16)?;
    let x = Tensor::from_fn([1, 8, 16, 16], |_| rng.gen_range(-1.0..1.0));

    let loss = {
        let ctx = Ctx::new(&store);
        block.forward(&ctx, &x)?.square()?.mean_all()?
    };
    loss.backward(&mut store)?;
    println!("{} parameter tensors, {} scalars", store.len(), store.num_scalars());
    println!("mean squared output: {:.6}", loss.item()?);
    let norm: f64 = store.iter().flat_map(|p| &p.grad).map(|g| g * g).sum::<f64>().sqrt();
    println!("gradient norm: {norm:.6}");
    Ok(())
}
