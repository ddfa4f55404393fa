//! Ten training steps of every ablation variant on a synthetic pair.

use diffmf::pipeline::{format_runs, run_ablation, synthetic_pair, Ablation, ModelConfig};

fn main() -> diffmf::Result<()> {
    let cfg = ModelConfig { crop: 16, batch: 1, lr: 1e-3, ..ModelConfig::tiny() };
    let data = [synthetic_pair(16, 1)];
    let runs = Ablation::ALL
        .into_iter()
        .map(|a| run_ablation(&cfg, a, &data, &data[0], 10))
        .collect::<diffmf::Result<Vec<_>>>()?;
    print!("{}", format_runs(&runs));
    Ok(())
}
