//! Saves a checkpoint mid-training, resumes from it, and compares with an uninterrupted run.

use diffmf::pipeline::{build_model, load_checkpoint, save_checkpoint, synthetic_pair, ModelConfig, Trainer};

fn main() -> diffmf::Result<()> {
    let cfg = ModelConfig { crop: 16, batch: 1, lr: 1e-3, ..ModelConfig::tiny() };
    let data = [synthetic_pair(16, 1), synthetic_pair(16, 2)];

    let mut whole = Trainer::new(build_model(&cfg)?);
    whole.train(&data, 8, |_, _| Ok(()))?;

    let mut first = Trainer::new(build_model(&cfg)?);
    first.train(&data, 4, |_, _| Ok(()))?;
    let path = std::env::temp_dir().join("diffmf_example.ckpt");
    save_checkpoint(&first.model, Some(&first.adam), &path)?;
    let bytes = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    println!("checkpoint after step {}: {} ({bytes} bytes)", first.adam.t, path.display());

    let (model, adam) = load_checkpoint(&path)?;
    let mut resumed = Trainer::resume(model, adam.expect("saved with optimizer state"));
    resumed.train(&data, 8, |_, _| Ok(()))?;
    std::fs::remove_file(&path).ok();

    for (a, b) in resumed.history.iter().zip(&whole.history[4..]) {
        println!("step {}: resumed {:.12}  uninterrupted {:.12}", a.step, a.total, b.total);
    }
    let same = resumed.model.store.iter().zip(whole.model.store.iter()).all(|(p, q)| p.value == q.value);
    println!("final parameters identical: {same}");
    Ok(())
}
