//! Fuses the bundled sample pair with an untrained model and writes `fused.ppm`
//! to the directory given as the first argument (default: the system temp dir).

use std::path::{Path, PathBuf};

use diffmf::image::{read_image, write_image, Image};
use diffmf::pipeline::{build_model, ModelConfig};

fn main() -> diffmf::Result<()> {
    let sample = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/sample");
    let out_dir: PathBuf = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let ir = read_image(sample.join("ir/pair0.pgm"))?.into_gray();
    let vi = read_image(sample.join("vi/pair0.ppm"))?.into_rgb();
    let model = build_model(&ModelConfig { channels: 8, state: 8, ..ModelConfig::default() })?;
    let fused = model.fuse(&ir, &vi)?;
    let out = out_dir.join("fused.ppm");
    write_image(&Image::Rgb(fused), &out)?;
    println!("fused {}×{} pair written to {}", ir.width, ir.height, out.display());
    Ok(())
}
