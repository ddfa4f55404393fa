//! Aligned infrared/visible image pairs.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{read_image, GrayImage, RgbImage};

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub name: String,
    pub ir: GrayImage,
    pub vi: RgbImage,
}

impl Pair {
    /// Pairs with differing sizes are centre-cropped to their common extent.
    pub fn new(name: impl Into<String>, ir: GrayImage, vi: RgbImage) -> Result<Self> {
        let name = name.into();
        if (ir.width, ir.height) == (vi.width, vi.height) {
            return Ok(Pair { name, ir, vi });
        }
        let (w, h) = (ir.width.min(vi.width), ir.height.min(vi.height));
        log::warn!(
            "pair {name}: infrared {}×{} and visible {}×{} differ; centre-cropping both to {w}×{h}",
            ir.width,
            ir.height,
            vi.width,
            vi.height
        );
        Ok(Pair { ir: ir.center_crop(w, h)?, vi: vi.center_crop(w, h)?, name })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.ir.width, self.ir.height)
    }
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm")))
        .collect();
    files.sort();
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Matches files in `ir_dir` and `vi_dir` by file stem. Visible images may be
/// grey (replicated to three channels); infrared colour images are reduced to luma.
pub fn load_pairs(ir_dir: &Path, vi_dir: &Path) -> Result<Vec<Pair>> {
    let vi_files = image_files(vi_dir)?;
    let mut pairs = Vec::new();
    for ir_path in image_files(ir_dir)? {
        let name = stem(&ir_path);
        let Some(vi_path) = vi_files.iter().find(|p| stem(p) == name) else {
            log::warn!("no visible image for {}; skipped", ir_path.display());
            continue;
        };
        let ir = read_image(&ir_path)?.into_gray();
        let vi = read_image(vi_path)?.into_rgb();
        pairs.push(Pair::new(name, ir, vi)?);
    }
    if pairs.is_empty() {
        return Err(Error::Input(format!(
            "no matching image pairs in {} and {}",
            ir_dir.display(),
            vi_dir.display()
        )));
    }
    Ok(pairs)
}

/// Pairs from `<dir>/ir` and `<dir>/vi`.
pub fn load_dataset(dir: &Path) -> Result<Vec<Pair>> {
    load_pairs(&dir.join("ir"), &dir.join("vi"))
}

/// A deterministic synthetic scene: warm targets that are bright in the
/// infrared image and dim in the visible one, over a textured, coloured
/// background that only the visible image shows in detail.
pub fn synthetic_pair(size: usize, seed: u64) -> Pair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let blobs: Vec<(f64, f64, f64)> =
        (0..3).map(|_| (rng.gen_range(0.2..0.8) * s, rng.gen_range(0.2..0.8) * s, rng.gen_range(0.06..0.14) * s)).collect();
    let freq = rng.gen_range(0.5..1.2);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let tint = [rng.gen_range(0.7..1.0), rng.gen_range(0.6..0.9), rng.gen_range(0.4..0.8)];
    let heat = move |x: usize, y: usize| -> f64 {
        blobs
            .iter()
            .map(|&(cx, cy, r)| (-((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)) / (2.0 * r * r)).exp())
            .fold(0.0, f64::max)
    };
    let ir = GrayImage::from_fn(size, size, |x, y| (0.1 + 0.85 * heat(x, y)).clamp(0.0, 1.0));
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let texture = 0.5 + 0.25 * ((x as f64 * freq + phase).sin() * (y as f64 * freq * 0.7).cos());
            let shade = 0.3 + 0.4 * (y as f64 / s);
            let v = (texture * shade + 0.2) * (1.0 - 0.6 * heat(x, y));
            data.extend(tint.map(|t| (v * t).clamp(0.0, 1.0)));
        }
    }
    let vi = RgbImage { width: size, height: size, data };
    Pair { name: format!("synthetic{seed}"), ir, vi }
}
