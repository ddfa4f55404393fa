//! Fusion quality metrics: EN, SD, SF, MI and AG.
//!
//! All metrics read a [`Plane`] on the 0–255 intensity scale. Histogram
//! metrics (EN, MI) quantize each value to the nearest of 256 levels, clamped
//! to `[0, 255]`; SD, SF and AG use the real values.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::Input(format!("{} values for a {width}×{height} plane", values.len())));
        }
        Ok(Plane { width, height, values })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let values = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Plane { width, height, values }
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Quantized level of every pixel.
    pub fn levels(&self) -> Vec<u8> {
        self.values.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
    }
}

impl From<&GrayImage> for Plane {
    fn from(img: &GrayImage) -> Self {
        Plane { width: img.width, height: img.height, values: img.levels() }
    }
}

fn shannon(counts: impl Iterator<Item = u64>, total: f64) -> f64 {
    counts.filter(|&c| c > 0).map(|c| c as f64 / total).map(|p| -p * p.log2()).sum::<f64>().max(0.0)
}

fn histogram(levels: &[u8]) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &l in levels {
        h[l as usize] += 1;
    }
    h
}

/// Shannon entropy of the 256-bin grey histogram, in bits.
pub fn entropy(img: &Plane) -> f64 {
    shannon(histogram(&img.levels()).into_iter(), img.values.len() as f64)
}

/// Population standard deviation.
pub fn std_dev(img: &Plane) -> f64 {
    let n = img.values.len() as f64;
    let mean = img.values.iter().sum::<f64>() / n;
    (img.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn require_2x2(img: &Plane, what: &str) -> Result<()> {
    if img.width < 2 || img.height < 2 {
        return Err(Error::Input(format!("{what} needs an image of at least 2×2, got {}×{}", img.width, img.height)));
    }
    Ok(())
}

/// `sqrt(RF² + CF²)`, with RF and CF the RMS of horizontal and vertical first differences.
pub fn spatial_frequency(img: &Plane) -> Result<f64> {
    require_2x2(img, "spatial frequency")?;
    let (w, h) = (img.width, img.height);
    let mut rf = 0.0;
    for y in 0..h {
        for x in 1..w {
            rf += (img.at(x, y) - img.at(x - 1, y)).powi(2);
        }
    }
    let mut cf = 0.0;
    for y in 1..h {
        for x in 0..w {
            cf += (img.at(x, y) - img.at(x, y - 1)).powi(2);
        }
    }
    Ok((rf / (h * (w - 1)) as f64 + cf / ((h - 1) * w) as f64).sqrt())
}

/// Mutual information `I(X; Y)` from the 256×256 joint histogram.
pub fn mutual_information_pair(x: &Plane, y: &Plane) -> Result<f64> {
    if (x.width, x.height) != (y.width, y.height) {
        return Err(Error::Input(format!(
            "mutual information of {}×{} and {}×{} images",
            x.width, x.height, y.width, y.height
        )));
    }
    let (lx, ly) = (x.levels(), y.levels());
    let mut joint = vec![0u64; 256 * 256];
    for (&a, &b) in lx.iter().zip(&ly) {
        joint[a as usize * 256 + b as usize] += 1;
    }
    let n = lx.len() as f64;
    let hx = shannon(histogram(&lx).into_iter(), n);
    let hy = shannon(histogram(&ly).into_iter(), n);
    let hxy = shannon(joint.into_iter(), n);
    Ok((hx + hy - hxy).max(0.0))
}

/// `I(F; A) + I(F; B)`.
pub fn mutual_information(fused: &Plane, src_a: &Plane, src_b: &Plane) -> Result<f64> {
    Ok(mutual_information_pair(fused, src_a)? + mutual_information_pair(fused, src_b)?)
}

/// Mean over the `(H−1)(W−1)` interior positions of `sqrt((dx² + dy²) / 2)` with forward differences.
pub fn avg_gradient(img: &Plane) -> Result<f64> {
    require_2x2(img, "average gradient")?;
    let (w, h) = (img.width, img.height);
    let mut sum = 0.0;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let dx = img.at(x + 1, y) - img.at(x, y);
            let dy = img.at(x, y + 1) - img.at(x, y);
            sum += ((dx * dx + dy * dy) / 2.0).sqrt();
        }
    }
    Ok(sum / ((h - 1) * (w - 1)) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub name: String,
    pub en: f64,
    pub sd: f64,
    pub sf: f64,
    pub mi: f64,
    pub ag: f64,
}

impl MetricsRow {
    pub fn evaluate(name: impl Into<String>, fused: &Plane, ir: &Plane, vi: &Plane) -> Result<Self> {
        Ok(MetricsRow {
            name: name.into(),
            en: entropy(fused),
            sd: std_dev(fused),
            sf: spatial_frequency(fused)?,
            mi: mutual_information(fused, ir, vi)?,
            ag: avg_gradient(fused)?,
        })
    }
}

/// Tab-delimited table with a `#` comment header. VIF is reported as `NA`.
pub fn format_table(rows: &[MetricsRow]) -> String {
    let mut out = String::from(
        "# intensities on the 0-255 scale; MI_sum = MI(fused;ir) + MI(fused;vi) in bits; VIF not computed\n",
    );
    out.push_str("image\tEN\tSD\tSF\tMI_sum\tAG\tVIF\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\tNA", r.name, r.en, r.sd, r.sf, r.mi, r.ag);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant(v: f64) -> Plane {
        Plane::from_fn(8, 6, |_, _| v)
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&constant(37.0)), 0.0);
        let uniform = Plane::from_fn(16, 16, |x, y| (y * 16 + x) as f64);
        assert!((entropy(&uniform) - 8.0).abs() < 1e-12);
        let two = Plane::from_fn(4, 4, |x, _| if x < 2 { 10.0 } else { 200.0 });
        assert!((entropy(&two) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quantization_rounds_and_clamps() {
        let p = Plane::new(4, 1, vec![-3.0, 0.49, 254.5, 300.0]).unwrap();
        assert_eq!(p.levels(), [0, 0, 255, 255]);
    }

    #[test]
    fn std_dev_examples() {
        assert_eq!(std_dev(&constant(9.0)), 0.0);
        let half = Plane::from_fn(4, 4, |x, _| if x < 2 { 0.0 } else { 255.0 });
        assert!((std_dev(&half) - 127.5).abs() < 1e-12);
    }

    #[test]
    fn spatial_frequency_examples() {
        assert_eq!(spatial_frequency(&constant(3.0)).unwrap(), 0.0);
        let checker = Plane::from_fn(7, 5, |x, y| ((x + y) % 2) as f64);
        assert!((spatial_frequency(&checker).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        let ramp = Plane::from_fn(6, 4, |x, _| x as f64);
        assert!((spatial_frequency(&ramp).unwrap() - 1.0).abs() < 1e-12);
        assert!(spatial_frequency(&Plane::from_fn(1, 5, |_, _| 0.0)).is_err());
        assert!(avg_gradient(&Plane::from_fn(5, 1, |_, _| 0.0)).is_err());
    }

    #[test]
    fn mutual_information_examples() {
        let x = Plane::from_fn(32, 32, |x, y| ((x * 7 + y * 13) % 256) as f64);
        let mi = mutual_information(&x, &x, &x).unwrap();
        assert!((mi - 2.0 * entropy(&x)).abs() < 1e-9);

        // Sources vary only within 8×8 blocks by column, the fused image only
        // by row: every (fused, source) level pair occurs equally often.
        let src = Plane::from_fn(64, 64, |x, _| (x % 8 * 30) as f64);
        let fused = Plane::from_fn(64, 64, |_, y| (y % 8 * 30) as f64);
        let mi = mutual_information(&fused, &src, &src).unwrap();
        assert!(mi.abs() < 0.05, "{mi}");

        let other = Plane::new(3, 1, vec![0.0; 3]).unwrap();
        assert!(mutual_information_pair(&x, &other).is_err());
    }

    #[test]
    fn avg_gradient_examples() {
        assert_eq!(avg_gradient(&constant(1.0)).unwrap(), 0.0);
        let ramp = Plane::from_fn(6, 5, |x, _| x as f64);
        assert!((avg_gradient(&ramp).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn table_marks_vif_unavailable() {
        let p = Plane::from_fn(4, 4, |x, y| (x * y) as f64);
        let row = MetricsRow::evaluate("a", &p, &p, &p).unwrap();
        let t = format_table(&[row]);
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[0].starts_with('#') && lines[0].contains("MI_sum"));
        assert_eq!(lines[1].split('\t').count(), 7);
        assert!(lines[2].starts_with("a\t") && lines[2].ends_with("\tNA"));
    }

    fn plane_strategy() -> impl Strategy<Value = Plane> {
        (2usize..9, 2usize..9).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0.0f64..255.0, w * h).prop_map(move |v| Plane::new(w, h, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn non_negative_and_homogeneous(p in plane_strategy(), k in 0.1f64..3.0) {
            prop_assert!(entropy(&p) >= 0.0);
            prop_assert!(std_dev(&p) >= 0.0);
            prop_assert!(spatial_frequency(&p).unwrap() >= 0.0);
            prop_assert!(avg_gradient(&p).unwrap() >= 0.0);
            let scaled = Plane::new(p.width, p.height, p.values.iter().map(|v| v * k).collect()).unwrap();
            let tol = |a: f64| 1e-9 * a.abs().max(1.0);
            prop_assert!((std_dev(&scaled) - k * std_dev(&p)).abs() <= tol(std_dev(&scaled)));
            let (ag, ags) = (avg_gradient(&p).unwrap(), avg_gradient(&scaled).unwrap());
            prop_assert!((ags - k * ag).abs() <= tol(ags));
            let (sf, sfs) = (spatial_frequency(&p).unwrap(), spatial_frequency(&scaled).unwrap());
            prop_assert!((sfs - k * sf).abs() <= tol(sfs));
        }

        #[test]
        fn mi_is_symmetric(a in plane_strategy()) {
            let b = Plane::new(a.width, a.height, a.values.iter().rev().copied().collect()).unwrap();
            let ab = mutual_information_pair(&a, &b).unwrap();
            let ba = mutual_information_pair(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab <= entropy(&a) + 1e-12);
        }
    }
}
