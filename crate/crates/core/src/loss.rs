//! Structural, texture and intensity losses for single-channel fusion output.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalised `SSIM_WINDOW × SSIM_WINDOW` Gaussian, row-major.
pub fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect()
}

fn check_pair(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() || a.shape()[1] != 1 {
        return Err(Error::shape(format!("{op} needs equal (B,1,H,W) images, got {:?} and {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean local SSIM with a reflect-padded Gaussian window and dynamic range 1.
///
/// The window is centred on every pixel; borders are filled by reflection, so
/// both extents must exceed the window radius.
pub fn ssim(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    check_pair("ssim", x, y)?;
    let [_, _, h, w] = x.shape();
    let pad = SSIM_WINDOW / 2;
    if h <= pad || w <= pad {
        return Err(Error::contract(format!(
            "ssim needs images larger than {pad}×{pad} for its {SSIM_WINDOW}×{SSIM_WINDOW} window, got {h}×{w}"
        )));
    }
    let kernel = Tensor::new([1, 1, SSIM_WINDOW, SSIM_WINDOW], gaussian_window())?;
    let blur = |t: &Tensor| -> Result<Tensor> { t.pad_reflect(pad)?.conv2d(&kernel, None, 1, 0) };
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let mx = blur(x)?;
    let my = blur(y)?;
    let mxx = mx.square()?;
    let myy = my.square()?;
    let mxy = mx.mul(&my)?;
    let sxx = blur(&x.square()?)?.sub(&mxx)?;
    let syy = blur(&y.square()?)?.sub(&myy)?;
    let sxy = blur(&x.mul(y)?)?.sub(&mxy)?;
    let num = mxy.mul_scalar(2.0)?.add_scalar(c1)?.mul(&sxy.mul_scalar(2.0)?.add_scalar(c2)?)?;
    let den = mxx.add(&myy)?.add_scalar(c1)?.mul(&sxx.add(&syy)?.add_scalar(c2)?)?;
    num.div(&den)?.mean_all()
}

/// Source weights and total-loss weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w1: f64,
    pub w2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w1: 0.5, w2: 0.5, lambda1: 1.0, lambda2: 10.0, lambda3: 10.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w1", self.w1),
            ("w2", self.w2),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, format!("weight must be a non-negative number, got {v}")));
            }
        }
        if self.lambda1 == 0.0 && self.lambda2 == 0.0 && self.lambda3 == 0.0 {
            return Err(Error::config("lambda1", "at least one loss weight must be positive"));
        }
        Ok(())
    }
}

/// Element-wise aggregation of the two source images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregate {
    #[default]
    Max,
    Mean,
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregate::Max => "max",
            Aggregate::Mean => "mean",
        })
    }
}

impl FromStr for Aggregate {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Aggregate::Max),
            "mean" => Ok(Aggregate::Mean),
            _ => Err(Error::config("aggregate", format!("unknown aggregation {s:?} (max, mean)"))),
        }
    }
}

/// How the two Sobel responses combine into a magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientNorm {
    /// `|gx| + |gy|`
    #[default]
    L1,
    /// `sqrt(gx² + gy² + 1e-12)`
    L2,
}

impl fmt::Display for GradientNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradientNorm::L1 => "l1",
            GradientNorm::L2 => "l2",
        })
    }
}

impl FromStr for GradientNorm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(GradientNorm::L1),
            "l2" => Ok(GradientNorm::L2),
            _ => Err(Error::config("gradient_norm", format!("unknown gradient norm {s:?} (l1, l2)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LossOptions {
    pub aggregate: Aggregate,
    pub gradient: GradientNorm,
}

pub fn loss_ssim(f: &Tensor, ir: &Tensor, vi: &Tensor, w1: f64, w2: f64) -> Result<Tensor> {
    let a = ssim(f, ir)?.one_minus()?.mul_scalar(w1)?;
    let b = ssim(f, vi)?.one_minus()?.mul_scalar(w2)?;
    a.add(&b)
}

/// Sobel gradient magnitude of `(B, 1, H, W)` images with reflect-padded borders.
pub fn sobel_magnitude(img: &Tensor, norm: GradientNorm) -> Result<Tensor> {
    let gx = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
    let gy = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
    let kernel = Tensor::new([2, 1, 3, 3], [gx, gy].concat())?;
    let g = img.pad_reflect(1)?.conv2d(&kernel, None, 1, 0)?;
    let ones = Tensor::full([1, 2, 1, 1], 1.0);
    match norm {
        GradientNorm::L1 => g.abs()?.linear(&ones, None),
        GradientNorm::L2 => g.square()?.linear(&ones, None)?.add_scalar(1e-12)?.sqrt(),
    }
}

fn aggregate(a: &Tensor, b: &Tensor, how: Aggregate) -> Result<Tensor> {
    match how {
        Aggregate::Max => a.maximum(b),
        Aggregate::Mean => a.add(b)?.mul_scalar(0.5),
    }
}

pub fn loss_text(f: &Tensor, ir: &Tensor, vi: &Tensor, opts: LossOptions) -> Result<Tensor> {
    check_pair("texture loss", f, ir)?;
    check_pair("texture loss", f, vi)?;
    let target = aggregate(&sobel_magnitude(ir, opts.gradient)?, &sobel_magnitude(vi, opts.gradient)?, opts.aggregate)?;
    sobel_magnitude(f, opts.gradient)?.sub(&target)?.abs()?.mean_all()
}

pub fn loss_int(f: &Tensor, ir: &Tensor, vi: &Tensor, opts: LossOptions) -> Result<Tensor> {
    check_pair("intensity loss", f, ir)?;
    check_pair("intensity loss", f, vi)?;
    f.sub(&aggregate(ir, vi, opts.aggregate)?)?.abs()?.mean_all()
}

/// The weighted total together with its three parts.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: Tensor,
    pub ssim: Tensor,
    pub text: Tensor,
    pub int: Tensor,
}

pub fn loss_total(f: &Tensor, ir: &Tensor, vi: &Tensor, w: &LossWeights, opts: LossOptions) -> Result<LossBreakdown> {
    w.validate()?;
    let ssim = loss_ssim(f, ir, vi, w.w1, w.w2)?;
    let text = loss_text(f, ir, vi, opts)?;
    let int = loss_int(f, ir, vi, opts)?;
    let total = ssim.mul_scalar(w.lambda1)?.add(&text.mul_scalar(w.lambda2)?)?.add(&int.mul_scalar(w.lambda3)?)?;
    Ok(LossBreakdown { total, ssim, text, int })
}
