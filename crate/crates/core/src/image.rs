//! 8-bit binary PGM (P5) / PPM (P6) images and BT.601 colour conversion.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major values in `[0, 1]`.
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major interleaved `r, g, b` values in `[0, 1]`.
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Image {
    Gray(GrayImage),
    Rgb(RgbImage),
}

impl Image {
    pub fn size(&self) -> (usize, usize) {
        match self {
            Image::Gray(g) => (g.width, g.height),
            Image::Rgb(c) => (c.width, c.height),
        }
    }

    /// Grey images as-is; colour images reduced to their luma.
    pub fn into_gray(self) -> GrayImage {
        match self {
            Image::Gray(g) => g,
            Image::Rgb(c) => c.luma(),
        }
    }

    /// Colour images as-is; grey images replicated into three channels.
    pub fn into_rgb(self) -> RgbImage {
        match self {
            Image::Rgb(c) => c,
            Image::Gray(g) => RgbImage::from_gray(&g),
        }
    }
}

fn check_len(width: usize, height: usize, len: usize, per_pixel: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Input(format!("empty {width}×{height} image")));
    }
    if len != width * height * per_pixel {
        return Err(Error::Input(format!("{len} values for a {width}×{height} image with {per_pixel} channel(s)")));
    }
    Ok(())
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_len(width, height, data.len(), 1)?;
        Ok(GrayImage { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..height).flat_map(|y| (0..width).map(move |x| (y, x))).map(|(y, x)| f(x, y)).collect();
        GrayImage { width, height, data }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// `(1, 1, H, W)` tensor.
    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new([1, 1, self.height, self.width], self.data.clone())
    }

    /// Plane `(batch, channel)` of a tensor.
    pub fn from_tensor(t: &Tensor, batch: usize, channel: usize) -> Result<Self> {
        let [b, c, h, w] = t.shape();
        if batch >= b || channel >= c {
            return Err(Error::shape(format!("plane ({batch}, {channel}) of a {:?} tensor", t.shape())));
        }
        let start = (batch * c + channel) * h * w;
        GrayImage::new(w, h, t.data()[start..start + h * w].to_vec())
    }

    /// Centred `width × height` window.
    pub fn center_crop(&self, width: usize, height: usize) -> Result<Self> {
        crop(&self.data, self.width, self.height, 1, width, height).map(|data| GrayImage { width, height, data })
    }

    /// Values on the 0–255 scale used by the quality metrics.
    pub fn levels(&self) -> Vec<f64> {
        self.data.iter().map(|v| v * 255.0).collect()
    }
}

fn crop(data: &[f64], w: usize, h: usize, ch: usize, cw: usize, chh: usize) -> Result<Vec<f64>> {
    if cw == 0 || chh == 0 || cw > w || chh > h {
        return Err(Error::Input(format!("cannot crop {w}×{h} to {cw}×{chh}")));
    }
    let (x0, y0) = ((w - cw) / 2, (h - chh) / 2);
    let mut out = Vec::with_capacity(cw * chh * ch);
    for y in y0..y0 + chh {
        out.extend_from_slice(&data[(y * w + x0) * ch..(y * w + x0 + cw) * ch]);
    }
    Ok(out)
}

/// BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Full-range BT.601 `(Y, Cb, Cr)` for `(R, G, B)` in `[0, 1]`; chroma is centred at 0.5.
pub fn rgb_to_ycbcr([r, g, b]: [f64; 3]) -> [f64; 3] {
    let y = LUMA[0] * r + LUMA[1] * g + LUMA[2] * b;
    [y, (b - y) / 1.772 + 0.5, (r - y) / 1.402 + 0.5]
}

/// Exact inverse of [`rgb_to_ycbcr`] (without clamping).
pub fn ycbcr_to_rgb([y, cb, cr]: [f64; 3]) -> [f64; 3] {
    let r = y + 1.402 * (cr - 0.5);
    let b = y + 1.772 * (cb - 0.5);
    let g = (y - LUMA[0] * r - LUMA[2] * b) / LUMA[1];
    [r, g, b]
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_len(width, height, data.len(), 3)?;
        Ok(RgbImage { width, height, data })
    }

    pub fn from_gray(g: &GrayImage) -> Self {
        RgbImage { width: g.width, height: g.height, data: g.data.iter().flat_map(|&v| [v, v, v]).collect() }
    }

    pub fn pixel(&self, i: usize) -> [f64; 3] {
        [self.data[3 * i], self.data[3 * i + 1], self.data[3 * i + 2]]
    }

    pub fn luma(&self) -> GrayImage {
        let data = (0..self.width * self.height).map(|i| rgb_to_ycbcr(self.pixel(i))[0]).collect();
        GrayImage { width: self.width, height: self.height, data }
    }

    /// `(Y, Cb, Cr)` planes.
    pub fn to_ycbcr(&self) -> [GrayImage; 3] {
        let n = self.width * self.height;
        let mut planes = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for i in 0..n {
            let p = rgb_to_ycbcr(self.pixel(i));
            for c in 0..3 {
                planes[c][i] = p[c];
            }
        }
        planes.map(|data| GrayImage { width: self.width, height: self.height, data })
    }

    /// Recombines planes and clamps the result to `[0, 1]`.
    pub fn from_ycbcr(y: &GrayImage, cb: &GrayImage, cr: &GrayImage) -> Result<Self> {
        if (y.width, y.height) != (cb.width, cb.height) || (y.width, y.height) != (cr.width, cr.height) {
            return Err(Error::Input("luma and chroma planes differ in size".into()));
        }
        let data = (0..y.data.len())
            .flat_map(|i| ycbcr_to_rgb([y.data[i], cb.data[i], cr.data[i]]).map(|v| v.clamp(0.0, 1.0)))
            .collect();
        Ok(RgbImage { width: y.width, height: y.height, data })
    }

    /// `(1, 3, H, W)` tensor.
    pub fn to_tensor(&self) -> Result<Tensor> {
        let (w, h) = (self.width, self.height);
        Tensor::new([1, 3, h, w], (0..3).flat_map(|c| (0..w * h).map(move |i| (c, i))).map(|(c, i)| self.data[3 * i + c]).collect())
    }

    pub fn center_crop(&self, width: usize, height: usize) -> Result<Self> {
        crop(&self.data, self.width, self.height, 3, width, height).map(|data| RgbImage { width, height, data })
    }
}

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format { offset, msg: msg.into() }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    /// Next decimal token and the offset where it starts.
    fn number(&mut self, what: &str) -> Result<(usize, usize)> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format_err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map(|v| (v, start))
            .map_err(|_| format_err(start, format!("{what} out of range")))
    }
}

/// Decodes a binary P5 or P6 image with maxval 255.
pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(format_err(0, "expected magic P5 or P6")),
    };
    let mut h = Header { bytes, pos: 2 };
    let (width, width_at) = h.number("width")?;
    let (height, _) = h.number("height")?;
    let (maxval, maxval_at) = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(format_err(width_at, format!("empty {width}×{height} image")));
    }
    if maxval != 255 {
        return Err(format_err(maxval_at, format!("maxval {maxval} is not 255 (only 8-bit images are supported)")));
    }
    match bytes.get(h.pos) {
        Some(c) if c.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(format_err(h.pos, "expected a single whitespace byte before the pixel data")),
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| format_err(0, "image dimensions overflow"))?;
    let payload = &bytes[h.pos..];
    if payload.len() < need {
        return Err(format_err(bytes.len(), format!("truncated pixel data: {} of {need} bytes", payload.len())));
    }
    if payload.len() > need {
        return Err(format_err(h.pos + need, format!("{} trailing bytes after the pixel data", payload.len() - need)));
    }
    let data: Vec<f64> = payload.iter().map(|&b| b as f64 / 255.0).collect();
    Ok(if channels == 1 {
        Image::Gray(GrayImage { width, height, data })
    } else {
        Image::Rgb(RgbImage { width, height, data })
    })
}

/// Round-half-up to 8 bits after clamping to `[0, 1]`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let (magic, w, h, data) = match img {
        Image::Gray(g) => ("P5", g.width, g.height, &g.data),
        Image::Rgb(c) => ("P6", c.width, c.height, &c.data),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend(data.iter().map(|&v| quantize(v)));
    out
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes).map_err(|e| Error::in_file(path, e))
}

pub fn write_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bad = match img {
        Image::Gray(g) => g.data.iter().find(|v| !(0.0..=1.0).contains(*v)),
        Image::Rgb(c) => c.data.iter().find(|v| !(0.0..=1.0).contains(*v)),
    };
    if let Some(v) = bad {
        return Err(Error::in_file(path, Error::Input(format!("pixel value {v} outside [0, 1]"))));
    }
    fs::write(path, encode_pnm(img)).map_err(|e| Error::io(path, e))
}
