//! End-to-end fusion network and colour reinjection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::exchange::{ChannelExchange, ExchangeFlags};
use crate::extract::Extractor;
use crate::image::{GrayImage, RgbImage, LUMA};
use crate::nn::Init;
use crate::spatial::{Decoder, SpatialExchange};
use crate::tensor::{Ctx, ParamStore, Tensor};

/// Architecture: modules holding parameter ids into a separate [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Network {
    pub extractor: Extractor,
    /// Absent in the "without channel exchange" ablation.
    pub exchange: Option<ChannelExchange>,
    pub spatial: SpatialExchange,
    pub decoder: Decoder,
}

/// Luma of a `(B, 3, H, W)` colour tensor, as `(B, 1, H, W)`.
pub fn luma_tensor(rgb: &Tensor) -> Result<Tensor> {
    if rgb.shape()[1] != 3 {
        return Err(Error::shape(format!("luma of a {:?} tensor needs 3 channels", rgb.shape())));
    }
    rgb.linear(&Tensor::new([1, 3, 1, 1], LUMA.to_vec())?, None)
}

fn check_pixels(name: &str, t: &Tensor) -> Result<()> {
    match t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::Input(format!("{name} pixel {v} outside [0, 1]"))),
        None => Ok(()),
    }
}

impl Network {
    /// Fused luma `(B, 1, H, W)` from infrared `(B, 1, H, W)` and visible colour `(B, 3, H, W)`.
    pub fn forward(&self, ctx: &Ctx, ir: &Tensor, vi_rgb: &Tensor) -> Result<Tensor> {
        let ([b, c1, h, w], [b2, c3, h2, w2]) = (ir.shape(), vi_rgb.shape());
        if c1 != 1 || c3 != 3 || (b, h, w) != (b2, h2, w2) {
            return Err(Error::shape(format!("fusion inputs {:?} (infrared) and {:?} (visible)", ir.shape(), vi_rgb.shape())));
        }
        check_pixels("infrared", ir)?;
        check_pixels("visible", vi_rgb)?;
        let e = self.extractor.forward(ctx, ir, vi_rgb)?;
        let (vi, ir_f) = match &self.exchange {
            Some(x) => x.forward(ctx, &e.vi, &e.ir)?,
            None => (e.vi, e.ir),
        };
        let m = self.spatial.forward(ctx, &ir_f, &vi)?;
        self.decoder.forward(ctx, &m)
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub net: Network,
    pub store: ParamStore,
}

/// Deterministic initialisation from `config.seed`.
pub fn build_model(config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut init = Init::new(&mut store, &mut rng);
    let c = config.channels;
    let extractor = Extractor::new(
        &mut init,
        c,
        config.expand,
        config.state,
        config.stages,
        config.guidance,
        config.feature_extract,
    )?;
    let exchange = if config.channel_exchange {
        let flags = ExchangeFlags {
            enabled: true,
            variant: config.exchange_variant,
            residual: config.residual,
            reweight: config.channel_reweight,
        };
        Some(ChannelExchange::new(&mut init, c, config.state, config.shared_projections, config.coeff_mode, flags)?)
    } else {
        None
    };
    let spatial =
        SpatialExchange::new(&mut init, c, config.expand, config.state, config.scales, config.concat_axis, config.spatial_exchange)?;
    let decoder = Decoder::new(&mut init, c)?;
    Ok(Model { config: config.clone(), net: Network { extractor, exchange, spatial, decoder }, store })
}

impl Model {
    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Inference-mode forward pass.
    pub fn predict(&self, ir: &Tensor, vi_rgb: &Tensor) -> Result<Tensor> {
        self.net.forward(&Ctx::no_grad(&self.store), ir, vi_rgb)
    }

    /// Fuses one image pair: the network produces the fused luma, which is
    /// recombined with the visible image's chroma and converted back to RGB.
    pub fn fuse(&self, ir: &GrayImage, vi: &RgbImage) -> Result<RgbImage> {
        if (ir.width, ir.height) != (vi.width, vi.height) {
            return Err(Error::Input(format!(
                "infrared is {}×{} but visible is {}×{}",
                ir.width, ir.height, vi.width, vi.height
            )));
        }
        let y = self.predict(&ir.to_tensor()?, &vi.to_tensor()?)?;
        let fused_y = GrayImage::from_tensor(&y, 0, 0)?;
        let [_, cb, cr] = vi.to_ycbcr();
        RgbImage::from_ycbcr(&fused_y, &cb, &cr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(h: usize, w: usize) -> (Tensor, Tensor) {
        let ir = Tensor::from_fn([1, 1, h, w], |[_, _, y, x]| ((x * 3 + y * 5) % 7) as f64 / 7.0);
        let vi = Tensor::from_fn([1, 3, h, w], |[_, c, y, x]| ((x + y * 2 + c) % 5) as f64 / 5.0);
        (ir, vi)
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let cfg = ModelConfig::tiny();
        let (a, b) = (build_model(&cfg).unwrap(), build_model(&cfg).unwrap());
        assert!(a.store.iter().zip(b.store.iter()).all(|(p, q)| p.name == q.name && p.value == q.value));
        let other = build_model(&ModelConfig { seed: cfg.seed + 1, ..cfg }).unwrap();
        assert!(a.store.iter().zip(other.store.iter()).any(|(p, q)| p.value != q.value));
    }

    #[test]
    fn parameter_count_depends_on_architecture_only() {
        let cfg = ModelConfig::tiny();
        let n = build_model(&cfg).unwrap().num_parameters();
        let reseeded = ModelConfig { seed: 99, lr: 0.5, ..cfg.clone() };
        assert_eq!(build_model(&reseeded).unwrap().num_parameters(), n);
        let without = ModelConfig { channel_exchange: false, ..cfg.clone() };
        assert!(build_model(&without).unwrap().num_parameters() < n);
        let wider = ModelConfig { state: 8, ..cfg };
        assert!(build_model(&wider).unwrap().num_parameters() > n);
    }

    #[test]
    fn output_is_a_unit_range_image() {
        let model = build_model(&ModelConfig::tiny()).unwrap();
        let (ir, vi) = inputs(8, 10);
        let y = model.predict(&ir, &vi).unwrap();
        assert_eq!(y.shape(), [1, 1, 8, 10]);
        assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = build_model(&ModelConfig::tiny()).unwrap();
        let (ir, vi) = inputs(8, 8);
        assert!(matches!(model.predict(&vi, &ir), Err(Error::Shape(_))));
        let hot = ir.add_scalar(1.5).unwrap();
        assert!(matches!(model.predict(&hot, &vi), Err(Error::Input(_))));
        let g = GrayImage::from_fn(8, 8, |_, _| 0.5);
        let c = RgbImage::from_gray(&GrayImage::from_fn(8, 7, |_, _| 0.5));
        assert!(matches!(model.fuse(&g, &c), Err(Error::Input(_))));
    }

    #[test]
    fn fusion_keeps_visible_chroma() {
        let model = build_model(&ModelConfig::tiny()).unwrap();
        let ir = GrayImage::from_fn(8, 8, |x, _| x as f64 / 8.0);
        let grey = RgbImage::from_gray(&GrayImage::from_fn(8, 8, |_, y| y as f64 / 8.0));
        let out = model.fuse(&ir, &grey).unwrap();
        // Neutral chroma stays neutral: every output pixel is grey.
        for i in 0..64 {
            let [r, g, b] = out.pixel(i);
            assert!((r - g).abs() < 1e-12 && (g - b).abs() < 1e-12);
        }
    }

    #[test]
    fn luma_of_grey_is_exact() {
        let v = Tensor::from_fn([1, 3, 2, 2], |[_, _, y, x]| (y * 2 + x) as f64 / 3.0);
        let y = luma_tensor(&v).unwrap();
        for (a, b) in y.data().iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
