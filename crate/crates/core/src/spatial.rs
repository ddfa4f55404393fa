//! Cross-modal spatial scanning over a three-level pyramid, and the decoder.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Init, Linear};
use crate::ssm::VssBlock;
use crate::tensor::{Ctx, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RealignMode {
    /// Channels interleaved `[ir1, vi1, ir2, vi2, …]`.
    Column,
    /// Channels stacked `[ir1 … irC, vi1 … viC]`.
    Row,
    /// Maps placed side by side.
    Concat,
}

impl RealignMode {
    pub const ALL: [RealignMode; 3] = [RealignMode::Column, RealignMode::Row, RealignMode::Concat];
}

/// Axis along which [`RealignMode::Concat`] joins the two maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConcatAxis {
    #[default]
    Width,
    Channel,
}

impl fmt::Display for ConcatAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConcatAxis::Width => "width",
            ConcatAxis::Channel => "channel",
        })
    }
}

impl FromStr for ConcatAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "width" => Ok(ConcatAxis::Width),
            "channel" => Ok(ConcatAxis::Channel),
            _ => Err(Error::config("concat_axis", format!("unknown concat axis {s:?} (width, channel)"))),
        }
    }
}

fn interleave_index(c: usize) -> Vec<usize> {
    (0..c).flat_map(|k| [k, c + k]).collect()
}

pub fn realign(m_ir: &Tensor, m_vi: &Tensor, mode: RealignMode, axis: ConcatAxis) -> Result<Tensor> {
    if m_ir.shape() != m_vi.shape() {
        return Err(Error::shape(format!("realign of {:?} and {:?}", m_ir.shape(), m_vi.shape())));
    }
    let c = m_ir.shape()[1];
    match (mode, axis) {
        (RealignMode::Column, _) => Tensor::concat(&[m_ir, m_vi], 1)?.gather_channels(&interleave_index(c)),
        (RealignMode::Row, _) | (RealignMode::Concat, ConcatAxis::Channel) => Tensor::concat(&[m_ir, m_vi], 1),
        (RealignMode::Concat, ConcatAxis::Width) => Tensor::concat(&[m_ir, m_vi], 3),
    }
}

/// Splits a realigned map back into its two halves and averages them.
pub fn collapse(fused: &Tensor, mode: RealignMode, axis: ConcatAxis) -> Result<Tensor> {
    let [_, c2, _, w2] = fused.shape();
    let halves = match (mode, axis) {
        (RealignMode::Concat, ConcatAxis::Width) => {
            if w2 % 2 != 0 {
                return Err(Error::shape(format!("cannot split width {w2} into halves")));
            }
            (fused.narrow(3, 0, w2 / 2)?, fused.narrow(3, w2 / 2, w2 / 2)?)
        }
        _ if c2 % 2 != 0 => return Err(Error::shape(format!("cannot split {c2} channels into halves"))),
        (RealignMode::Column, _) => {
            let c = c2 / 2;
            let even: Vec<usize> = (0..c).map(|k| 2 * k).collect();
            let odd: Vec<usize> = (0..c).map(|k| 2 * k + 1).collect();
            (fused.gather_channels(&even)?, fused.gather_channels(&odd)?)
        }
        _ => (fused.narrow(1, 0, c2 / 2)?, fused.narrow(1, c2 / 2, c2 / 2)?),
    };
    halves.0.add(&halves.1)?.mul_scalar(0.5)
}

/// Cross-modal state space scanning at one scale.
#[derive(Debug, Clone)]
pub struct SssBlock {
    /// One VSS block per realignment mode, in [`RealignMode::ALL`] order.
    pub branches: [VssBlock; 3],
    /// `3C → C`
    pub proj: Linear,
    pub axis: ConcatAxis,
}

impl SssBlock {
    pub fn new(init: &mut Init, name: &str, channels: usize, expand: usize, state: usize, axis: ConcatAxis) -> Result<Self> {
        let mut s = init.scope(name);
        let concat_channels = if axis == ConcatAxis::Width { channels } else { 2 * channels };
        Ok(SssBlock {
            branches: [
                VssBlock::new(&mut s, "column", 2 * channels, expand, state)?,
                VssBlock::new(&mut s, "row", 2 * channels, expand, state)?,
                VssBlock::new(&mut s, "concat", concat_channels, expand, state)?,
            ],
            proj: Linear::new(&mut s, "proj", 3 * channels, channels, true)?,
            axis,
        })
    }

    pub fn forward(&self, ctx: &Ctx, m_ir: &Tensor, m_vi: &Tensor) -> Result<Tensor> {
        let mut parts = Vec::with_capacity(3);
        for (mode, block) in RealignMode::ALL.into_iter().zip(&self.branches) {
            let fused = block.forward(ctx, &realign(m_ir, m_vi, mode, self.axis)?)?;
            parts.push(collapse(&fused, mode, self.axis)?);
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        self.proj.forward(ctx, &Tensor::concat(&refs, 1)?)
    }
}

/// Number of pyramid levels usable for an `h × w` map, capped at `max`.
pub fn scale_count(h: usize, w: usize, max: usize) -> usize {
    let m = h.min(w).max(1);
    let levels = 1 + (usize::BITS - 1 - m.leading_zeros()) as usize;
    levels.min(max).max(1)
}

/// `(ir, vi)` pairs at successively halved resolutions.
pub fn scale_pyramid(f_ir: &Tensor, f_vi: &Tensor, levels: usize) -> Result<Vec<(Tensor, Tensor)>> {
    let mut out = vec![(f_ir.clone(), f_vi.clone())];
    for _ in 1..levels {
        let (a, b) = out.last().expect("non-empty");
        let next = (a.avg_pool2()?, b.avg_pool2()?);
        out.push(next);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SpatialExchange {
    pub scales: Vec<SssBlock>,
    /// `C → C` after summing the scales.
    pub proj: Linear,
    pub enabled: bool,
}

impl SpatialExchange {
    pub fn new(
        init: &mut Init,
        channels: usize,
        expand: usize,
        state: usize,
        levels: usize,
        axis: ConcatAxis,
        enabled: bool,
    ) -> Result<Self> {
        if levels == 0 {
            return Err(Error::config("scales", "need at least one scale"));
        }
        let mut s = init.scope("spatial");
        let mut scales = Vec::new();
        if enabled {
            for i in 0..levels {
                scales.push(SssBlock::new(&mut s, &format!("scale{i}"), channels, expand, state, axis)?);
            }
        }
        let proj = Linear::new(&mut s, "proj", channels, channels, true)?;
        Ok(SpatialExchange { scales, proj, enabled })
    }

    /// Fused features; with the stage disabled, the plain average of both inputs.
    pub fn forward(&self, ctx: &Ctx, f_ir: &Tensor, f_vi: &Tensor) -> Result<Tensor> {
        if f_ir.shape() != f_vi.shape() {
            return Err(Error::shape(format!("spatial exchange of {:?} and {:?}", f_ir.shape(), f_vi.shape())));
        }
        if !self.enabled {
            return f_ir.add(f_vi)?.mul_scalar(0.5);
        }
        let [_, _, h, w] = f_ir.shape();
        let levels = scale_count(h, w, self.scales.len());
        let mut total: Option<Tensor> = None;
        for ((ir, vi), block) in scale_pyramid(f_ir, f_vi, levels)?.iter().zip(&self.scales) {
            let mut m = block.forward(ctx, ir, vi)?;
            if m.shape()[2..] != [h, w] {
                m = m.resize_nearest(h, w)?;
            }
            total = Some(match total {
                None => m,
                Some(t) => t.add(&m)?,
            });
        }
        self.proj.forward(ctx, &total.expect("at least one scale"))
    }
}

/// Two 3×3 conv + SiLU layers, a 3×3 conv to one channel, then sigmoid.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub out: Conv2d,
}

impl Decoder {
    pub fn new(init: &mut Init, channels: usize) -> Result<Self> {
        let mut s = init.scope("decoder");
        Ok(Decoder {
            conv1: Conv2d::same(&mut s, "conv1", channels, channels, 3)?,
            conv2: Conv2d::same(&mut s, "conv2", channels, channels, 3)?,
            out: Conv2d::same(&mut s, "out", channels, 1, 3)?,
        })
    }

    pub fn forward(&self, ctx: &Ctx, m: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(ctx, m)?.silu()?;
        let h = self.conv2.forward(ctx, &h)?.silu()?;
        self.out.forward(ctx, &h)?.sigmoid()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check_with, Scheme};
    use crate::tensor::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn channel_tags(base: f64) -> Tensor {
        Tensor::from_fn([1, 2, 1, 1], |[_, c, _, _]| base + c as f64)
    }

    #[test]
    fn realign_orders() {
        // ir channels are 1, 2 and vi channels are 11, 12
        let ir = channel_tags(1.0);
        let vi = channel_tags(11.0);
        let w = ConcatAxis::Width;
        assert_eq!(realign(&ir, &vi, RealignMode::Column, w).unwrap().to_vec(), [1.0, 11.0, 2.0, 12.0]);
        assert_eq!(realign(&ir, &vi, RealignMode::Row, w).unwrap().to_vec(), [1.0, 2.0, 11.0, 12.0]);
        let a = Tensor::zeros([1, 1, 2, 2]);
        assert_eq!(realign(&a, &a, RealignMode::Concat, w).unwrap().shape(), [1, 1, 2, 4]);
        assert_eq!(realign(&a, &a, RealignMode::Concat, ConcatAxis::Channel).unwrap().shape(), [1, 2, 2, 2]);
        assert!(realign(&a, &Tensor::zeros([1, 1, 2, 3]), RealignMode::Row, w).is_err());
    }

    #[test]
    fn realign_preserves_the_multiset() {
        let ir = random([2, 3, 2, 3], 1);
        let vi = random([2, 3, 2, 3], 2);
        let mut want: Vec<f64> = [ir.to_vec(), vi.to_vec()].concat();
        want.sort_by(f64::total_cmp);
        for mode in RealignMode::ALL {
            let mut got = realign(&ir, &vi, mode, ConcatAxis::Width).unwrap().to_vec();
            got.sort_by(f64::total_cmp);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn collapse_averages() {
        let a = random([1, 3, 2, 4], 3);
        let b = random([1, 3, 2, 4], 4);
        for axis in [ConcatAxis::Width, ConcatAxis::Channel] {
            for mode in RealignMode::ALL {
                let same = collapse(&realign(&a, &a, mode, axis).unwrap(), mode, axis).unwrap();
                assert_eq!(same.to_vec(), a.to_vec());
                let mixed = collapse(&realign(&a, &b, mode, axis).unwrap(), mode, axis).unwrap();
                assert_eq!(mixed.shape(), a.shape());
                for i in 0..a.numel() {
                    assert!((mixed.data()[i] - 0.5 * (a.data()[i] + b.data()[i])).abs() < 1e-15);
                }
            }
        }
        assert!(collapse(&Tensor::zeros([1, 3, 2, 2]), RealignMode::Row, ConcatAxis::Width).is_err());
        assert!(collapse(&Tensor::zeros([1, 2, 2, 3]), RealignMode::Concat, ConcatAxis::Width).is_err());
    }

    #[test]
    fn scale_counts() {
        assert_eq!(scale_count(4, 4, 3), 3);
        assert_eq!(scale_count(64, 64, 3), 3);
        assert_eq!(scale_count(2, 9, 3), 2);
        assert_eq!(scale_count(1, 1, 3), 1);
        assert_eq!(scale_count(3, 3, 3), 2);
        let p = scale_pyramid(&Tensor::zeros([1, 1, 4, 4]), &Tensor::zeros([1, 1, 4, 4]), 3).unwrap();
        let sizes: Vec<[usize; 4]> = p.iter().map(|(a, _)| a.shape()).collect();
        assert_eq!(sizes, [[1, 1, 4, 4], [1, 1, 2, 2], [1, 1, 1, 1]]);
    }

    fn spatial(store: &mut ParamStore, c: usize, enabled: bool) -> SpatialExchange {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        SpatialExchange::new(&mut Init::new(store, &mut rng), c, 2, 2, 3, ConcatAxis::Width, enabled).unwrap()
    }

    #[test]
    fn shapes_at_every_small_size() {
        let mut store = ParamStore::new();
        let s = spatial(&mut store, 2, true);
        let ctx = Ctx::no_grad(&store);
        for (h, w) in [(1, 1), (3, 2), (4, 4), (5, 7)] {
            let out = s.forward(&ctx, &random([1, 2, h, w], 1), &random([1, 2, h, w], 2)).unwrap();
            assert_eq!(out.shape(), [1, 2, h, w]);
        }
    }

    #[test]
    fn zero_projection_gives_zero_output() {
        let mut store = ParamStore::new();
        let s = spatial(&mut store, 2, true);
        store.get_mut(s.scales[0].proj.weight).value.fill(0.0);
        let ctx = Ctx::no_grad(&store);
        let out = s.scales[0].forward(&ctx, &random([1, 2, 3, 3], 1), &random([1, 2, 3, 3], 2)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constants_survive_the_pyramid_when_scans_are_identities() {
        let mut store = ParamStore::new();
        let s = spatial(&mut store, 2, true);
        for sss in &s.scales {
            for b in &sss.branches {
                store.get_mut(b.out_proj.weight).value.fill(0.0);
            }
        }
        let ctx = Ctx::no_grad(&store);
        let x = Tensor::full([1, 2, 8, 8], 0.3);
        let out = s.forward(&ctx, &x, &x).unwrap();
        for c in 0..2 {
            let v0 = out.at([0, c, 0, 0]);
            for y in 0..8 {
                for xx in 0..8 {
                    assert!((out.at([0, c, y, xx]) - v0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn disabled_path_averages() {
        let mut store = ParamStore::new();
        let s = spatial(&mut store, 2, false);
        assert!(s.scales.is_empty());
        let ctx = Ctx::no_grad(&store);
        let (a, b) = (random([1, 2, 3, 3], 1), random([1, 2, 3, 3], 2));
        let out = s.forward(&ctx, &a, &b).unwrap();
        for i in 0..a.numel() {
            assert!((out.data()[i] - 0.5 * (a.data()[i] + b.data()[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn decoder_range_and_constant_case() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = Decoder::new(&mut Init::new(&mut store, &mut rng), 3).unwrap();
        let x = random([2, 3, 4, 5], 9).mul_scalar(10.0).unwrap();
        let y = d.forward(&Ctx::no_grad(&store), &x).unwrap();
        assert_eq!(y.shape(), [2, 1, 4, 5]);
        assert!(y.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        store.get_mut(d.out.weight).value.fill(0.0);
        let y = d.forward(&Ctx::no_grad(&store), &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn sss_block_is_differentiable() {
        let mut store = ParamStore::new();
        let s = spatial(&mut store, 2, true);
        let ir = store.add("ir", [1, 2, 4, 4], random([1, 2, 4, 4], 3).to_vec()).unwrap();
        let vi = store.add("vi", [1, 2, 4, 4], random([1, 2, 4, 4], 4).to_vec()).unwrap();
        let w = random([1, 2, 4, 4], 5);
        let block = s.scales[0].clone();
        let mut ids: Vec<_> = store.ids().filter(|&i| store.get(i).name.starts_with("spatial.scale0")).collect();
        ids.extend([ir, vi]);
        let report = grad_check_with(&mut store, |ctx| block.forward(ctx, &ctx.p(ir), &ctx.p(vi))?.mul(&w)?.mean_all(), 1e-3, Scheme::Richardson, Some(&ids))
            .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }
}
