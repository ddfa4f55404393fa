//! Difference-driven dual-branch feature extraction.
//!
//! Each stage runs the modality-specific ("self") streams through their own
//! VSS blocks, the weight-shared streams through one conv + VSS pair, and then
//! mixes the self streams under the mask `tanh|vi_share − ir_share|`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Init};
use crate::ssm::VssBlock;
use crate::tensor::{Ctx, Tensor};

/// Order in which the difference mask reweights the two self streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GuidanceMode {
    /// Infrared first, then visible using the updated infrared stream.
    #[default]
    Default,
    /// Visible first, then infrared using the updated visible stream.
    V1,
    /// Both from the pre-update streams.
    V2,
    /// No mask mixing; the share streams are added onto the self streams instead.
    None,
}

impl GuidanceMode {
    pub fn name(self) -> &'static str {
        match self {
            GuidanceMode::Default => "default",
            GuidanceMode::V1 => "v1",
            GuidanceMode::V2 => "v2",
            GuidanceMode::None => "none",
        }
    }
}

impl fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GuidanceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(GuidanceMode::Default),
            "v1" => Ok(GuidanceMode::V1),
            "v2" => Ok(GuidanceMode::V2),
            "none" => Ok(GuidanceMode::None),
            _ => Err(Error::config("guide_mode", format!("unknown guidance mode {s:?} (default, v1, v2, none)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BranchState {
    pub vi_self: Tensor,
    pub ir_self: Tensor,
    pub vi_share: Tensor,
    pub ir_share: Tensor,
    pub stage: usize,
}

/// `tanh|vi − ir|`, elementwise in `[0, 1)`.
#[derive(Debug, Clone)]
pub struct DiffMask {
    pub mask: Tensor,
}

pub fn diff_mask(vi_share: &Tensor, ir_share: &Tensor) -> Result<DiffMask> {
    if vi_share.shape() != ir_share.shape() {
        return Err(Error::shape(format!(
            "difference mask of {:?} and {:?}",
            vi_share.shape(),
            ir_share.shape()
        )));
    }
    Ok(DiffMask { mask: vi_share.sub(ir_share)?.abs()?.tanh()? })
}

/// `(1 − m)⊙a + m⊙b`
fn blend(a: &Tensor, b: &Tensor, m: &Tensor) -> Result<Tensor> {
    a.add(&m.mul(&b.sub(a)?)?)
}

/// Mask mixing of the two self streams; returns `(vi', ir')`.
/// [`GuidanceMode::None`] leaves both unchanged.
pub fn reweight(vi: &Tensor, ir: &Tensor, diff: &DiffMask, mode: GuidanceMode) -> Result<(Tensor, Tensor)> {
    let m = &diff.mask;
    match mode {
        GuidanceMode::Default => {
            let ir2 = blend(ir, vi, m)?;
            let vi2 = blend(vi, &ir2, m)?;
            Ok((vi2, ir2))
        }
        GuidanceMode::V1 => {
            let vi2 = blend(vi, ir, m)?;
            let ir2 = blend(ir, &vi2, m)?;
            Ok((vi2, ir2))
        }
        GuidanceMode::V2 => Ok((blend(vi, ir, m)?, blend(ir, vi, m)?)),
        GuidanceMode::None => Ok((vi.clone(), ir.clone())),
    }
}

fn check_unit_range(name: &str, t: &Tensor) -> Result<()> {
    match t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::Input(format!("{name} pixel {v} outside [0, 1]"))),
        None => Ok(()),
    }
}

/// Per-modality 3×3 stems lifting pixels to `C` channels.
#[derive(Debug, Clone)]
pub struct Stem {
    pub ir: Conv2d,
    pub vi: Conv2d,
    pub channels: usize,
}

impl Stem {
    pub fn new(init: &mut Init, channels: usize) -> Result<Self> {
        let mut s = init.scope("stem");
        Ok(Stem { ir: Conv2d::same(&mut s, "ir", 1, channels, 3)?, vi: Conv2d::same(&mut s, "vi", 3, channels, 3)?, channels })
    }

    /// Infrared `(B, 1, H, W)` and visible `(B, 3, H, W)` pixels in `[0, 1]`
    /// to a stage-0 branch state whose self and share streams coincide.
    pub fn embed(&self, ctx: &Ctx, ir: &Tensor, vi: &Tensor) -> Result<BranchState> {
        let [b, ci, h, w] = ir.shape();
        let [vb, cv, vh, vw] = vi.shape();
        if ci != 1 || cv != 3 || (b, h, w) != (vb, vh, vw) {
            return Err(Error::shape(format!(
                "stem expects infrared (B,1,H,W) and visible (B,3,H,W), got {:?} and {:?}",
                ir.shape(),
                vi.shape()
            )));
        }
        check_unit_range("infrared", ir)?;
        check_unit_range("visible", vi)?;
        let fi = self.ir.forward(ctx, ir)?;
        let fv = self.vi.forward(ctx, vi)?;
        Ok(BranchState { vi_self: fv.clone(), ir_self: fi.clone(), vi_share: fv, ir_share: fi, stage: 0 })
    }
}

/// Parameters of one extraction stage.
#[derive(Debug, Clone)]
pub struct Stage {
    pub vi_self: VssBlock,
    pub ir_self: VssBlock,
    pub share_conv: Conv2d,
    pub share_vss: VssBlock,
}

impl Stage {
    pub fn new(init: &mut Init, name: &str, channels: usize, expand: usize, state: usize) -> Result<Self> {
        let mut s = init.scope(name);
        Ok(Stage {
            vi_self: VssBlock::new(&mut s, "vi_self", channels, expand, state)?,
            ir_self: VssBlock::new(&mut s, "ir_self", channels, expand, state)?,
            share_conv: Conv2d::same(&mut s, "share_conv", channels, channels, 3)?,
            share_vss: VssBlock::new(&mut s, "share_vss", channels, expand, state)?,
        })
    }

    /// One parameter set applied to both share streams; returns `(vi, ir)`.
    pub fn shared_step(&self, ctx: &Ctx, state: &BranchState) -> Result<(Tensor, Tensor)> {
        let run = |x: &Tensor| -> Result<Tensor> { self.share_vss.forward(ctx, &self.share_conv.forward(ctx, x)?.silu()?) };
        Ok((run(&state.vi_share)?, run(&state.ir_share)?))
    }

    /// Self-stream VSS blocks followed by mask mixing; `state` must already
    /// carry this stage's share outputs. Returns `(vi', ir')`.
    pub fn guide(&self, ctx: &Ctx, state: &BranchState, diff: &DiffMask, mode: GuidanceMode) -> Result<(Tensor, Tensor)> {
        let vi = self.vi_self.forward(ctx, &state.vi_self)?;
        let ir = self.ir_self.forward(ctx, &state.ir_self)?;
        match mode {
            GuidanceMode::None => Ok((vi.add(&state.vi_share)?, ir.add(&state.ir_share)?)),
            _ => reweight(&vi, &ir, diff, mode),
        }
    }

    pub fn step(&self, ctx: &Ctx, state: BranchState, mode: GuidanceMode) -> Result<(BranchState, DiffMask)> {
        let (vi_share, ir_share) = self.shared_step(ctx, &state)?;
        let diff = diff_mask(&vi_share, &ir_share)?;
        let with_shares = BranchState { vi_share, ir_share, ..state };
        let (vi_self, ir_self) = self.guide(ctx, &with_shares, &diff, mode)?;
        let next = BranchState { vi_self, ir_self, stage: with_shares.stage + 1, ..with_shares };
        Ok((next, diff))
    }
}

#[derive(Debug, Clone)]
pub struct Extracted {
    pub vi: Tensor,
    pub ir: Tensor,
    /// Difference mask of every stage, in order.
    pub masks: Vec<Tensor>,
}

/// Stem plus `n_stages` extraction stages. With `enabled = false` only the
/// stem runs and its outputs are returned directly.
#[derive(Debug, Clone)]
pub struct Extractor {
    pub stem: Stem,
    pub stages: Vec<Stage>,
    pub mode: GuidanceMode,
    pub enabled: bool,
}

impl Extractor {
    pub fn new(
        init: &mut Init,
        channels: usize,
        expand: usize,
        state: usize,
        n_stages: usize,
        mode: GuidanceMode,
        enabled: bool,
    ) -> Result<Self> {
        if n_stages == 0 {
            return Err(Error::config("n_stages", "need at least one extraction stage"));
        }
        let stem = Stem::new(init, channels)?;
        let mut stages = Vec::new();
        if enabled {
            let mut s = init.scope("extract");
            for i in 0..n_stages {
                stages.push(Stage::new(&mut s, &format!("stage{i}"), channels, expand, state)?);
            }
        }
        Ok(Extractor { stem, stages, mode, enabled })
    }

    pub fn forward(&self, ctx: &Ctx, ir: &Tensor, vi: &Tensor) -> Result<Extracted> {
        let mut state = self.stem.embed(ctx, ir, vi)?;
        let mut masks = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let (next, diff) = stage.step(ctx, state, self.mode)?;
            masks.push(diff.mask);
            state = next;
        }
        Ok(Extracted { vi: state.vi_self, ir: state.ir_self, masks })
    }
}
