//! Visual state space block: a gated four-route selective scan with a residual.

use super::cross::{cross_merge, cross_scan};
use super::SsmParams;
use crate::error::{Error, Result};
use crate::nn::{ChannelNorm, DepthwiseConv2d, Init, Linear};
use crate::tensor::{Ctx, Tensor};

#[derive(Debug, Clone)]
pub struct VssBlock {
    pub norm: ChannelNorm,
    pub in_proj: Linear,
    pub gate_proj: Linear,
    pub dwconv: DepthwiseConv2d,
    pub routes: [SsmParams; 4],
    pub out_proj: Linear,
    pub channels: usize,
    pub inner: usize,
}

impl VssBlock {
    pub fn new(init: &mut Init, name: &str, channels: usize, expand: usize, state: usize) -> Result<Self> {
        let inner = channels * expand.max(1);
        let mut s = init.scope(name);
        let norm = ChannelNorm::new(&mut s, "norm", channels)?;
        let in_proj = Linear::new(&mut s, "in_proj", channels, inner, false)?;
        let gate_proj = Linear::new(&mut s, "gate_proj", channels, inner, false)?;
        let dwconv = DepthwiseConv2d::new(&mut s, "dwconv", inner, 3)?;
        let routes = [
            SsmParams::new(&mut s, "route0", inner, state, true)?,
            SsmParams::new(&mut s, "route1", inner, state, true)?,
            SsmParams::new(&mut s, "route2", inner, state, true)?,
            SsmParams::new(&mut s, "route3", inner, state, true)?,
        ];
        let out_proj = Linear::new(&mut s, "out_proj", inner, channels, false)?;
        Ok(VssBlock { norm, in_proj, gate_proj, dwconv, routes, out_proj, channels, inner })
    }

    pub fn forward(&self, ctx: &Ctx, x: &Tensor) -> Result<Tensor> {
        let c = x.shape()[1];
        if c != self.channels {
            return Err(Error::shape(format!("VSS block for {} channels got {c}", self.channels)));
        }
        let normed = self.norm.forward(ctx, x)?;
        let u = self.dwconv.forward(ctx, &self.in_proj.forward(ctx, &normed)?)?.silu()?;
        let seqs = cross_scan(&u)?;
        let mut scanned = Vec::with_capacity(4);
        for (seq, route) in seqs.iter().zip(&self.routes) {
            scanned.push(seq.with_tokens(route.scan(ctx, &seq.tokens)?)?);
        }
        let merged = cross_merge(&scanned)?;
        let gate = self.gate_proj.forward(ctx, &normed)?.sigmoid()?;
        let out = self.out_proj.forward(ctx, &merged.mul(&gate)?)?;
        x.add(&out)
    }
}
