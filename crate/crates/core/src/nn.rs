//! Small parameterised layers shared by every module.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{numel, Ctx, ParamId, ParamStore, Shape, Tensor};

/// Registers parameters under a dotted name prefix with seeded initialisation.
pub struct Init<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Init { store, rng, prefix: String::new() }
    }

    pub fn scope(&mut self, name: &str) -> Init<'_> {
        let prefix = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        Init { store: self.store, rng: self.rng, prefix }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn uniform(&mut self, name: &str, shape: Shape, bound: f64) -> Result<ParamId> {
        let values = (0..numel(shape)).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        self.store.add(self.full_name(name), shape, values)
    }

    pub fn constant(&mut self, name: &str, shape: Shape, value: f64) -> Result<ParamId> {
        self.store.add(self.full_name(name), shape, vec![value; numel(shape)])
    }

    pub fn set_all(&mut self, id: ParamId, value: f64) {
        self.store.get_mut(id).value.fill(value);
    }

    pub fn values(&mut self, name: &str, shape: Shape, values: Vec<f64>) -> Result<ParamId> {
        self.store.add(self.full_name(name), shape, values)
    }
}

fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

/// Per-pixel (per-token) affine map over channels.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, cin: usize, cout: usize, bias: bool) -> Result<Self> {
        let mut s = init.scope(name);
        let bound = fan_in_bound(cin);
        let weight = s.uniform("weight", [cout, cin, 1, 1], bound)?;
        let bias = if bias { Some(s.constant("bias", [1, cout, 1, 1], 0.0)?) } else { None };
        Ok(Linear { weight, bias, in_channels: cin, out_channels: cout })
    }

    pub fn forward(&self, ctx: &Ctx, x: &Tensor) -> Result<Tensor> {
        let b = self.bias.map(|b| ctx.p(b));
        x.linear(&ctx.p(self.weight), b.as_ref())
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// `k × k` convolution with "same" padding `k / 2` and stride 1.
    pub fn same(init: &mut Init, name: &str, cin: usize, cout: usize, k: usize) -> Result<Self> {
        let mut s = init.scope(name);
        let bound = fan_in_bound(cin * k * k);
        let weight = s.uniform("weight", [cout, cin, k, k], bound)?;
        let bias = Some(s.constant("bias", [1, cout, 1, 1], 0.0)?);
        Ok(Conv2d { weight, bias, stride: 1, padding: k / 2 })
    }

    pub fn forward(&self, ctx: &Ctx, x: &Tensor) -> Result<Tensor> {
        let b = self.bias.map(|b| ctx.p(b));
        x.conv2d(&ctx.p(self.weight), b.as_ref(), self.stride, self.padding)
    }
}

#[derive(Debug, Clone)]
pub struct DepthwiseConv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub padding: usize,
}

impl DepthwiseConv2d {
    pub fn new(init: &mut Init, name: &str, channels: usize, k: usize) -> Result<Self> {
        let mut s = init.scope(name);
        let weight = s.uniform("weight", [channels, 1, k, k], fan_in_bound(k * k))?;
        let bias = s.constant("bias", [1, channels, 1, 1], 0.0)?;
        Ok(DepthwiseConv2d { weight, bias, padding: k / 2 })
    }

    pub fn forward(&self, ctx: &Ctx, x: &Tensor) -> Result<Tensor> {
        x.depthwise_conv2d(&ctx.p(self.weight), Some(&ctx.p(self.bias)), self.padding)
    }
}

/// Layer norm over channels with learned scale and shift.
#[derive(Debug, Clone)]
pub struct ChannelNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl ChannelNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(init: &mut Init, name: &str, channels: usize) -> Result<Self> {
        let mut s = init.scope(name);
        let gamma = s.constant("gamma", [1, channels, 1, 1], 1.0)?;
        let beta = s.constant("beta", [1, channels, 1, 1], 0.0)?;
        Ok(ChannelNorm { gamma, beta })
    }

    pub fn forward(&self, ctx: &Ctx, x: &Tensor) -> Result<Tensor> {
        x.channel_norm(&ctx.p(self.gamma), &ctx.p(self.beta), Self::EPS)
    }
}
