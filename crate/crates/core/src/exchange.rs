//! Cross-modal channel exchange: B/C token swapping inside the four-route
//! scan, residual gating and the ω-weighted channel blend.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{Init, Linear};
use crate::ssm::{cross_merge, cross_scan, SsmParams};
use crate::tensor::{Ctx, ParamId, Tensor};

/// Which modality's `B`, `C` tokens each stream scans with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExchangeVariant {
    /// Visible scans with infrared `B`, `C` and vice versa.
    #[default]
    Mutual,
    /// Both streams use the visible `B`, `C`.
    V1,
    /// Both streams use the infrared `B`, `C`.
    V2,
    /// Each stream keeps its own.
    None,
}

impl ExchangeVariant {
    pub fn name(self) -> &'static str {
        match self {
            ExchangeVariant::Mutual => "mutual",
            ExchangeVariant::V1 => "v1",
            ExchangeVariant::V2 => "v2",
            ExchangeVariant::None => "none",
        }
    }

    /// `(vi takes from ir, ir takes from vi)`
    fn swaps(self) -> (bool, bool) {
        match self {
            ExchangeVariant::Mutual => (true, true),
            ExchangeVariant::V1 => (false, true),
            ExchangeVariant::V2 => (true, false),
            ExchangeVariant::None => (false, false),
        }
    }
}

impl fmt::Display for ExchangeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExchangeVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mutual" => Ok(ExchangeVariant::Mutual),
            "v1" => Ok(ExchangeVariant::V1),
            "v2" => Ok(ExchangeVariant::V2),
            "none" => Ok(ExchangeVariant::None),
            _ => Err(Error::config("exchange_variant", format!("unknown exchange variant {s:?} (mutual, v1, v2, none)"))),
        }
    }
}

/// Projections of one modality on one scan route.
#[derive(Debug, Clone)]
pub struct RouteProjection {
    /// `C → 2C + 2N`, split into `x`, `B`, `C`.
    pub in_proj: Linear,
    /// `2C → C` applied to `x` before the scan.
    pub reproj: Linear,
    pub ssm: SsmParams,
}

impl RouteProjection {
    fn new(init: &mut Init, name: &str, channels: usize, state: usize) -> Result<Self> {
        let mut s = init.scope(name);
        Ok(RouteProjection {
            in_proj: Linear::new(&mut s, "in_proj", channels, 2 * channels + 2 * state, false)?,
            reproj: Linear::new(&mut s, "reproj", 2 * channels, channels, false)?,
            ssm: SsmParams::new(&mut s, "ssm", channels, state, false)?,
        })
    }

    /// `(x, B, C)` for tokens `(B, C, 1, L)`.
    fn split(&self, ctx: &Ctx, tokens: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let c = self.reproj.out_channels;
        let n = self.ssm.state;
        let p = self.in_proj.forward(ctx, tokens)?;
        Ok((p.narrow(1, 0, 2 * c)?, p.narrow(1, 2 * c, n)?, p.narrow(1, 2 * c + n, n)?))
    }
}

#[derive(Debug, Clone)]
pub struct SsdExchange {
    pub vi: [RouteProjection; 4],
    /// Separate infrared projections; `None` when both modalities share `vi`.
    pub ir: Option<[RouteProjection; 4]>,
    pub channels: usize,
}

fn four(init: &mut Init, name: &str, c: usize, n: usize) -> Result<[RouteProjection; 4]> {
    let mut s = init.scope(name);
    Ok([
        RouteProjection::new(&mut s, "route0", c, n)?,
        RouteProjection::new(&mut s, "route1", c, n)?,
        RouteProjection::new(&mut s, "route2", c, n)?,
        RouteProjection::new(&mut s, "route3", c, n)?,
    ])
}

impl SsdExchange {
    pub fn new(init: &mut Init, name: &str, channels: usize, state: usize, shared_projections: bool) -> Result<Self> {
        let mut s = init.scope(name);
        let vi = four(&mut s, if shared_projections { "shared" } else { "vi" }, channels, state)?;
        let ir = if shared_projections { None } else { Some(four(&mut s, "ir", channels, state)?) };
        Ok(SsdExchange { vi, ir, channels })
    }

    /// Returns `(vi', ir')`.
    pub fn forward(&self, ctx: &Ctx, f_vi: &Tensor, f_ir: &Tensor, variant: ExchangeVariant) -> Result<(Tensor, Tensor)> {
        if f_vi.shape() != f_ir.shape() {
            return Err(Error::shape(format!("exchange of {:?} and {:?}", f_vi.shape(), f_ir.shape())));
        }
        if f_vi.shape()[1] != self.channels {
            return Err(Error::shape(format!("exchange for {} channels got {}", self.channels, f_vi.shape()[1])));
        }
        let ir_routes = self.ir.as_ref().unwrap_or(&self.vi);
        let (vi_takes, ir_takes) = variant.swaps();
        let seq_vi = cross_scan(f_vi)?;
        let seq_ir = cross_scan(f_ir)?;
        let mut out_vi = Vec::with_capacity(4);
        let mut out_ir = Vec::with_capacity(4);
        for r in 0..4 {
            let (pv, pi) = (&self.vi[r], &ir_routes[r]);
            let (xv, bv, cv) = pv.split(ctx, &seq_vi[r].tokens)?;
            let (xi, bi, ci) = pi.split(ctx, &seq_ir[r].tokens)?;
            let (b_for_vi, c_for_vi) = if vi_takes { (&bi, &ci) } else { (&bv, &cv) };
            let (b_for_ir, c_for_ir) = if ir_takes { (&bv, &cv) } else { (&bi, &ci) };
            let yv = pv.ssm.scan_with(ctx, &pv.reproj.forward(ctx, &xv)?, b_for_vi, c_for_vi)?;
            let yi = pi.ssm.scan_with(ctx, &pi.reproj.forward(ctx, &xi)?, b_for_ir, c_for_ir)?;
            out_vi.push(seq_vi[r].with_tokens(yv)?);
            out_ir.push(seq_ir[r].with_tokens(yi)?);
        }
        Ok((cross_merge(&out_vi)?, cross_merge(&out_ir)?))
    }
}

/// `(f_ex + coeff·f_in) ⊙ gate`; with `coeff = None` the residual term is dropped.
pub fn residual_gate(f_ex: &Tensor, f_in: &Tensor, coeff: Option<&Tensor>, gate: &Tensor) -> Result<Tensor> {
    if f_ex.shape() != f_in.shape() {
        return Err(Error::shape(format!("residual gate of {:?} and {:?}", f_ex.shape(), f_in.shape())));
    }
    let base = match coeff {
        Some(c) => f_ex.add(&f_in.mul(c)?)?,
        None => f_ex.clone(),
    };
    base.mul(gate)
}

/// Convex per-channel blend; returns `(ir_c, vi_c)`.
///
/// `ir_c = (1−ω)⊙ir + ω⊙vi`, `vi_c = (1−ω)⊙vi + ω⊙ir`.
pub fn channel_reweight(f_ir: &Tensor, f_vi: &Tensor, omega: &Tensor) -> Result<(Tensor, Tensor)> {
    if let Some(w) = omega.data().iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(Error::contract(format!("blend weight {w} outside [0, 1]")));
    }
    let d = f_vi.sub(f_ir)?.mul(omega)?;
    Ok((f_ir.add(&d)?, f_vi.sub(&d)?))
}

fn pooled_pair(f_ir: &Tensor, f_vi: &Tensor) -> Result<Tensor> {
    Tensor::concat(&[&f_ir.mean_spatial()?, &f_vi.mean_spatial()?], 1)
}

/// How the residual coefficients α (infrared) and β (visible) are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoeffMode {
    /// Per-channel, from pooled features of both modalities.
    #[default]
    Pooled,
    /// One learned scalar each.
    Scalar,
}

impl fmt::Display for CoeffMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoeffMode::Pooled => "pooled",
            CoeffMode::Scalar => "scalar",
        })
    }
}

impl FromStr for CoeffMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(CoeffMode::Pooled),
            "scalar" => Ok(CoeffMode::Scalar),
            _ => Err(Error::config("coeff_mode", format!("unknown coefficient mode {s:?} (pooled, scalar)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Coeff {
    Pooled(Linear),
    Scalar(ParamId),
}

impl Coeff {
    fn new(init: &mut Init, name: &str, channels: usize, mode: CoeffMode) -> Result<Self> {
        Ok(match mode {
            CoeffMode::Pooled => Coeff::Pooled(Linear::new(init, name, 2 * channels, channels, true)?),
            CoeffMode::Scalar => Coeff::Scalar(init.constant(name, [1, 1, 1, 1], 1.0)?),
        })
    }

    fn eval(&self, ctx: &Ctx, pooled: &Tensor) -> Result<Tensor> {
        match self {
            Coeff::Pooled(l) => l.forward(ctx, pooled),
            Coeff::Scalar(p) => Ok(ctx.p(*p)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GateParams {
    pub alpha: Coeff,
    pub beta: Coeff,
    pub ir_gate: Linear,
    pub vi_gate: Linear,
    /// `2C → C`, bias initialised to zero.
    pub omega: Linear,
}

impl GateParams {
    pub fn new(init: &mut Init, name: &str, channels: usize, mode: CoeffMode) -> Result<Self> {
        let mut s = init.scope(name);
        Ok(GateParams {
            alpha: Coeff::new(&mut s, "alpha", channels, mode)?,
            beta: Coeff::new(&mut s, "beta", channels, mode)?,
            ir_gate: Linear::new(&mut s, "ir_gate", channels, channels, true)?,
            vi_gate: Linear::new(&mut s, "vi_gate", channels, channels, true)?,
            omega: Linear::new(&mut s, "omega", 2 * channels, channels, true)?,
        })
    }

    /// `ω = sigmoid(W·[GAP(ir); GAP(vi)] + b)`, shape `(B, C, 1, 1)`.
    pub fn gate_generator(&self, ctx: &Ctx, f_ir: &Tensor, f_vi: &Tensor) -> Result<Tensor> {
        if f_ir.shape() != f_vi.shape() {
            return Err(Error::shape(format!("gate generator of {:?} and {:?}", f_ir.shape(), f_vi.shape())));
        }
        self.omega.forward(ctx, &pooled_pair(f_ir, f_vi)?)?.sigmoid()
    }
}

/// Ablation switches of the channel-exchange stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExchangeFlags {
    pub enabled: bool,
    pub variant: ExchangeVariant,
    pub residual: bool,
    pub reweight: bool,
}

impl Default for ExchangeFlags {
    fn default() -> Self {
        ExchangeFlags { enabled: true, variant: ExchangeVariant::Mutual, residual: true, reweight: true }
    }
}

#[derive(Debug, Clone)]
pub struct ChannelExchange {
    pub ssd: SsdExchange,
    pub gate: GateParams,
    pub flags: ExchangeFlags,
}

impl ChannelExchange {
    pub fn new(
        init: &mut Init,
        channels: usize,
        state: usize,
        shared_projections: bool,
        coeff_mode: CoeffMode,
        flags: ExchangeFlags,
    ) -> Result<Self> {
        let mut s = init.scope("exchange");
        Ok(ChannelExchange {
            ssd: SsdExchange::new(&mut s, "ssd", channels, state, shared_projections)?,
            gate: GateParams::new(&mut s, "gate", channels, coeff_mode)?,
            flags,
        })
    }

    /// Returns `(vi_c, ir_c)`.
    pub fn forward(&self, ctx: &Ctx, f_vi: &Tensor, f_ir: &Tensor) -> Result<(Tensor, Tensor)> {
        if !self.flags.enabled {
            return Ok((f_vi.clone(), f_ir.clone()));
        }
        let (vi_ex, ir_ex) = self.ssd.forward(ctx, f_vi, f_ir, self.flags.variant)?;
        let g = &self.gate;
        let (alpha, beta) = if self.flags.residual {
            let pooled = pooled_pair(f_ir, f_vi)?;
            (Some(g.alpha.eval(ctx, &pooled)?), Some(g.beta.eval(ctx, &pooled)?))
        } else {
            (None, None)
        };
        let ir2 = residual_gate(&ir_ex, f_ir, alpha.as_ref(), &g.ir_gate.forward(ctx, &ir_ex)?.sigmoid()?)?;
        let vi2 = residual_gate(&vi_ex, f_vi, beta.as_ref(), &g.vi_gate.forward(ctx, &vi_ex)?.sigmoid()?)?;
        if !self.flags.reweight {
            return Ok((vi2, ir2));
        }
        let omega = g.gate_generator(ctx, f_ir, f_vi)?;
        let (ir_c, vi_c) = channel_reweight(&ir2, &vi2, &omega)?;
        Ok((vi_c, ir_c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check_with, Scheme};
    use crate::tensor::ParamStore;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn scalar(v: f64) -> Tensor {
        Tensor::full([1, 1, 1, 1], v)
    }

    const VARIANTS: [ExchangeVariant; 4] =
        [ExchangeVariant::Mutual, ExchangeVariant::V1, ExchangeVariant::V2, ExchangeVariant::None];

    fn module(store: &mut ParamStore, c: usize, shared: bool, flags: ExchangeFlags) -> ChannelExchange {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        ChannelExchange::new(&mut Init::new(store, &mut rng), c, 3, shared, CoeffMode::Pooled, flags).unwrap()
    }

    #[test]
    fn residual_gate_cases() {
        let f = random([1, 2, 2, 2], 1);
        let g = random([1, 2, 2, 2], 2);
        let ones = Tensor::full([1, 2, 2, 2], 1.0);
        assert_eq!(residual_gate(&f, &g, Some(&scalar(0.0)), &ones).unwrap().to_vec(), f.to_vec());
        let out = residual_gate(&scalar(1.0), &scalar(1.0), Some(&scalar(1.0)), &scalar(0.5)).unwrap();
        assert_eq!(out.item().unwrap(), 1.0);
        let a = residual_gate(&f, &g, None, &ones).unwrap();
        let b = residual_gate(&f, &random([1, 2, 2, 2], 3), None, &ones).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn reweight_cases() {
        let (ir, vi) = channel_reweight(&scalar(2.0), &scalar(4.0), &scalar(0.25)).unwrap();
        assert_eq!((ir.item().unwrap(), vi.item().unwrap()), (2.5, 3.5));
        let (ir, vi) = channel_reweight(&scalar(2.0), &scalar(4.0), &scalar(0.5)).unwrap();
        assert_eq!((ir.item().unwrap(), vi.item().unwrap()), (3.0, 3.0));
        let (ir, vi) = channel_reweight(&scalar(2.0), &scalar(4.0), &scalar(0.0)).unwrap();
        assert_eq!((ir.item().unwrap(), vi.item().unwrap()), (2.0, 4.0));
        assert!(matches!(channel_reweight(&scalar(2.0), &scalar(4.0), &scalar(1.5)), Err(Error::Contract(_))));
    }

    proptest! {
        #[test]
        fn reweight_preserves_the_sum(seed in any::<u64>(), w in proptest::collection::vec(0.0f64..1.0, 3)) {
            let ir = random([2, 3, 2, 2], seed);
            let vi = random([2, 3, 2, 2], seed ^ 1);
            let omega = Tensor::new([1, 3, 1, 1], w).unwrap();
            let (a, b) = channel_reweight(&ir, &vi, &omega).unwrap();
            for i in 0..ir.numel() {
                let before = ir.data()[i] + vi.data()[i];
                prop_assert!((a.data()[i] + b.data()[i] - before).abs() <= 1e-15 * before.abs().max(1.0));
            }
        }

        #[test]
        fn omega_lies_in_the_open_interval(seed in any::<u64>(), scale in 0.0f64..20.0) {
            let mut store = ParamStore::new();
            let m = module(&mut store, 3, true, ExchangeFlags::default());
            let ctx = Ctx::no_grad(&store);
            let ir = random([1, 3, 2, 3], seed).mul_scalar(scale).unwrap();
            let vi = random([1, 3, 2, 3], seed ^ 7).mul_scalar(scale).unwrap();
            let w = m.gate.gate_generator(&ctx, &ir, &vi).unwrap();
            prop_assert!(w.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn zero_gate_projection_averages() {
        let mut store = ParamStore::new();
        let m = module(&mut store, 2, true, ExchangeFlags::default());
        store.get_mut(m.gate.omega.weight).value.fill(0.0);
        let ctx = Ctx::no_grad(&store);
        let (ir, vi) = (random([1, 2, 3, 3], 4), random([1, 2, 3, 3], 5));
        let w = m.gate.gate_generator(&ctx, &ir, &vi).unwrap();
        assert!(w.data().iter().all(|&v| v == 0.5));
        let (a, b) = channel_reweight(&ir, &vi, &w).unwrap();
        for i in 0..a.numel() {
            let mean = 0.5 * (ir.data()[i] + vi.data()[i]);
            assert!((a.data()[i] - mean).abs() < 1e-15 && (b.data()[i] - mean).abs() < 1e-15);
        }
        // equal inputs: swapping is a no-op
        let w2 = m.gate.gate_generator(&ctx, &vi, &vi).unwrap();
        assert_eq!(w2.to_vec(), m.gate.gate_generator(&ctx, &vi, &vi).unwrap().to_vec());
    }

    #[test]
    fn identical_inputs_make_variants_agree() {
        let mut store = ParamStore::new();
        let m = module(&mut store, 3, true, ExchangeFlags::default());
        let ctx = Ctx::no_grad(&store);
        let f = random([1, 3, 3, 4], 6);
        let base = m.ssd.forward(&ctx, &f, &f, ExchangeVariant::Mutual).unwrap();
        for v in VARIANTS {
            let (a, b) = m.ssd.forward(&ctx, &f, &f, v).unwrap();
            assert_eq!(a.to_vec(), base.0.to_vec());
            assert_eq!(b.to_vec(), base.1.to_vec());
        }
    }

    #[test]
    fn variants_differ_on_distinct_inputs() {
        let mut store = ParamStore::new();
        let m = module(&mut store, 3, true, ExchangeFlags::default());
        let ctx = Ctx::no_grad(&store);
        let (vi, ir) = (random([1, 3, 3, 3], 7), random([1, 3, 3, 3], 8));
        let outs: Vec<(Vec<f64>, Vec<f64>)> = VARIANTS
            .iter()
            .map(|&v| {
                let (a, b) = m.ssd.forward(&ctx, &vi, &ir, v).unwrap();
                (a.to_vec(), b.to_vec())
            })
            .collect();
        let [mutual, v1, v2, none] = [&outs[0], &outs[1], &outs[2], &outs[3]];
        // v1: vi keeps its own tokens, ir takes the visible ones
        assert_eq!(v1.0, none.0);
        assert_eq!(v1.1, mutual.1);
        // v2: vi takes infrared tokens, ir keeps its own
        assert_eq!(v2.0, mutual.0);
        assert_eq!(v2.1, none.1);
        assert_ne!(mutual.0, none.0);
    }

    #[test]
    fn none_variant_is_two_independent_scans() {
        let mut store = ParamStore::new();
        let m = module(&mut store, 2, true, ExchangeFlags::default());
        let ctx = Ctx::no_grad(&store);
        let (vi, ir) = (random([1, 2, 3, 3], 9), random([1, 2, 3, 3], 10));
        let (a, _) = m.ssd.forward(&ctx, &vi, &ir, ExchangeVariant::None).unwrap();
        let (b, _) = m.ssd.forward(&ctx, &vi, &random([1, 2, 3, 3], 11), ExchangeVariant::None).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn shapes_and_disabled_module() {
        let mut store = ParamStore::new();
        let m = module(&mut store, 4, false, ExchangeFlags::default());
        let ctx = Ctx::no_grad(&store);
        let (vi, ir) = (random([1, 4, 3, 5], 12), random([1, 4, 3, 5], 13));
        let (a, b) = m.forward(&ctx, &vi, &ir).unwrap();
        assert_eq!((a.shape(), b.shape()), ([1, 4, 3, 5], [1, 4, 3, 5]));
        let off = ChannelExchange { flags: ExchangeFlags { enabled: false, ..m.flags }, ..m.clone() };
        let (a, b) = off.forward(&ctx, &vi, &ir).unwrap();
        assert_eq!((a.to_vec(), b.to_vec()), (vi.to_vec(), ir.to_vec()));
        assert!(m.forward(&ctx, &vi, &random([1, 4, 3, 4], 1)).is_err());
    }

    #[test]
    fn every_flag_combination_is_finite() {
        for shared in [true, false] {
            for mode in [CoeffMode::Pooled, CoeffMode::Scalar] {
                for variant in VARIANTS {
                    for residual in [true, false] {
                        for reweight in [true, false] {
                            let flags = ExchangeFlags { enabled: true, variant, residual, reweight };
                            let mut store = ParamStore::new();
                            let mut rng = ChaCha8Rng::seed_from_u64(1);
                            let m = ChannelExchange::new(&mut Init::new(&mut store, &mut rng), 2, 2, shared, mode, flags)
                                .unwrap();
                            let ctx = Ctx::no_grad(&store);
                            let (a, b) = m.forward(&ctx, &random([1, 2, 3, 3], 2), &random([1, 2, 3, 3], 3)).unwrap();
                            assert!(a.data().iter().chain(b.data()).all(|v| v.is_finite()));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn module_is_differentiable() {
        let mut store = ParamStore::new();
        let m = module(&mut store, 2, true, ExchangeFlags::default());
        let vi = store.add("vi", [1, 2, 4, 4], random([1, 2, 4, 4], 14).to_vec()).unwrap();
        let ir = store.add("ir", [1, 2, 4, 4], random([1, 2, 4, 4], 15).to_vec()).unwrap();
        let (wv, wi) = (random([1, 2, 4, 4], 16), random([1, 2, 4, 4], 17));
        let report = grad_check_with(
            &mut store,
            |ctx| {
                let (a, b) = m.forward(ctx, &ctx.p(vi), &ctx.p(ir))?;
                a.mul(&wv)?.add(&b.mul(&wi)?)?.mean_all()
            },
            1e-3,
            Scheme::Richardson,
            None,
        )
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn names_parse() {
        for v in VARIANTS {
            assert_eq!(v.name().parse::<ExchangeVariant>().unwrap(), v);
        }
        assert_eq!("scalar".parse::<CoeffMode>().unwrap(), CoeffMode::Scalar);
        assert!("both".parse::<ExchangeVariant>().is_err());
    }
}
