//! State space machinery: discretisation, the selective scan, 2-D cross
//! scanning and the visual state space block built from them.

mod cross;
mod discretize;
mod scan;
mod vss;

pub use cross::{cross_merge, cross_scan, Route, TokenSequence};
pub use discretize::{discretize, zoh, zoh_phi_grad, Discretized, SERIES_THRESHOLD};
pub use scan::selective_scan;
pub use vss::VssBlock;

use crate::error::Result;
use crate::nn::{Init, Linear};
use crate::tensor::{Ctx, ParamId, Tensor};

/// Initial softplus output of the step-size projection.
pub const DELTA_INIT: f64 = 0.1;

/// Parameters of one selective state space route.
///
/// `a_log` has shape `(1, 1, inner, state)` and stores `log(−A)`; `d` has
/// shape `(1, inner, 1, 1)`. `bc_proj` is absent when `B` and `C` come from
/// elsewhere (the channel exchange computes them jointly with `x`).
#[derive(Debug, Clone)]
pub struct SsmParams {
    pub a_log: ParamId,
    pub d: ParamId,
    pub delta_proj: Linear,
    pub bc_proj: Option<Linear>,
    pub inner: usize,
    pub state: usize,
}

impl SsmParams {
    pub fn new(init: &mut Init, name: &str, inner: usize, state: usize, with_bc: bool) -> Result<Self> {
        let mut s = init.scope(name);
        // −A spans 1..=N along the state index
        let a_init = (0..inner).flat_map(|_| (1..=state).map(|k| (k as f64).ln())).collect();
        let a_log = s.values("a_log", [1, 1, inner, state], a_init)?;
        let d = s.constant("d", [1, inner, 1, 1], 1.0)?;
        let delta_proj = Linear::new(&mut s, "delta_proj", inner, inner, true)?;
        let bias = DELTA_INIT.exp_m1().ln();
        if let Some(b) = delta_proj.bias {
            s.set_all(b, bias);
        }
        let bc_proj = if with_bc { Some(Linear::new(&mut s, "bc_proj", inner, 2 * state, false)?) } else { None };
        Ok(SsmParams { a_log, d, delta_proj, bc_proj, inner, state })
    }

    /// `A = −exp(A_log)`.
    pub fn a(&self, ctx: &Ctx) -> Result<Tensor> {
        ctx.p(self.a_log).exp()?.neg()
    }

    /// `Δ = softplus(delta_proj(x))` for tokens `x` of shape `(B, inner, 1, L)`.
    pub fn delta(&self, ctx: &Ctx, x: &Tensor) -> Result<Tensor> {
        self.delta_proj.forward(ctx, x)?.softplus()
    }

    /// Input-dependent `B` and `C` from this route's own projection.
    pub fn project_bc(&self, ctx: &Ctx, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let proj = self
            .bc_proj
            .as_ref()
            .ok_or_else(|| crate::Error::contract("route has no B/C projection; supply B and C explicitly"))?;
        let bc = proj.forward(ctx, x)?;
        Ok((bc.narrow(1, 0, self.state)?, bc.narrow(1, self.state, self.state)?))
    }

    pub fn scan(&self, ctx: &Ctx, x: &Tensor) -> Result<Tensor> {
        let (b, c) = self.project_bc(ctx, x)?;
        self.scan_with(ctx, x, &b, &c)
    }

    /// Scan `x` with externally supplied `B`, `C` of shape `(B, state, 1, L)`.
    pub fn scan_with(&self, ctx: &Ctx, x: &Tensor, b: &Tensor, c: &Tensor) -> Result<Tensor> {
        let delta = self.delta(ctx, x)?;
        selective_scan(x, &delta, &self.a(ctx)?, b, c, &ctx.p(self.d))
    }
}

/// Scan-core cost over the four routes: `4·B·H·W·D·N`.
pub fn flops_vss(b: u64, h: u64, w: u64, d: u64, n: u64) -> u128 {
    4 * b as u128 * h as u128 * w as u128 * d as u128 * n as u128
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flops_formula() {
        assert_eq!(flops_vss(1, 512, 512, 32, 16), 536_870_912);
        assert_eq!(flops_vss(0, 512, 512, 32, 16), 0);
        assert_eq!(flops_vss(1, 512, 512, 32, 32), 2 * 536_870_912);
    }

    #[test]
    fn initial_parameters() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = SsmParams::new(&mut Init::new(&mut store, &mut rng), "r", 3, 4, true).unwrap();
        let ctx = Ctx::no_grad(&store);
        let a = p.a(&ctx).unwrap();
        assert!(a.data().iter().all(|&v| v < 0.0));
        for (i, v) in a.data()[..4].iter().enumerate() {
            assert!((v + (i + 1) as f64).abs() < 1e-12);
        }
        let zeros = Tensor::zeros([1, 3, 1, 2]);
        let delta = p.delta(&ctx, &zeros).unwrap();
        assert!(delta.data().iter().all(|&v| (v - DELTA_INIT).abs() < 1e-12));
        assert_eq!(store.get(p.a_log).name, "r.a_log");
    }
}
