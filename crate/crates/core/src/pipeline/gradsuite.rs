//! The finite-difference gradient suite: every differentiable op, every
//! composite module and the end-to-end model against numeric derivatives.
//!
//! Single ops are probed with `mean(op(p) ⊙ w)` for a fixed random `w` and
//! checked with central differences at `ε = 1e-4`. Composite modules and the
//! full model use Ridders extrapolation starting from a step of
//! [`RIDDERS_START`] (see [`Scheme::Ridders`]); the model case uses the actual
//! fusion loss.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::data::{synthetic_pair, Pair};
use super::model::{build_model, luma_tensor};
use crate::error::Result;
use crate::exchange::{ChannelExchange, CoeffMode, ExchangeFlags};
use crate::extract::{GuidanceMode, Stem, Stage};
use crate::gradcheck::{grad_check_with, GradCheckReport, Scheme};
use crate::loss::{loss_ssim, loss_total, sobel_magnitude, GradientNorm, LossOptions, LossWeights};
use crate::nn::Init;
use crate::spatial::{ConcatAxis, Decoder, SssBlock};
use crate::ssm::{selective_scan, VssBlock};
use crate::tensor::{Ctx, ParamId, ParamStore, Shape, Tensor};

/// First step of the extrapolated check used for composite cases.
pub const RIDDERS_START: f64 = 0.128;

/// Relative-error bound every case must meet.
pub const SUITE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct SuiteCase {
    pub name: &'static str,
    pub scheme: Scheme,
    pub epsilon: f64,
    pub report: GradCheckReport,
    pub elapsed: Duration,
}

impl SuiteCase {
    pub fn passes(&self) -> bool {
        self.report.passes(SUITE_TOLERANCE)
    }
}

fn random(shape: Shape, seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// `mean(t ⊙ w)` with `w` fixed by the shape of `t`.
fn probe(t: &Tensor) -> Result<Tensor> {
    let s = t.shape();
    let seed = s.iter().fold(17u64, |h, &d| h.wrapping_mul(31).wrapping_add(d as u64));
    t.mul(&random(s, seed, -1.0, 1.0))?.mean_all()
}

/// Values in `±[lo, hi]`, away from the kink of `abs` and friends.
fn signed_away_from_zero(shape: Shape, seed: u64, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..crate::tensor::numel(shape))
        .map(|_| {
            let m = rng.gen_range(lo..hi);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

struct Case {
    name: &'static str,
    scheme: Scheme,
    epsilon: f64,
    store: ParamStore,
    loss: Box<dyn Fn(&Ctx) -> Result<Tensor>>,
}

fn op(name: &'static str, store: ParamStore, loss: impl Fn(&Ctx) -> Result<Tensor> + 'static) -> Case {
    Case { name, scheme: Scheme::Central, epsilon: 1e-4, store, loss: Box::new(loss) }
}

fn module(name: &'static str, store: ParamStore, loss: impl Fn(&Ctx) -> Result<Tensor> + 'static) -> Case {
    Case { name, scheme: Scheme::Ridders, epsilon: RIDDERS_START, store, loss: Box::new(loss) }
}

fn params(specs: &[(&str, Shape, f64, f64)]) -> (ParamStore, Vec<ParamId>) {
    let mut store = ParamStore::new();
    let ids = specs
        .iter()
        .enumerate()
        .map(|(i, &(name, shape, lo, hi))| {
            store.add(name, shape, random(shape, 100 + i as u64, lo, hi).to_vec()).expect("distinct names")
        })
        .collect();
    (store, ids)
}

fn unary_cases() -> Vec<Case> {
    let shape = [2, 3, 2, 2];
    let mut out = Vec::new();
    let table: [(&'static str, fn(&Tensor) -> Result<Tensor>, f64, f64); 9] = [
        ("tanh", Tensor::tanh, -2.0, 2.0),
        ("sigmoid", Tensor::sigmoid, -3.0, 3.0),
        ("softplus", Tensor::softplus, -3.0, 3.0),
        ("exp", Tensor::exp, -1.0, 1.0),
        ("silu", Tensor::silu, -3.0, 3.0),
        ("neg", Tensor::neg, -1.0, 1.0),
        ("sqrt", Tensor::sqrt, 0.5, 2.0),
        ("square", Tensor::square, -1.0, 1.0),
        ("scalar_ops", |t| t.affine(1.5, -0.2)?.mul_scalar(0.7)?.add_scalar(0.3)?.one_minus(), -1.0, 1.0),
    ];
    for (name, f, lo, hi) in table {
        let (store, ids) = params(&[("x", shape, lo, hi)]);
        let x = ids[0];
        out.push(op(name, store, move |ctx| probe(&f(&ctx.p(x))?)));
    }
    let mut store = ParamStore::new();
    let x = store.add("x", shape, signed_away_from_zero(shape, 7, 0.2, 1.0)).expect("fresh store");
    out.push(op("abs", store, move |ctx| probe(&ctx.p(x).abs()?)));
    out
}

fn binary_cases() -> Vec<Case> {
    let mut out = Vec::new();
    let table: [(&'static str, fn(&Tensor, &Tensor) -> Result<Tensor>, Shape, f64, f64); 4] = [
        ("add_broadcast", Tensor::add, [1, 3, 1, 1], -1.0, 1.0),
        ("sub", Tensor::sub, [2, 3, 2, 2], -1.0, 1.0),
        ("mul_broadcast", Tensor::mul, [2, 1, 2, 2], -1.0, 1.0),
        ("div", Tensor::div, [2, 3, 2, 2], 0.5, 2.0),
    ];
    for (name, f, b_shape, lo, hi) in table {
        let (store, ids) = params(&[("a", [2, 3, 2, 2], -1.0, 1.0), ("b", b_shape, lo, hi)]);
        let (a, b) = (ids[0], ids[1]);
        out.push(op(name, store, move |ctx| probe(&f(&ctx.p(a), &ctx.p(b))?)));
    }
    // maximum with inputs at least 0.2 apart
    let shape = [2, 3, 2, 2];
    let mut store = ParamStore::new();
    let a_vals = random(shape, 1, -1.0, 1.0).to_vec();
    let gap = signed_away_from_zero(shape, 2, 0.2, 0.8);
    let b_vals = a_vals.iter().zip(&gap).map(|(a, g)| a + g).collect();
    let a = store.add("a", shape, a_vals).expect("fresh store");
    let b = store.add("b", shape, b_vals).expect("fresh store");
    out.push(op("maximum", store, move |ctx| probe(&ctx.p(a).maximum(&ctx.p(b))?)));
    out
}

fn reduction_and_layout_cases() -> Vec<Case> {
    let mut out = Vec::new();
    let shape = [2, 3, 4, 4];
    let table: [(&'static str, fn(&Tensor) -> Result<Tensor>); 10] = [
        ("sum_all", |t| t.sum_all()?.mul_scalar(0.1)),
        ("mean_all", |t| t.square()?.mean_all()),
        ("mean_spatial", |t| probe(&t.mean_spatial()?)),
        ("reshape", |t| probe(&t.reshape([3, 2, 8, 2])?)),
        ("gather_spatial", |t| probe(&t.gather_spatial(&[5, 0, 15, 3, 3, 9], 2, 3)?)),
        ("gather_channels", |t| probe(&t.gather_channels(&[2, 0, 0, 1])?)),
        ("narrow", |t| probe(&t.narrow(2, 1, 2)?)),
        ("pad_reflect", |t| probe(&t.pad_reflect(2)?)),
        ("avg_pool2", |t| probe(&t.avg_pool2()?)),
        ("resize_nearest", |t| probe(&t.resize_nearest(7, 3)?)),
    ];
    for (name, f) in table {
        let (store, ids) = params(&[("x", shape, -1.0, 1.0)]);
        let x = ids[0];
        out.push(op(name, store, move |ctx| f(&ctx.p(x))));
    }
    let (store, ids) = params(&[("a", [2, 3, 4, 4], -1.0, 1.0), ("b", [2, 1, 4, 4], -1.0, 1.0), ("c", [2, 3, 4, 2], -1.0, 1.0)]);
    let (a, b, c) = (ids[0], ids[1], ids[2]);
    out.push(op("concat", store, move |ctx| {
        let ch = Tensor::concat(&[&ctx.p(a), &ctx.p(b)], 1)?;
        let wd = Tensor::concat(&[&ctx.p(a), &ctx.p(c)], 3)?;
        probe(&ch)?.add(&probe(&wd)?)
    }));
    out
}

fn conv_cases() -> Vec<Case> {
    let mut out = Vec::new();
    let (store, ids) = params(&[("x", [2, 3, 5, 5], -1.0, 1.0), ("k", [4, 3, 3, 3], -0.5, 0.5), ("bias", [1, 4, 1, 1], -0.5, 0.5)]);
    let (x, k, b) = (ids[0], ids[1], ids[2]);
    out.push(op("conv2d", store, move |ctx| {
        let same = ctx.p(x).conv2d(&ctx.p(k), Some(&ctx.p(b)), 1, 1)?;
        let strided = ctx.p(x).conv2d(&ctx.p(k), None, 2, 0)?;
        probe(&same)?.add(&probe(&strided)?)
    }));
    let (store, ids) = params(&[("x", [2, 3, 5, 4], -1.0, 1.0), ("k", [3, 1, 3, 3], -0.5, 0.5), ("bias", [1, 3, 1, 1], -0.5, 0.5)]);
    let (x, k, b) = (ids[0], ids[1], ids[2]);
    out.push(op("depthwise_conv2d", store, move |ctx| probe(&ctx.p(x).depthwise_conv2d(&ctx.p(k), Some(&ctx.p(b)), 1)?)));
    let (store, ids) = params(&[("x", [2, 3, 2, 3], -1.0, 1.0), ("w", [5, 3, 1, 1], -0.5, 0.5), ("bias", [1, 5, 1, 1], -0.5, 0.5)]);
    let (x, w, b) = (ids[0], ids[1], ids[2]);
    out.push(op("linear", store, move |ctx| probe(&ctx.p(x).linear(&ctx.p(w), Some(&ctx.p(b)))?)));
    let (store, ids) = params(&[("x", [2, 4, 3, 3], -1.0, 1.0), ("gamma", [1, 4, 1, 1], 0.5, 1.5), ("beta", [1, 4, 1, 1], -0.5, 0.5)]);
    let (x, g, b) = (ids[0], ids[1], ids[2]);
    out.push(op("channel_norm", store, move |ctx| probe(&ctx.p(x).channel_norm(&ctx.p(g), &ctx.p(b), 1e-5)?)));
    out
}

fn scan_case() -> Case {
    let (ci, n, l) = (3, 4, 9);
    let (store, ids) = params(&[
        ("x", [2, ci, 1, l], -1.0, 1.0),
        ("delta_raw", [2, ci, 1, l], -2.0, 0.0),
        ("a_log", [1, 1, ci, n], -0.5, 1.0),
        ("b", [2, n, 1, l], -1.0, 1.0),
        ("c", [2, n, 1, l], -1.0, 1.0),
        ("d", [1, ci, 1, 1], -1.0, 1.0),
    ]);
    let [x, dr, al, b, c, d] = ids[..] else { unreachable!() };
    op("selective_scan", store, move |ctx| {
        let delta = ctx.p(dr).softplus()?;
        let a = ctx.p(al).exp()?.neg()?;
        probe(&selective_scan(&ctx.p(x), &delta, &a, &ctx.p(b), &ctx.p(c), &ctx.p(d))?)
    })
}

fn loss_cases() -> Vec<Case> {
    let shape = [1, 1, 12, 12];
    let ir = random(shape, 11, 0.0, 1.0);
    let vi = random(shape, 12, 0.0, 1.0);
    let mut out = Vec::new();
    {
        let (store, ids) = params(&[("f", shape, 0.1, 0.9)]);
        let (f, ir, vi) = (ids[0], ir.clone(), vi.clone());
        out.push(op("ssim_loss", store, move |ctx| loss_ssim(&ctx.p(f), &ir, &vi, 0.5, 0.5)));
    }
    for (name, norm) in [("sobel_l1", GradientNorm::L1), ("sobel_l2", GradientNorm::L2)] {
        let (store, ids) = params(&[("f", shape, 0.1, 0.9)]);
        let f = ids[0];
        out.push(op(name, store, move |ctx| probe(&sobel_magnitude(&ctx.p(f), norm)?)));
    }
    let (store, ids) = params(&[("f", shape, 0.1, 0.9)]);
    let f = ids[0];
    out.push(op("loss_total", store, move |ctx| {
        Ok(loss_total(&ctx.p(f), &ir, &vi, &LossWeights::default(), LossOptions::default())?.total)
    }));
    out
}

fn with_init<T>(seed: u64, build: impl FnOnce(&mut Init) -> Result<T>) -> Result<(ParamStore, T)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let value = build(&mut Init::new(&mut store, &mut rng))?;
    Ok((store, value))
}

fn module_cases() -> Result<Vec<Case>> {
    let mut out = Vec::new();
    let x = random([1, 4, 4, 4], 21, -1.0, 1.0);
    let (store, block) = with_init(1, |i| VssBlock::new(i, "vss", 4, 2, 4))?;
    out.push(module("vss_block", store, move |ctx| probe(&block.forward(ctx, &x)?)));

    let ir = random([1, 1, 6, 6], 22, 0.0, 1.0);
    let vi = random([1, 3, 6, 6], 23, 0.0, 1.0);
    let (store, (stem, stage)) = with_init(2, |i| Ok((Stem::new(i, 2)?, Stage::new(i, "stage", 2, 2, 4)?)))?;
    out.push(module("extraction_stage", store, move |ctx| {
        let (s, _) = stage.step(ctx, stem.embed(ctx, &ir, &vi)?, GuidanceMode::Default)?;
        probe(&s.vi_self)?.add(&probe(&s.ir_self.mul_scalar(0.5)?)?)
    }));

    let (f_vi, f_ir) = (random([1, 2, 4, 4], 24, -1.0, 1.0), random([1, 2, 4, 4], 25, -1.0, 1.0));
    let (store, ex) = with_init(3, |i| ChannelExchange::new(i, 2, 4, true, CoeffMode::Pooled, ExchangeFlags::default()))?;
    out.push(module("channel_exchange", store, move |ctx| {
        let (v, r) = ex.forward(ctx, &f_vi, &f_ir)?;
        probe(&v)?.add(&probe(&r.mul_scalar(0.5)?)?)
    }));

    let (m_ir, m_vi) = (random([1, 2, 4, 4], 26, -1.0, 1.0), random([1, 2, 4, 4], 27, -1.0, 1.0));
    let (store, sss) = with_init(4, |i| SssBlock::new(i, "sss", 2, 1, 4, ConcatAxis::Width))?;
    out.push(module("sss_block", store, move |ctx| probe(&sss.forward(ctx, &m_ir, &m_vi)?)));

    let m = random([1, 2, 5, 5], 28, -1.0, 1.0);
    let (store, dec) = with_init(5, |i| Decoder::new(i, 2))?;
    out.push(module("decoder", store, move |ctx| probe(&dec.forward(ctx, &m)?)));
    Ok(out)
}

/// The model configuration of the end-to-end case: `C = 2`, `N = 4`.
pub fn end_to_end_config() -> ModelConfig {
    ModelConfig { channels: 2, state: 4, expand: 1, stages: 2, scales: 3, seed: 53, ..ModelConfig::default() }
}

/// The model is non-smooth where a difference-mask argument, an interior
/// Sobel component of the output or an intensity residual crosses zero. The
/// seed and the probe pair are chosen so that all of them stay well clear of
/// zero, which keeps every finite-difference step on one smooth piece.
fn end_to_end_probe() -> Pair {
    synthetic_pair(8, 0)
}

fn end_to_end_case() -> Result<Case> {
    let cfg = end_to_end_config();
    let model = build_model(&cfg)?;
    let pair = end_to_end_probe();
    let (ir, vi) = (pair.ir.to_tensor()?, pair.vi.to_tensor()?);
    let y = luma_tensor(&vi)?;
    let (w, opts) = (cfg.loss_weights(), cfg.loss_options());
    let net = model.net;
    Ok(module("end_to_end", model.store, move |ctx| Ok(loss_total(&net.forward(ctx, &ir, &vi)?, &ir, &y, &w, opts)?.total)))
}

/// Names of every case, in run order.
pub fn suite_names() -> Result<Vec<&'static str>> {
    Ok(all_cases()?.iter().map(|c| c.name).collect())
}

fn all_cases() -> Result<Vec<Case>> {
    let mut cases = unary_cases();
    cases.extend(binary_cases());
    cases.extend(reduction_and_layout_cases());
    cases.extend(conv_cases());
    cases.push(scan_case());
    cases.extend(loss_cases());
    cases.extend(module_cases()?);
    cases.push(end_to_end_case()?);
    Ok(cases)
}

/// Runs every case whose name satisfies `select`.
pub fn run_gradient_suite(select: impl Fn(&str) -> bool) -> Result<Vec<SuiteCase>> {
    let mut results = Vec::new();
    for mut case in all_cases()?.into_iter().filter(|c| select(c.name)) {
        let start = Instant::now();
        let report = grad_check_with(&mut case.store, &case.loss, case.epsilon, case.scheme, None)?;
        results.push(SuiteCase {
            name: case.name,
            scheme: case.scheme,
            epsilon: case.epsilon,
            report,
            elapsed: start.elapsed(),
        });
    }
    Ok(results)
}

/// Tab-separated summary with one row per case.
pub fn format_suite(results: &[SuiteCase]) -> String {
    let mut out = String::from("case\tscheme\tepsilon\tcoordinates\tmax_rel_error\tworst\tseconds\tstatus\n");
    for r in results {
        let worst = r.report.worst.as_ref().map(|(n, i)| format!("{n}[{i}]")).unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{}\t{:?}\t{:e}\t{}\t{:.3e}\t{worst}\t{:.2}\t{}\n",
            r.name,
            r.scheme,
            r.epsilon,
            r.report.coordinates,
            r.report.max_rel_error,
            r.elapsed.as_secs_f64(),
            if r.passes() { "pass" } else { "FAIL" }
        ));
    }
    out
}
