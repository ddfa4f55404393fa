//! Adam and the training loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::Pair;
use super::model::{luma_tensor, Model};
use crate::error::{Error, Result};
use crate::loss::loss_total;
use crate::tensor::{Ctx, ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed update steps.
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Adam { lr, beta1: Self::BETA1, beta2: Self::BETA2, eps: Self::EPS, t: 0, m: zeros.clone(), v: zeros }
    }

    /// Applies one bias-corrected update from the gradients in `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::shape(format!("optimizer tracks {} tensors, model has {}", self.m.len(), store.len())));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powf(self.t as f64);
        let c2 = 1.0 - self.beta2.powf(self.t as f64);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if m.len() != p.value.len() {
                return Err(Error::shape(format!("optimizer moments for `{}` have the wrong length", p.name)));
            }
            for i in 0..m.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                p.value[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub total: f64,
    pub ssim: f64,
    pub text: f64,
    pub int: f64,
}

pub const LOSS_LOG_HEADER: &str = "step\ttotal\tssim\ttext\tint";

impl LossRecord {
    /// One tab-separated row; values print with round-trip precision.
    pub fn to_row(&self) -> String {
        format!("{}\t{}\t{}\t{}\t{}", self.step, self.total, self.ssim, self.text, self.int)
    }
}

pub fn format_loss_log(records: &[LossRecord]) -> String {
    let mut out = format!("{LOSS_LOG_HEADER}\n");
    for r in records {
        let _ = writeln!(out, "{}", r.to_row());
    }
    out
}

/// Stacks same-sized pairs into `(B, 1, H, W)` infrared and `(B, 3, H, W)` visible tensors.
pub fn stack(pairs: &[&Pair]) -> Result<(Tensor, Tensor)> {
    let first = pairs.first().ok_or_else(|| Error::Input("empty batch".into()))?;
    let (w, h) = first.size();
    if let Some(p) = pairs.iter().find(|p| p.size() != (w, h)) {
        return Err(Error::Input(format!("batch mixes {w}×{h} and {:?} pairs ({})", p.size(), p.name)));
    }
    let irs: Vec<Tensor> = pairs.iter().map(|p| p.ir.to_tensor()).collect::<Result<_>>()?;
    let vis: Vec<Tensor> = pairs.iter().map(|p| p.vi.to_tensor()).collect::<Result<_>>()?;
    Ok((Tensor::concat(&irs.iter().collect::<Vec<_>>(), 0)?, Tensor::concat(&vis.iter().collect::<Vec<_>>(), 0)?))
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

pub struct Trainer {
    pub model: Model,
    pub adam: Adam,
    pub history: Vec<LossRecord>,
}

impl Trainer {
    pub fn new(model: Model) -> Self {
        let adam = Adam::new(&model.store, model.config.lr);
        Trainer { model, adam, history: Vec::new() }
    }

    /// Continues from restored optimizer state.
    pub fn resume(model: Model, adam: Adam) -> Self {
        Trainer { model, adam, history: Vec::new() }
    }

    pub fn steps_per_epoch(&self, data: &[Pair]) -> usize {
        data.len().div_ceil(self.model.config.batch)
    }

    /// Step budget: `steps` when set, otherwise `epochs` passes over the data.
    pub fn planned_steps(&self, data: &[Pair]) -> usize {
        match self.model.config.steps {
            0 => self.model.config.epochs * self.steps_per_epoch(data),
            n => n,
        }
    }

    /// Batch for step `step`: a seeded per-epoch shuffle, then a seeded random
    /// square crop of side `min(crop, smallest extent in the batch)`. Depends
    /// only on the seed and the step index, so resumed runs see the same data.
    pub fn batch(&self, data: &[Pair], step: u64) -> Result<(Tensor, Tensor)> {
        if data.is_empty() {
            return Err(Error::Input("training set is empty".into()));
        }
        let cfg = &self.model.config;
        let spe = self.steps_per_epoch(data) as u64;
        let (epoch, pos) = (step / spe, (step % spe) as usize);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch, 1)));
        let chosen: Vec<&Pair> = order.iter().skip(pos * cfg.batch).take(cfg.batch).map(|&i| &data[i]).collect();
        let side = chosen.iter().map(|p| p.size().0.min(p.size().1)).min().unwrap_or(0).min(cfg.crop);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, step, 2));
        let crops: Vec<Pair> = chosen
            .iter()
            .map(|p| {
                let (w, h) = p.size();
                let (x0, y0) = (rng.gen_range(0..=w - side), rng.gen_range(0..=h - side));
                crop_at(p, x0, y0, side)
            })
            .collect::<Result<_>>()?;
        stack(&crops.iter().collect::<Vec<_>>())
    }

    /// One forward, loss, backward and Adam update. The tape checks every
    /// recorded op for non-finite output, so a diverging run stops at the
    /// first offending op.
    pub fn step_on(&mut self, ir: &Tensor, vi: &Tensor) -> Result<LossRecord> {
        let cfg = &self.model.config;
        let step = self.adam.t;
        let loss = {
            let ctx = Ctx::new(&self.model.store);
            ctx.tape().set_check_finite(true);
            let fused = self.model.net.forward(&ctx, ir, vi)?;
            loss_total(&fused, ir, &luma_tensor(vi)?, &cfg.loss_weights(), cfg.loss_options())
        }
        .map_err(|e| {
            log::error!("step {step}: forward pass failed: {e}");
            e
        })?;
        let record = LossRecord {
            step,
            total: loss.total.item()?,
            ssim: loss.ssim.item()?,
            text: loss.text.item()?,
            int: loss.int.item()?,
        };
        self.model.store.zero_grad();
        loss.total.backward(&mut self.model.store)?;
        if let Some(p) = self.model.store.iter().find(|p| p.grad.iter().any(|g| !g.is_finite())) {
            let msg = format!("non-finite gradient for parameter `{}` at step {step}", p.name);
            log::error!("{msg}");
            return Err(Error::Stability(msg));
        }
        self.adam.step(&mut self.model.store)?;
        self.history.push(record);
        Ok(record)
    }

    /// Trains until `self.adam.t` reaches `until`, calling `hook` after every step.
    pub fn train<F>(&mut self, data: &[Pair], until: u64, mut hook: F) -> Result<()>
    where
        F: FnMut(&Trainer, &LossRecord) -> Result<()>,
    {
        while self.adam.t < until {
            let (ir, vi) = self.batch(data, self.adam.t)?;
            let rec = self.step_on(&ir, &vi)?;
            if rec.step % self.model.config.log_every as u64 == 0 {
                log::info!(
                    "step {}: total {:.6} (ssim {:.6}, text {:.6}, int {:.6})",
                    rec.step,
                    rec.total,
                    rec.ssim,
                    rec.text,
                    rec.int
                );
            }
            hook(self, &rec)?;
        }
        Ok(())
    }
}

fn crop_at(p: &Pair, x0: usize, y0: usize, side: usize) -> Result<Pair> {
    let ir = crate::image::GrayImage::from_fn(side, side, |x, y| p.ir.get(x0 + x, y0 + y));
    let mut vi = Vec::with_capacity(side * side * 3);
    for y in y0..y0 + side {
        let row = (y * p.vi.width + x0) * 3;
        vi.extend_from_slice(&p.vi.data[row..row + side * 3]);
    }
    Ok(Pair { name: p.name.clone(), ir, vi: crate::image::RgbImage::new(side, side, vi)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::config::ModelConfig;
    use crate::pipeline::data::synthetic_pair;
    use crate::pipeline::model::build_model;

    fn quick() -> ModelConfig {
        ModelConfig { crop: 8, batch: 2, lr: 1e-3, ..ModelConfig::tiny() }
    }

    #[test]
    fn adam_matches_hand_computation() {
        let mut store = ParamStore::new();
        let id = store.add("p", [1, 1, 1, 1], vec![1.0]).unwrap();
        let mut adam = Adam::new(&store, 0.1);
        store.get_mut(id).grad[0] = 2.0;
        adam.step(&mut store).unwrap();
        // First step: m̂ = g, v̂ = g², update = lr·g/(|g| + ε).
        assert!((store.get(id).value[0] - (1.0 - 0.1 * 2.0 / (2.0 + 1e-8))).abs() < 1e-15);
        store.get_mut(id).grad[0] = -1.0;
        adam.step(&mut store).unwrap();
        let (m, v) = (0.9 * 0.2 + 0.1 * -1.0, 0.999 * 0.004 + 0.001 * 1.0);
        let (mh, vh) = (m / (1.0 - 0.81), v / (1.0 - 0.999f64 * 0.999));
        let want = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8) - 0.1 * mh / (vh.sqrt() + 1e-8);
        assert!((store.get(id).value[0] - want).abs() < 1e-14);
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let data = vec![synthetic_pair(10, 1), synthetic_pair(10, 2)];
        let mut t = Trainer::new(build_model(&ModelConfig { lr: 0.0, ..quick() }).unwrap());
        let before: Vec<Vec<f64>> = t.model.store.iter().map(|p| p.value.clone()).collect();
        t.train(&data, 3, |_, _| Ok(())).unwrap();
        assert!(t.model.store.iter().zip(&before).all(|(p, b)| &p.value == b));
        assert_eq!(t.history.len(), 3);
    }

    #[test]
    fn same_seed_same_history() {
        let data = vec![synthetic_pair(12, 1), synthetic_pair(12, 2), synthetic_pair(10, 3)];
        let run = || {
            let mut t = Trainer::new(build_model(&quick()).unwrap());
            t.train(&data, 4, |_, _| Ok(())).unwrap();
            format_loss_log(&t.history)
        };
        let a = run();
        assert_eq!(a, run());
        assert_eq!(a.lines().count(), 5);
        assert!(a.starts_with(LOSS_LOG_HEADER));
    }

    #[test]
    fn batches_depend_only_on_step() {
        let data = vec![synthetic_pair(12, 1), synthetic_pair(9, 2), synthetic_pair(14, 3)];
        let t = Trainer::new(build_model(&quick()).unwrap());
        let (a, b) = (t.batch(&data, 5).unwrap(), t.batch(&data, 5).unwrap());
        assert_eq!(a.0.data(), b.0.data());
        assert_eq!(a.1.shape()[1], 3);
        assert!(a.0.shape()[2] <= 8);
        // The last batch of an epoch holds the leftover pair.
        assert_eq!(t.batch(&data, 1).unwrap().0.shape()[0], 1);
    }

    #[test]
    fn non_finite_loss_names_an_op() {
        let data = vec![synthetic_pair(8, 1)];
        let mut t = Trainer::new(build_model(&quick()).unwrap());
        let id = t.model.store.id("decoder.out.bias").unwrap();
        t.model.store.get_mut(id).value[0] = f64::NAN;
        let (ir, vi) = t.batch(&data, 0).unwrap();
        match t.step_on(&ir, &vi) {
            Err(Error::NonFinite { op, .. }) => assert!(!op.is_empty()),
            other => panic!("{other:?}"),
        }
    }
}
