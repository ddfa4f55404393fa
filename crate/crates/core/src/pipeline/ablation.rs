//! Named ablation variants as configuration edits.

use std::fmt;
use std::str::FromStr;

use super::config::ModelConfig;
use super::data::Pair;
use super::model::build_model;
use super::train::{stack, LossRecord, Trainer};
use crate::error::{Error, Result};
use crate::exchange::ExchangeVariant;
use crate::extract::GuidanceMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Full,
    NoFeatureExtract,
    NoChannelExchange,
    NoSpatialExchange,
    NoDiffGuidance,
    GuideV1,
    GuideV2,
    ExchangeV1,
    ExchangeV2,
    NoResidual,
    /// Exchange module kept, but no B/C swap between modalities.
    NoSsdExchange,
    NoChannelReweight,
}

/// How a variant is expected to differ from the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distinction {
    /// The reference itself.
    Reference,
    /// Removes parameters.
    FewerParameters,
    /// Same parameters, different computation.
    DifferentOutput,
}

impl Ablation {
    pub const ALL: [Ablation; 12] = [
        Ablation::Full,
        Ablation::NoFeatureExtract,
        Ablation::NoChannelExchange,
        Ablation::NoSpatialExchange,
        Ablation::NoDiffGuidance,
        Ablation::GuideV1,
        Ablation::GuideV2,
        Ablation::ExchangeV1,
        Ablation::ExchangeV2,
        Ablation::NoResidual,
        Ablation::NoSsdExchange,
        Ablation::NoChannelReweight,
    ];

    /// The nine ablations compared against the full model: the three module
    /// removals, the three guidance alternatives, the two one-way exchanges
    /// and the residual removal.
    pub const STUDIED: [Ablation; 9] = [
        Ablation::NoFeatureExtract,
        Ablation::NoChannelExchange,
        Ablation::NoSpatialExchange,
        Ablation::NoDiffGuidance,
        Ablation::GuideV1,
        Ablation::GuideV2,
        Ablation::ExchangeV1,
        Ablation::ExchangeV2,
        Ablation::NoResidual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoFeatureExtract => "no_feature_extract",
            Ablation::NoChannelExchange => "no_channel_exchange",
            Ablation::NoSpatialExchange => "no_spatial_exchange",
            Ablation::NoDiffGuidance => "no_diff_guidance",
            Ablation::GuideV1 => "guide_v1",
            Ablation::GuideV2 => "guide_v2",
            Ablation::ExchangeV1 => "exchange_v1",
            Ablation::ExchangeV2 => "exchange_v2",
            Ablation::NoResidual => "no_residual",
            Ablation::NoSsdExchange => "no_ssd_exchange",
            Ablation::NoChannelReweight => "no_channel_reweight",
        }
    }

    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        match self {
            Ablation::Full => {}
            Ablation::NoFeatureExtract => c.feature_extract = false,
            Ablation::NoChannelExchange => c.channel_exchange = false,
            Ablation::NoSpatialExchange => c.spatial_exchange = false,
            Ablation::NoDiffGuidance => c.guidance = GuidanceMode::None,
            Ablation::GuideV1 => c.guidance = GuidanceMode::V1,
            Ablation::GuideV2 => c.guidance = GuidanceMode::V2,
            Ablation::ExchangeV1 => c.exchange_variant = ExchangeVariant::V1,
            Ablation::ExchangeV2 => c.exchange_variant = ExchangeVariant::V2,
            Ablation::NoResidual => c.residual = false,
            Ablation::NoSsdExchange => c.exchange_variant = ExchangeVariant::None,
            Ablation::NoChannelReweight => c.channel_reweight = false,
        }
        c
    }

    pub fn distinction(self) -> Distinction {
        match self {
            Ablation::Full => Distinction::Reference,
            Ablation::NoFeatureExtract | Ablation::NoChannelExchange | Ablation::NoSpatialExchange => {
                Distinction::FewerParameters
            }
            _ => Distinction::DifferentOutput,
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Ablation::ALL.iter().map(|a| a.name()).collect();
            Error::config("variant", format!("unknown ablation {s:?} ({})", names.join(", ")))
        })
    }
}

/// Outcome of a short training run of one variant.
#[derive(Debug, Clone)]
pub struct AblationRun {
    pub variant: Ablation,
    pub parameters: usize,
    /// Fused output of the freshly initialised model on the probe pair.
    pub probe: Vec<f64>,
    pub history: Vec<LossRecord>,
}

impl AblationRun {
    pub fn all_finite(&self) -> bool {
        self.probe.iter().all(|v| v.is_finite())
            && self.history.iter().all(|r| [r.total, r.ssim, r.text, r.int].iter().all(|v| v.is_finite()))
    }

    pub fn last(&self) -> Option<&LossRecord> {
        self.history.last()
    }
}

/// Builds `variant` over `base`, records its output on `probe`, then trains for `steps` steps.
pub fn run_ablation(base: &ModelConfig, variant: Ablation, data: &[Pair], probe: &Pair, steps: u64) -> Result<AblationRun> {
    let model = build_model(&variant.apply(base))?;
    let (ir, vi) = stack(&[probe])?;
    let probe = model.predict(&ir, &vi)?.to_vec();
    let parameters = model.num_parameters();
    let mut trainer = Trainer::new(model);
    trainer.train(data, steps, |_, _| Ok(()))?;
    Ok(AblationRun { variant, parameters, probe, history: trainer.history })
}

/// Tab-separated table of final losses per run.
pub fn format_runs(runs: &[AblationRun]) -> String {
    let mut out = String::from("variant\tparameters\tsteps\ttotal\tssim\ttext\tint\n");
    for r in runs {
        match r.last() {
            Some(l) => out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.variant, r.parameters, r.history.len(), l.total, l.ssim, l.text, l.int
            )),
            None => out.push_str(&format!("{}\t{}\t0\tNA\tNA\tNA\tNA\n", r.variant, r.parameters)),
        }
    }
    out
}
