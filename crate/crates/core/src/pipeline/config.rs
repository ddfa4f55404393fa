//! `key = value` model and training configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::exchange::{CoeffMode, ExchangeVariant};
use crate::extract::GuidanceMode;
use crate::loss::{Aggregate, GradientNorm, LossOptions, LossWeights};
use crate::spatial::ConcatAxis;

/// Seed used when neither the configuration nor `DIFFMF_SEED` provides one.
pub const DEFAULT_SEED: u64 = 2024;

/// Environment variable that overrides [`DEFAULT_SEED`].
pub const SEED_ENV: &str = "DIFFMF_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub state: usize,
    pub expand: usize,
    pub stages: usize,
    pub scales: usize,
    pub guidance: GuidanceMode,
    pub exchange_variant: ExchangeVariant,
    pub feature_extract: bool,
    pub channel_exchange: bool,
    pub spatial_exchange: bool,
    pub residual: bool,
    pub channel_reweight: bool,
    pub shared_projections: bool,
    pub coeff_mode: CoeffMode,
    pub concat_axis: ConcatAxis,
    pub w1: f64,
    pub w2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub aggregate: Aggregate,
    pub gradient_norm: GradientNorm,
    pub lr: f64,
    pub batch: usize,
    pub crop: usize,
    pub epochs: usize,
    /// Total optimisation steps; 0 means `epochs` full passes over the data.
    pub steps: usize,
    pub log_every: usize,
    /// Steps between periodic checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    pub seed: u64,
}

/// Seed from `DIFFMF_SEED`, falling back to [`DEFAULT_SEED`].
pub fn default_seed() -> u64 {
    std::env::var(SEED_ENV).ok().and_then(|s| s.trim().parse().ok()).unwrap_or(DEFAULT_SEED)
}

impl Default for ModelConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        ModelConfig {
            channels: 32,
            state: 16,
            expand: 2,
            stages: 2,
            scales: 3,
            guidance: GuidanceMode::Default,
            exchange_variant: ExchangeVariant::Mutual,
            feature_extract: true,
            channel_exchange: true,
            spatial_exchange: true,
            residual: true,
            channel_reweight: true,
            shared_projections: true,
            coeff_mode: CoeffMode::Pooled,
            concat_axis: ConcatAxis::Width,
            w1: w.w1,
            w2: w.w2,
            lambda1: w.lambda1,
            lambda2: w.lambda2,
            lambda3: w.lambda3,
            aggregate: Aggregate::Max,
            gradient_norm: GradientNorm::L1,
            lr: 2e-5,
            batch: 2,
            crop: 64,
            epochs: 1,
            steps: 0,
            log_every: 10,
            checkpoint_every: 0,
            seed: default_seed(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::config(key, format!("cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(key, format!("expected a boolean, got {value:?}"))),
    }
}

fn parse_enum<T: FromStr<Err = Error>>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|e| match e {
        Error::Config { msg, .. } => Error::config(key, msg),
        other => other,
    })
}

macro_rules! config_keys {
    ($($key:ident: $kind:ident),* $(,)?) => {
        impl ModelConfig {
            /// Every recognised key, in canonical order.
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                let value = value.trim();
                match key {
                    $(stringify!($key) => self.$key = config_keys!(@parse $kind, stringify!($key), value)?,)*
                    _ => return Err(Error::config(key, "unknown configuration key")),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $(stringify!($key) => Some(self.$key.to_string()),)*
                    _ => None,
                }
            }
        }
    };
    (@parse num, $k:expr, $v:expr) => { parse($k, $v) };
    (@parse flag, $k:expr, $v:expr) => { parse_bool($k, $v) };
    (@parse choice, $k:expr, $v:expr) => { parse_enum($k, $v) };
}

config_keys! {
    channels: num, state: num, expand: num, stages: num, scales: num,
    guidance: choice, exchange_variant: choice,
    feature_extract: flag, channel_exchange: flag, spatial_exchange: flag,
    residual: flag, channel_reweight: flag, shared_projections: flag,
    coeff_mode: choice, concat_axis: choice,
    w1: num, w2: num, lambda1: num, lambda2: num, lambda3: num,
    aggregate: choice, gradient_norm: choice,
    lr: num, batch: num, crop: num, epochs: num, steps: num,
    log_every: num, checkpoint_every: num, seed: num,
}

impl ModelConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(&format!("line {}", n + 1), format!("expected key = value, got {line:?}")))?;
            cfg.set(key.trim(), value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ModelConfig::parse(&text).map_err(|e| Error::in_file(path, e))
    }

    /// Canonical text; `parse(to_text())` reproduces the configuration exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v, min) in [
            ("channels", self.channels, 1),
            ("state", self.state, 1),
            ("expand", self.expand, 1),
            ("stages", self.stages, 1),
            ("scales", self.scales, 1),
            ("batch", self.batch, 1),
            ("epochs", self.epochs, 1),
            ("log_every", self.log_every, 1),
            ("crop", self.crop, 6),
        ] {
            if v < min {
                return Err(Error::config(key, format!("must be at least {min}, got {v}")));
            }
        }
        if self.scales > 3 {
            return Err(Error::config("scales", format!("at most 3 pyramid levels, got {}", self.scales)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", format!("must be a non-negative number, got {}", self.lr)));
        }
        self.loss_weights().validate()
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { w1: self.w1, w2: self.w2, lambda1: self.lambda1, lambda2: self.lambda2, lambda3: self.lambda3 }
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions { aggregate: self.aggregate, gradient: self.gradient_norm }
    }

    /// Small configuration used by the gradient suite and quick tests.
    pub fn tiny() -> Self {
        ModelConfig { channels: 2, state: 4, expand: 1, stages: 1, scales: 3, ..ModelConfig::default() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = ModelConfig::default();
        cfg.set("guidance", "v2").unwrap();
        cfg.set("lr", "0.001").unwrap();
        cfg.set("spatial_exchange", "false").unwrap();
        let back = ModelConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), cfg.to_text());
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = ModelConfig::parse("# desk\n\nchannels = 8  # narrow\nstate=4\n").unwrap();
        assert_eq!((cfg.channels, cfg.state), (8, 4));
    }

    #[test]
    fn errors_name_the_field() {
        let field = |text: &str| match ModelConfig::parse(text) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        assert_eq!(field("channels = 0"), "channels");
        assert_eq!(field("state = x"), "state");
        assert_eq!(field("guidance = sideways"), "guidance");
        assert_eq!(field("colour = red"), "colour");
        assert_eq!(field("lambda1 = -1"), "lambda1");
        assert_eq!(field("residual = maybe"), "residual");
        assert_eq!(field("scales = 4"), "scales");
    }

    #[test]
    fn every_key_reads_back() {
        let cfg = ModelConfig::default();
        for key in ModelConfig::KEYS {
            let v = cfg.get(key).unwrap();
            let mut c = cfg.clone();
            c.set(key, &v).unwrap();
            assert_eq!(c, cfg, "{key}");
        }
    }
}
