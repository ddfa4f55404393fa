//! Analytic FLOP counts of every scanning block, next to the cost of
//! hypothetical self-attention over the same tokens.

use std::fmt::Write as _;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::spatial::{scale_count, ConcatAxis};
use crate::ssm::flops_vss;

/// `4·B·(H·W)²·D`
pub fn flops_attention(b: u64, h: u64, w: u64, d: u64) -> u128 {
    let l = h as u128 * w as u128;
    4 * b as u128 * l * l * d as u128
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlopRow {
    pub block: String,
    pub batch: u64,
    pub height: u64,
    pub width: u64,
    /// Channels the scan runs over.
    pub dim: u64,
    pub state: u64,
    pub scan: u128,
    pub attention: u128,
}

impl FlopRow {
    fn new(block: String, batch: u64, height: u64, width: u64, dim: u64, state: u64) -> Self {
        FlopRow {
            block,
            batch,
            height,
            width,
            dim,
            state,
            scan: flops_vss(batch, height, width, dim, state),
            attention: flops_attention(batch, height, width, dim),
        }
    }

    /// Checks `attention · N = scan · H·W` in exact integer arithmetic.
    pub fn ratio_is_hw_over_n(&self) -> bool {
        self.attention * self.state as u128 == self.scan * (self.height as u128 * self.width as u128)
    }

    /// `H·W / N` reduced to lowest terms.
    pub fn ratio(&self) -> (u128, u128) {
        let (mut a, mut b) = (self.height as u128 * self.width as u128, self.state as u128);
        let (mut x, mut y) = (a, b);
        while y != 0 {
            (x, y) = (y, x % y);
        }
        if x > 1 {
            a /= x;
            b /= x;
        }
        (a, b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlopReport {
    pub rows: Vec<FlopRow>,
}

impl FlopReport {
    pub fn total_scan(&self) -> u128 {
        self.rows.iter().map(|r| r.scan).sum()
    }

    pub fn total_attention(&self) -> u128 {
        self.rows.iter().map(|r| r.attention).sum()
    }

    /// Tab-separated table with a header row and a closing total row.
    pub fn to_table(&self) -> String {
        let mut out = String::from("block\tB\tH\tW\tD\tN\tscan_4BHWDN\tattention_4B(HW)^2D\tratio_HW/N\tratio_exact\n");
        for r in &self.rows {
            let (num, den) = r.ratio();
            let ratio = if den == 1 { num.to_string() } else { format!("{num}/{den}") };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{ratio}\t{}",
                r.block,
                r.batch,
                r.height,
                r.width,
                r.dim,
                r.state,
                r.scan,
                r.attention,
                r.ratio_is_hw_over_n()
            );
        }
        let _ = writeln!(out, "total\t\t\t\t\t\t{}\t{}\t\t", self.total_scan(), self.total_attention());
        out
    }
}

/// Parses `B,C,H,W`.
pub fn parse_shape(s: &str) -> Result<[u64; 4]> {
    let parts: Vec<u64> = s
        .split(',')
        .map(|p| p.trim().parse::<u64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::config("shape", format!("expected B,C,H,W, got {s:?}")))?;
    match parts[..] {
        [b, c, h, w] if b > 0 && c > 0 && h > 0 && w > 0 => Ok([b, c, h, w]),
        _ => Err(Error::config("shape", format!("expected four positive extents B,C,H,W, got {s:?}"))),
    }
}

/// One row per scanning-block invocation of the model built from `config`
/// on input `(B, _, H, W)`.
pub fn flops_report(config: &ModelConfig, shape: [u64; 4]) -> Result<FlopReport> {
    config.validate()?;
    let [b, _, h, w] = shape;
    let (c, n, e) = (config.channels as u64, config.state as u64, config.expand as u64);
    let mut rows = Vec::new();
    if config.feature_extract {
        for s in 0..config.stages {
            for block in ["vi_self", "ir_self", "share_vss(vi)", "share_vss(ir)"] {
                rows.push(FlopRow::new(format!("extract.stage{s}.{block}"), b, h, w, e * c, n));
            }
        }
    }
    if config.channel_exchange {
        for m in ["vi", "ir"] {
            rows.push(FlopRow::new(format!("exchange.ssd({m})"), b, h, w, c, n));
        }
    }
    if config.spatial_exchange {
        let levels = scale_count(h as usize, w as usize, config.scales);
        let (mut hs, mut ws) = (h, w);
        for s in 0..levels {
            rows.push(FlopRow::new(format!("spatial.scale{s}.column"), b, hs, ws, e * 2 * c, n));
            rows.push(FlopRow::new(format!("spatial.scale{s}.row"), b, hs, ws, e * 2 * c, n));
            rows.push(match config.concat_axis {
                ConcatAxis::Width => FlopRow::new(format!("spatial.scale{s}.concat"), b, hs, 2 * ws, e * c, n),
                ConcatAxis::Channel => FlopRow::new(format!("spatial.scale{s}.concat"), b, hs, ws, e * 2 * c, n),
            });
            (hs, ws) = (hs / 2, ws / 2);
        }
    }
    Ok(FlopReport { rows })
}
