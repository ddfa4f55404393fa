//! FLOP table of the default model at 512×512, scan against attention.

use diffmf::pipeline::{flops_report, ModelConfig};

fn main() -> diffmf::Result<()> {
    let report = flops_report(&ModelConfig::default(), [1, 1, 512, 512])?;
    print!("{}", report.to_table());
    let (s, a) = (report.total_scan(), report.total_attention());
    println!("scan total {:.3} G, attention total {:.3} G", s as f64 / 1e9, a as f64 / 1e9);
    Ok(())
}
