//! Runs the finite-difference gradient suite and prints one row per case.
//!
//! `cargo run --release --example gradient_check [substring]` restricts the
//! run to cases whose name contains the substring.

use diffmf::pipeline::gradsuite::{format_suite, run_gradient_suite};

fn main() -> diffmf::Result<()> {
    let filter = std::env::args().nth(1).unwrap_or_default();
    let results = run_gradient_suite(|name| name.contains(&filter))?;
    print!("{}", format_suite(&results));
    let failed = results.iter().filter(|r| !r.passes()).count();
    println!("{} cases, {failed} failed", results.len());
    Ok(())
}
