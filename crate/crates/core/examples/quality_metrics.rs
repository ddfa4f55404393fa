//! EN, SD, SF, MI and AG on analytic test patterns.

use diffmf::metrics::{avg_gradient, entropy, format_table, spatial_frequency, std_dev, MetricsRow, Plane};

fn main() -> diffmf::Result<()> {
    let uniform = Plane::from_fn(16, 16, |x, y| (y * 16 + x) as f64);
    let checker = Plane::from_fn(8, 8, |x, y| ((x + y) % 2) as f64);
    let ramp = Plane::from_fn(8, 8, |x, _| x as f64);
    println!("EN(uniform 256 levels) = {}", entropy(&uniform));
    println!("SD(uniform)            = {:.4}", std_dev(&uniform));
    println!("SF(checkerboard)       = {:.6}", spatial_frequency(&checker)?);
    println!("AG(unit ramp)          = {:.6}", avg_gradient(&ramp)?);
    let row = MetricsRow::evaluate("uniform", &uniform, &uniform, &uniform)?;
    print!("{}", format_table(&[row]));
    Ok(())
}
