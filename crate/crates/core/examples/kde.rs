//! Density of random 3D points: hashing grid against the direct sum.

use std::time::Instant;

use tssl::kernels::{estimate_density_with, KernelSpec, Summation};
use tssl::points::Points;
use tssl::rng::SeedStream;

fn cloud(n: usize, seed: u64) -> Points {
    let mut rng = SeedStream::new(seed);
    let mut p = Points::with_capacity(3, n);
    for _ in 0..n {
        p.push(&[rng.normal(), rng.normal(), rng.normal()]).unwrap();
    }
    p
}

fn main() -> tssl::Result<()> {
    let sources = cloud(20_000, 1);
    let queries = cloud(2_000, 2);
    let spec = KernelSpec::new(0.05)?;

    let t = Instant::now();
    let grid = estimate_density_with(&sources, &queries, &spec, Summation::Grid)?;
    let t_grid = t.elapsed();
    let t = Instant::now();
    let direct = estimate_density_with(&sources, &queries, &spec, Summation::Direct)?;
    let t_direct = t.elapsed();

    let worst = grid
        .values
        .iter()
        .zip(&direct.values)
        .map(|(g, d)| (g - d).abs() / d.max(1e-300))
        .fold(0.0, f64::max);
    println!("grid   {t_grid:?}");
    println!("direct {t_direct:?}");
    println!("max relative gap {worst:.2e}");
    Ok(())
}
