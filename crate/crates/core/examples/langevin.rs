//! Boltzmann samples of the double well at a few temperatures.

use tssl::datagen::{energy, sample, SamplingSpec};

fn main() -> tssl::Result<()> {
    for t in [1.0, 0.2, 0.1] {
        let xs = sample(&SamplingSpec::langevin(t), 20_000, 3)?;
        let mean_e = xs.rows().map(energy).sum::<f64>() / xs.len() as f64;
        let right = xs.rows().filter(|x| x[0] > 0.0).count() as f64 / xs.len() as f64;
        println!("T = {t:<4} mean E = {mean_e:.4}  fraction with x1 > 0: {right:.3}");
    }
    Ok(())
}
