//! Sample coefficients for a two-point support on 1D data.

use tssl::datagen::Dataset;
use tssl::models::FnSurrogate;
use tssl::points::Points;
use tssl::weighting::{reweighting_coefficients, WeightingConfig};

fn main() -> tssl::Result<()> {
    let xs: Vec<f64> = (0..200).map(|i| -1.0 + 2.0 * i as f64 / 199.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
    let cfg = WeightingConfig::uniform_variance(0.01)?;
    let data = Dataset::new(Points::from_scalars(&xs), Points::from_scalars(&ys))?.with_densities(cfg.kernel_rho)?;

    // a model that is good near 0 and poor near 1
    let model = FnSurrogate::new(1, 1, |x: &[f64], o: &mut [f64]| o[0] = x[0]);
    let support = Points::from_scalars(&[0.0, 0.9]);
    let state = reweighting_coefficients(&data, &model, &support, &cfg)?;

    println!("estimated errors {:?}", state.support_errors);
    println!("emphasis         {:?}", state.emphasis);
    println!("R_N {:.4e}  R_SN {:.4e}", state.risk_rn, state.metric_rsn);
    let top = state
        .sample_coefficients
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| xs[i])
        .unwrap();
    println!("heaviest sample at x = {top:.3}");
    Ok(())
}
