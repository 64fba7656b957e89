//! Affine fit of x ↦ -|x| used in an Euler rollout from x0 = 1.
//!
//! MSE lands on the constant -1/2; task-specific training finds the slope
//! that matches the rollout, which only visits x > 0.

use tssl::experiment::{evaluate, generate_dataset, preset, train_arm, ExperimentKind, Method};

fn main() -> tssl::Result<()> {
    let cfg = preset(ExperimentKind::Example2);
    let data = generate_dataset(&cfg, 0)?;
    for method in [Method::Mse, Method::TaskSpecific] {
        let arm = train_arm(&cfg, &data, method, 0)?;
        let (c, s) = arm.model.polynomial_affine_coefficients().expect("affine model");
        let row = evaluate(&cfg, &data, &arm.model, method.as_str(), 0)?;
        println!(
            "{:3}  f(x) = {c:+.4} {:+.4} x   J_A = {:.3e}  R_S = {:.3e}",
            method.as_str(),
            s[0],
            row.output_error,
            row.support_error
        );
    }
    // closed form for the MSE model: J_A² = Σ_j (1 - jτ/2 - (1-τ)^j)²
    let tau = 0.1;
    let closed: f64 = (1..=20).map(|j| (1.0 - j as f64 * tau / 2.0 - (1.0 - tau).powi(j)).powi(2)).sum();
    println!("closed-form J_A(mse) = {:.3e}", closed.sqrt());
    Ok(())
}
