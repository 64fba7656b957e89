//! One Lorenz seed at desk scale: MSE against task-specific training on a
//! 25-step rollout. Pass a seed as the first argument.

use tssl::experiment::{evaluate, generate_dataset, preset, train_arm, ExperimentKind, Method};

fn main() -> tssl::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = preset(ExperimentKind::Lorenz);
    let data = generate_dataset(&cfg, seed)?;
    let arm = train_arm(&cfg, &data, Method::TaskSpecific, seed)?;
    let mse = evaluate(&cfg, &data, &arm.mse_model, "mse", seed)?;
    let ts = evaluate(&cfg, &data, &arm.model, "ts", seed)?;
    for r in [&mse, &ts] {
        println!("{:3}  J_A {:.4e}  R_S {:.4e}  R_SN {:.4e}", r.method, r.output_error, r.support_error, r.estimated_support_error);
    }
    println!("ratio {:.3}  ({} iterations, {:.1}s)", ts.output_error / mse.output_error, arm.records.len(), arm.seconds);
    Ok(())
}
