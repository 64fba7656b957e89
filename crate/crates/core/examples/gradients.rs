//! Backpropagated loss gradients against central differences, per model kind.

use tssl::models::{Batch, Model, ModelSpec};
use tssl::points::Points;
use tssl::rng::SeedStream;

fn main() -> tssl::Result<()> {
    let specs = [
        ModelSpec::resnet_flow_map(3, 8, 0.01),
        ModelSpec::scalar_fnn(3, 8),
        ModelSpec::polynomial(3, 1, 2),
        ModelSpec::energy_gradient(8),
    ];
    let mut rng = SeedStream::new(5);
    for spec in specs {
        let model = Model::init(spec, 11)?;
        let mut xs = Points::with_capacity(3, 16);
        let mut ys = Points::with_capacity(spec.output_dim, 16);
        for _ in 0..16 {
            xs.push(&[rng.normal(), rng.normal(), rng.normal()])?;
            let y: Vec<f64> = (0..spec.output_dim).map(|_| rng.normal()).collect();
            ys.push(&y)?;
        }
        let w = vec![1.0; 16];
        let (_, grad) = model.weighted_loss_gradient(Batch::full(&xs, &ys, &w))?;
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let trainable: Vec<usize> =
            spec.layout().iter().filter(|b| !b.is_frozen()).flat_map(|b| b.range()).collect();
        for &k in &trainable {
            let mut plus = model.theta().to_vec();
            let mut minus = plus.clone();
            plus[k] += h;
            minus[k] -= h;
            let lp = model.with_theta(plus)?.weighted_loss(Batch::full(&xs, &ys, &w))?;
            let lm = model.with_theta(minus)?.weighted_loss(Batch::full(&xs, &ys, &w))?;
            let fd = (lp - lm) / (2.0 * h);
            worst = worst.max((fd - grad[k]).abs() / (1e-8 + fd.abs().max(grad[k].abs())));
        }
        println!("{:16} {:4} trainable  worst relative gap {worst:.2e}", spec.kind.as_str(), trainable.len());
    }
    Ok(())
}
