//! Pendulum tracking with the true dynamics and with a crude surrogate.

use tssl::datagen::PendulumAcceleration;
use tssl::models::FnSurrogate;
use tssl::tasks::{tracking_optimize, tracking_output_error, TrackingConfig};

fn main() -> tssl::Result<()> {
    let cfg = TrackingConfig::default();
    let exact = tracking_optimize(&PendulumAcceleration, &cfg)?;
    println!("true model: cost {:.6e} after {} accepted steps", exact.cost, exact.cost_history.len());

    // small-angle linearization with no damping
    let linear = FnSurrogate::new(3, 1, |x: &[f64], o: &mut [f64]| {
        let s = x[0] - std::f64::consts::PI;
        o[0] = 0.981 * s + x[2];
    });
    let approx = tracking_optimize(&linear, &cfg)?;
    let gap = tracking_output_error(&approx.controls, &exact.controls, &cfg)?;
    println!("linearized: predicted cost {:.6e}, true cost gap {gap:.6e}", approx.cost);
    println!("first controls {:?}", &approx.controls[..4]);
    Ok(())
}
