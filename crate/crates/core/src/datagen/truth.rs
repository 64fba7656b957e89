//! Ground-truth maps for the three reference problems.

use crate::models::Surrogate;

pub const LORENZ_RHO: f64 = 28.0;
pub const LORENZ_SIGMA: f64 = 10.0;
pub const LORENZ_BETA: f64 = 8.0 / 3.0;

pub const GRAVITY: f64 = 9.81;
pub const PENDULUM_LENGTH: f64 = 10.0;
pub const DRAG_COEFF: f64 = 0.01;
pub const FRICTION_COEFF: f64 = 0.01;

#[inline]
pub fn lorenz_rhs(x: &[f64]) -> [f64; 3] {
    [
        LORENZ_SIGMA * (x[1] - x[0]),
        x[0] * (LORENZ_RHO - x[2]) - x[1],
        x[0] * x[1] - LORENZ_BETA * x[2],
    ]
}

/// Time-`tau` flow of the Lorenz system by classical RK4 with `substeps` steps.
pub fn lorenz_flow_map(x: &[f64], tau: f64, substeps: usize) -> [f64; 3] {
    assert!(substeps >= 1, "at least one substep");
    let h = tau / substeps as f64;
    let mut s = [x[0], x[1], x[2]];
    for _ in 0..substeps {
        let k1 = lorenz_rhs(&s);
        let k2 = lorenz_rhs(&axpy(&s, 0.5 * h, &k1));
        let k3 = lorenz_rhs(&axpy(&s, 0.5 * h, &k2));
        let k4 = lorenz_rhs(&axpy(&s, h, &k3));
        for i in 0..3 {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    s
}

#[inline]
fn axpy(x: &[f64; 3], a: f64, y: &[f64; 3]) -> [f64; 3] {
    [x[0] + a * y[0], x[1] + a * y[1], x[2] + a * y[2]]
}

/// Angular acceleration of the pendulum on a cart; `sgn(0) = 0`.
#[inline]
pub fn pendulum_acceleration(x1: f64, x2: f64, u: f64) -> f64 {
    let sgn = if x2 > 0.0 {
        1.0
    } else if x2 < 0.0 {
        -1.0
    } else {
        0.0
    };
    -(GRAVITY / PENDULUM_LENGTH) * x1.sin() - u * x1.cos() - (DRAG_COEFF / PENDULUM_LENGTH) * x2 * x2.abs()
        - FRICTION_COEFF * sgn
}

/// Three-dimensional double-well energy and its gradient.
pub fn energy_and_gradient(x: &[f64]) -> (f64, [f64; 3]) {
    let (a, b, c) = (x[0], x[1], x[2]);
    let (a2, b2) = (a * a, b * b);
    let e = (a2 - 1.0).powi(2) + 0.25 * (b2 - 1.0).powi(2) + 0.5 * c * c + a2 * b2
        + 0.1 * (a2 * a - 3.0 * a + b2 * b + 3.0 * b * (1.0 - a2));
    let ga = 4.0 * a * (a2 - 1.0) + 2.0 * a * b2 + 0.1 * (3.0 * a2 - 3.0 - 6.0 * a * b);
    let gb = b * (b2 - 1.0) + 2.0 * a2 * b + 0.1 * (3.0 * b2 + 3.0 * (1.0 - a2));
    (e, [ga, gb, c])
}

pub fn energy(x: &[f64]) -> f64 {
    energy_and_gradient(x).0
}

/// Lorenz flow map as a surrogate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LorenzFlowMap {
    pub tau: f64,
    pub substeps: usize,
}

impl Default for LorenzFlowMap {
    fn default() -> Self {
        Self { tau: 0.01, substeps: 10 }
    }
}

impl Surrogate for LorenzFlowMap {
    fn input_dim(&self) -> usize {
        3
    }
    fn output_dim(&self) -> usize {
        3
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&lorenz_flow_map(x, self.tau, self.substeps));
    }
}

/// Pendulum angular acceleration as a map `(x1, x2, u) -> f`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PendulumAcceleration;

impl Surrogate for PendulumAcceleration {
    fn input_dim(&self) -> usize {
        3
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = pendulum_acceleration(x[0], x[1], x[2]);
    }
}

/// `-∇E` of the double-well energy.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NegEnergyGradient;

impl Surrogate for NegEnergyGradient {
    fn input_dim(&self) -> usize {
        3
    }
    fn output_dim(&self) -> usize {
        3
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let (_, g) = energy_and_gradient(x);
        for i in 0..3 {
            out[i] = -g[i];
        }
    }
}

/// `x ↦ -a|x|` on the real line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NegAbsolute {
    pub slope: f64,
}

impl Surrogate for NegAbsolute {
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = -self.slope * x[0].abs();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    #[test]
    fn origin_is_fixed() {
        assert_eq!(lorenz_flow_map(&[0.0; 3], 0.01, 10), [0.0; 3]);
    }

    #[test]
    fn nontrivial_fixed_point() {
        // x1 = x2, x3 = ρ - 1, x1² = β(ρ - 1) = 72
        let c = 72f64.sqrt();
        let x = [c, c, 27.0];
        let out = lorenz_flow_map(&x, 0.01, 10);
        let drift: f64 = out.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(drift < 1e-9, "{drift}");
    }

    #[test]
    fn substep_refinement_converges() {
        let mut rng = SeedStream::new(4);
        for _ in 0..5 {
            let x = [rng.uniform_in(-20.0, 20.0), rng.uniform_in(-20.0, 20.0), rng.uniform_in(5.0, 45.0)];
            let a = lorenz_flow_map(&x, 0.01, 10);
            let b = lorenz_flow_map(&x, 0.01, 100);
            let d: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            let scale = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
            assert!(d < 1e-9 * scale, "{d}");
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let x = [1.0, 1.0, 20.0];
        let tau = 0.05;
        let reference = lorenz_flow_map(&x, tau, 4000);
        let err = |n| {
            let y = lorenz_flow_map(&x, tau, n);
            y.iter().zip(&reference).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
        };
        let ratio = err(8) / err(16);
        assert!((ratio - 16.0).abs() < 1.5, "ratio {ratio}");
    }

    #[test]
    fn pendulum_values() {
        assert_eq!(pendulum_acceleration(0.0, 0.0, 0.0), 0.0);
        assert!((pendulum_acceleration(std::f64::consts::FRAC_PI_2, 0.0, 0.0) + 0.981).abs() < 1e-15);
        assert!((pendulum_acceleration(std::f64::consts::PI, 1.0, 2.0) - 1.989).abs() < 1e-12);
    }

    #[test]
    fn energy_minima() {
        let (ea, ga) = energy_and_gradient(&[1.0, 0.0, 0.0]);
        let (eb, gb) = energy_and_gradient(&[-1.0, 0.0, 0.0]);
        assert!((ea - 0.05).abs() < 1e-15);
        assert!((eb - 0.45).abs() < 1e-15);
        assert!(ga.iter().chain(&gb).all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn energy_gradient_matches_finite_differences() {
        let mut rng = SeedStream::new(8);
        let h = 1e-5;
        for _ in 0..10 {
            let x = [rng.uniform_in(-1.5, 1.5), rng.uniform_in(-1.5, 1.5), rng.uniform_in(-1.0, 1.0)];
            let (_, g) = energy_and_gradient(&x);
            for k in 0..3 {
                let mut p = x;
                p[k] += h;
                let mut m = x;
                m[k] -= h;
                let fd = (energy(&p) - energy(&m)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-8, "{fd} vs {}", g[k]);
            }
        }
    }
}
